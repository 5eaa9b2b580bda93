"""
ZIP load and PV capability models.
"""

import numpy as np
import pytest

from errors import DomainError, InfeasibleOperatingPointError, ParameterError
from load_models import (
    DEFAULT_KP,
    DEFAULT_KQ,
    PvInverter,
    ZipCoefficients,
    linear_offset,
    linear_slope,
    pv_reactive_capability,
    pv_reactive_output,
    zip_power_exact,
    zip_power_linearized,
)


def test_default_linear_coefficients():
    """Slope k1 + k2/2 and offset k3 + k2/2 for the default loads."""
    assert linear_slope(DEFAULT_KP) == pytest.approx(0.375)
    assert linear_offset(DEFAULT_KP) == pytest.approx(0.625)
    assert linear_slope(DEFAULT_KQ) == pytest.approx(1.20)
    assert linear_offset(DEFAULT_KQ) == pytest.approx(-0.20)


def test_exact_and_linear_agree_at_nominal_voltage():
    zip_coeffs = ZipCoefficients()
    for c in (zip_coeffs.kp, zip_coeffs.kq):
        assert zip_power_exact(1.0, 0.7, c) == pytest.approx(0.7 * sum(c))
        assert zip_power_linearized(1.0, 0.7, c) == pytest.approx(zip_power_exact(1.0, 0.7, c))


def test_linearization_error_is_quadratic_in_voltage_deviation():
    """|exact - linear| <= |k2| dV^2 / 2 on a dense grid of |dV| <= 0.05."""
    dV = np.linspace(-0.05, 0.05, 1001)
    v = (1.0 + dV) ** 2
    for c in (DEFAULT_KP, DEFAULT_KQ):
        err = np.abs(zip_power_exact(v, 1.0, c) - zip_power_linearized(v, 1.0, c))
        assert np.all(err <= abs(c[1]) * dV ** 2 / 2 + 1e-12)


def test_constant_impedance_load_is_linear_in_v():
    c = (1.0, 0.0, 0.0)
    v = np.array([0.81, 0.9, 1.1])
    np.testing.assert_allclose(zip_power_exact(v, 2.0, c), zip_power_linearized(v, 2.0, c))


def test_zip_requires_positive_voltage():
    with pytest.raises(DomainError):
        zip_power_exact(0.0, 1.0, DEFAULT_KP)
    with pytest.raises(DomainError):
        zip_power_exact(np.array([1.0, -0.1]), 1.0, DEFAULT_KP)


def test_zip_coefficients_must_be_normalized():
    with pytest.raises(ParameterError):
        ZipCoefficients(kp=(0.5, 0.5, 0.5))
    with pytest.raises(ParameterError):
        ZipCoefficients(kp=(1.0, 0.0))
    loose = ZipCoefficients(kp=(0.5, 0.5, 0.5), normalized=False)
    assert loose.slope_p == pytest.approx(0.75)


def test_pv_reactive_capability():
    assert pv_reactive_capability(1.0, 0.6) == pytest.approx(0.8)
    assert pv_reactive_capability(0.5, 0.0) == pytest.approx(0.5)
    np.testing.assert_allclose(pv_reactive_capability(1.0, np.array([0.0, 1.0])), [1.0, 0.0])
    with pytest.raises(InfeasibleOperatingPointError):
        pv_reactive_capability(1.0, 1.2)
    with pytest.raises(DomainError):
        pv_reactive_capability(1.0, -0.1)


def test_pv_reactive_output():
    assert pv_reactive_output(-0.5, 0.8) == pytest.approx(-0.4)
    assert pv_reactive_output(1.0, 0.3) == pytest.approx(0.3)
    with pytest.raises(DomainError):
        pv_reactive_output(1.5, 1.0)


def test_pv_inverter_capacity_nonnegative():
    with pytest.raises(ParameterError):
        PvInverter(s_cap=-1.0)
    assert PvInverter(s_cap=0.0).s_cap == 0.0
