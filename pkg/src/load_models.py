"""
Voltage-dependent ZIP loads and PV inverter reactive capability.

All quantities are per-unit; voltages enter as squared magnitudes v = |V|^2.
"""

from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np

from errors import DomainError, InfeasibleOperatingPointError, ParameterError

ArrayLike = Union[float, np.ndarray]

DEFAULT_KP: Tuple[float, float, float] = (0.96, -1.17, 1.21)
DEFAULT_KQ: Tuple[float, float, float] = (6.28, -10.16, 4.88)
NORMALIZATION_TOLERANCE = 0.05


@dataclass(frozen=True)
class ZipCoefficients:
    """Constant-impedance, constant-current and constant-power shares (k1, k2, k3)."""

    kp: Tuple[float, float, float] = DEFAULT_KP
    kq: Tuple[float, float, float] = DEFAULT_KQ
    normalized: bool = True

    def __post_init__(self):
        for name in ("kp", "kq"):
            triple = tuple(float(k) for k in getattr(self, name))
            if len(triple) != 3:
                raise ParameterError(f"{name} must have three coefficients, got {len(triple)}")
            object.__setattr__(self, name, triple)
            if self.normalized and abs(sum(triple) - 1.0) > NORMALIZATION_TOLERANCE:
                raise ParameterError(
                    f"{name} coefficients sum to {sum(triple):.4f}, expected 1 within {NORMALIZATION_TOLERANCE}"
                )

    @property
    def slope_p(self) -> float:
        return linear_slope(self.kp)

    @property
    def offset_p(self) -> float:
        return linear_offset(self.kp)

    @property
    def slope_q(self) -> float:
        return linear_slope(self.kq)

    @property
    def offset_q(self) -> float:
        return linear_offset(self.kq)


@dataclass(frozen=True)
class PvInverter:
    """Inverter with per-phase apparent-power capacity s_cap (per-unit)."""

    s_cap: float
    phases: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not np.isfinite(self.s_cap) or self.s_cap < 0:
            raise ParameterError(f"s_cap must be a finite nonnegative number, got {self.s_cap}")


def linear_slope(c: Tuple[float, float, float]) -> float:
    """Coefficient of v in the linearized ZIP model: k1 + k2/2."""
    return c[0] + c[1] / 2.0


def linear_offset(c: Tuple[float, float, float]) -> float:
    """Constant term of the linearized ZIP model: k3 + k2/2."""
    return c[2] + c[1] / 2.0


def zip_power_exact(v: ArrayLike, m: ArrayLike, c: Tuple[float, float, float]) -> ArrayLike:
    """m * (k1*v + k2*sqrt(v) + k3) for squared voltage v > 0."""
    v_arr = np.asarray(v, dtype=float)
    if np.any(~np.isfinite(v_arr)) or np.any(v_arr <= 0):
        raise DomainError("squared voltage must be positive", {"v": np.atleast_1d(v_arr).tolist()[:5]})
    result = np.asarray(m, dtype=float) * (c[0] * v_arr + c[1] * np.sqrt(v_arr) + c[2])
    return float(result) if np.ndim(result) == 0 else result


def zip_power_linearized(v: ArrayLike, m: ArrayLike, c: Tuple[float, float, float]) -> ArrayLike:
    """Binomial linearization around 1 p.u.: m * ((k1 + k2/2)*v + (k3 + k2/2))."""
    result = np.asarray(m, dtype=float) * (linear_slope(c) * np.asarray(v, dtype=float) + linear_offset(c))
    return float(result) if np.ndim(result) == 0 else result


def pv_reactive_capability(s_cap: ArrayLike, p_g: ArrayLike) -> ArrayLike:
    """Available reactive capacity sqrt(s_cap^2 - p_g^2)."""
    s = np.asarray(s_cap, dtype=float)
    p = np.asarray(p_g, dtype=float)
    if np.any(p < 0):
        raise DomainError("PV active output must be nonnegative")
    if np.any(p > s):
        raise InfeasibleOperatingPointError(
            "PV active output exceeds inverter capacity",
            {"s_cap": np.atleast_1d(s).tolist()[:5], "p_g": np.atleast_1d(p).tolist()[:5]},
        )
    result = np.sqrt(np.maximum(s * s - p * p, 0.0))
    return float(result) if np.ndim(result) == 0 else result


def pv_reactive_output(alpha_q: ArrayLike, q_cap: ArrayLike) -> ArrayLike:
    """Reactive output alpha_q * q_cap, alpha_q in [-1, 1]."""
    a = np.asarray(alpha_q, dtype=float)
    if np.any(a < -1.0) or np.any(a > 1.0):
        raise DomainError("alpha_q must lie in [-1, 1]", {"alpha_q": np.atleast_1d(a).tolist()[:5]})
    result = a * np.asarray(q_cap, dtype=float)
    return float(result) if np.ndim(result) == 0 else result
