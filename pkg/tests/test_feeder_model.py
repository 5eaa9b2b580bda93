"""
Feeder loading, radiality checks and voltage sensitivities.
"""

import copy
import json

import numpy as np
import pytest

from errors import FeederValidationError, SchemaError
from feeder_model import (
    build_incidence,
    feeder_from_dict,
    lindistflow_recursive,
    load_feeder,
    sensitivities_for,
    three_phase_effective_impedance,
    validate_radial,
    Line,
)


def test_bundled_feeders_are_radial(three_bus, feeder13, two_pv):
    for feeder in (three_bus, feeder13, two_pv):
        report = validate_radial(feeder)
        assert report.ok, report.to_dict()


def test_ieee13_layout(feeder13):
    assert len(feeder13.buses) == 13
    assert len(feeder13.transformers) == 42
    assert {b for b, _ in feeder13.pv_nodes} == {"634", "680", "675"}
    assert len(feeder13.nodes) == 29
    assert feeder13.nodes[0] == ("632", "a")


def test_node_order_is_breadth_first_then_phase(three_bus):
    assert three_bus.nodes == (
        ("2", "a"), ("2", "b"), ("2", "c"), ("3", "a"), ("3", "b"), ("3", "c"),
    )
    assert three_bus.pv_nodes == (("3", "a"), ("3", "b"), ("3", "c"))
    assert three_bus.bus("3").pv.s_cap == pytest.approx(0.5)


def test_cycle_is_reported(feeder_doc):
    doc = copy.deepcopy(feeder_doc)
    doc["lines"].append({"from": "3", "to": "1", "r": doc["lines"][0]["r"], "x": doc["lines"][0]["x"]})
    report = validate_radial(feeder_from_dict(doc))
    kinds = {v.kind for v in report.violations}
    assert not report.ok
    assert "cycle" in kinds
    assert any("|E| ≠ |N|−1" in v.message for v in report.violations)


def test_dangling_endpoint_is_reported(feeder_doc):
    doc = copy.deepcopy(feeder_doc)
    doc["lines"][1]["to"] = "9"
    report = validate_radial(feeder_from_dict(doc))
    assert "dangling endpoint" in {v.kind for v in report.violations}
    with pytest.raises(FeederValidationError):
        build_incidence(feeder_from_dict(doc))


def test_phase_mismatch_is_reported(feeder_doc):
    doc = copy.deepcopy(feeder_doc)
    doc["buses"][1]["phases"] = "ab"
    doc["lines"][0]["r"] = [[0.01, 0, 0], [0, 0.01, 0], [0, 0, 0]]
    doc["lines"][0]["x"] = [[0.02, 0, 0], [0, 0.02, 0], [0, 0, 0]]
    report = validate_radial(feeder_from_dict(doc))
    assert "phase mismatch" in {v.kind for v in report.violations}


def test_asymmetric_impedance_is_reported(feeder_doc):
    doc = copy.deepcopy(feeder_doc)
    doc["lines"][0]["x"] = [[0.02, 0.01, 0], [0, 0.02, 0], [0, 0, 0.02]]
    report = validate_radial(feeder_from_dict(doc))
    assert "impedance" in {v.kind for v in report.violations}


def test_schema_errors_name_the_field(feeder_doc):
    doc = copy.deepcopy(feeder_doc)
    del doc["root"]
    with pytest.raises(SchemaError, match="root"):
        feeder_from_dict(doc)
    doc = copy.deepcopy(feeder_doc)
    doc["buses"][0]["phases"] = "abd"
    with pytest.raises(SchemaError, match="buses.0.phases"):
        feeder_from_dict(doc)


def test_bad_json_reports_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"root": "1",\n  "buses": [}', encoding="utf-8")
    with pytest.raises(SchemaError, match=r"broken.json:2:"):
        load_feeder(path)


def test_incidence_rows_follow_lines(three_bus):
    incidence = build_incidence(three_bus)
    np.testing.assert_array_equal(incidence.A0[:3], np.eye(3))
    np.testing.assert_array_equal(incidence.A0[3:], np.zeros((3, 3)))
    np.testing.assert_array_equal(np.diag(incidence.A), -np.ones(6))
    np.testing.assert_array_equal(incidence.A[3:, :3], np.eye(3))


def test_effective_impedance_rotation():
    """Off-diagonal coupling rotates by 120 degrees between phases."""
    m = 0.004
    x = np.full((3, 3), m)
    np.fill_diagonal(x, 0.01)
    line = Line("1", "2", np.zeros((3, 3)), x)
    r_bar, x_bar = three_phase_effective_impedance(line)
    assert r_bar[0, 1] == pytest.approx(np.sqrt(3) / 2 * m)
    assert x_bar[0, 1] == pytest.approx(-m / 2)
    assert x_bar[0, 0] == pytest.approx(0.01)
    assert r_bar[0, 0] == pytest.approx(0.0)


def test_sensitivities_without_coupling_are_symmetric_positive(feeder_doc):
    sens = sensitivities_for(feeder_from_dict(feeder_doc))
    np.testing.assert_allclose(sens.R, sens.R.T, atol=1e-15)
    assert np.all(np.linalg.eigvalsh(sens.R) > 0)
    np.testing.assert_allclose(sens.v_tilde, np.ones(6))
    # bus 3 sits behind two lines
    assert sens.R[3, 3] == pytest.approx(2 * 0.02)
    assert sens.R[0, 3] == pytest.approx(2 * 0.01)


def test_sensitivities_match_recursive_lindistflow(feeder13):
    sens = sensitivities_for(feeder13)
    rng = np.random.default_rng(3)
    p = -rng.uniform(0.0, 0.5, len(feeder13.nodes))
    q = -rng.uniform(0.0, 0.2, len(feeder13.nodes))
    np.testing.assert_allclose(sens.voltages(p, q), lindistflow_recursive(feeder13, p, q), atol=1e-12)


def _single_phase_line(r, x):
    def matrix(value):
        return [[value, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]

    return feeder_from_dict({
        "root": "0",
        "v0": 1.0,
        "buses": [{"id": "0", "phases": "a"}, {"id": "1", "phases": "a"}],
        "lines": [{"from": "0", "to": "1", "r": matrix(r), "x": matrix(x)}],
    })


def test_single_line_sensitivities():
    sens = sensitivities_for(_single_phase_line(0.01, 0.02))
    assert sens.nodes == (("1", "a"),)
    np.testing.assert_allclose(sens.R, [[0.02]], atol=1e-15)
    np.testing.assert_allclose(sens.X, [[0.04]], atol=1e-15)
    np.testing.assert_allclose(sens.v_tilde, [1.0], atol=1e-15)


def test_zero_impedance_line_carries_head_voltage():
    feeder = _single_phase_line(0.0, 0.0)
    assert validate_radial(feeder).ok
    sens = sensitivities_for(feeder)
    np.testing.assert_array_equal(sens.R, np.zeros((1, 1)))
    np.testing.assert_array_equal(sens.X, np.zeros((1, 1)))
    np.testing.assert_allclose(sens.voltages(np.array([-0.8]), np.array([-0.3])), [1.0], atol=1e-15)


def test_zero_injection_gives_head_voltage(feeder13):
    sens = sensitivities_for(feeder13)
    n = len(feeder13.nodes)
    np.testing.assert_allclose(sens.voltages(np.zeros(n), np.zeros(n)), np.ones(n))


def test_feeder_document_round_trip(tmp_path, feeder_doc):
    path = tmp_path / "feeder.json"
    path.write_text(json.dumps(feeder_doc), encoding="utf-8")
    feeder = load_feeder(path)
    assert feeder.root_id == "1"
    assert feeder.bus_order == ("2", "3")
