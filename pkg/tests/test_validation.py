"""
Power-flow oracle, Monte-Carlo violation rates and the energy comparison.
"""

import json

import numpy as np
import pytest

from dispatch import build_problem, soc_radius, solve_dispatch
from errors import OracleDivergenceError, ParameterError
from feeder_model import feeder_from_dict
from synthetic import moments_from_profile
from validation import (
    build_report,
    energy_report,
    monte_carlo_violation,
    nonlinear_sweep,
    oracle_cross_check,
    reduction_pct,
    save_report,
    truncate_samples,
    two_bus_voltage,
    two_point_samples,
    wilson_interval,
)

FULL_DAY = dict(start_hour=0, horizon=24)


def _single_line(r=0.02, x=0.05):
    def matrix(value):
        return [[value, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]

    return feeder_from_dict({
        "root": "0",
        "buses": [
            {"id": "0", "phases": "a"},
            {"id": "1", "phases": "a", "zip": {"kp": [0.0, 0.0, 1.0], "kq": [0.0, 0.0, 1.0]}},
        ],
        "lines": [{"from": "0", "to": "1", "r": matrix(r), "x": matrix(x)}],
    })


def test_unloaded_feeder_sits_at_head_voltage(feeder13):
    n = len(feeder13.nodes)
    result = nonlinear_sweep(feeder13, np.zeros(n), np.zeros(n))
    np.testing.assert_allclose(result.magnitude, np.ones(n), atol=1e-12)
    assert result.iterations == 1


def test_sweep_matches_two_bus_closed_form():
    feeder = _single_line()
    result = nonlinear_sweep(feeder, np.array([0.8]), np.array([0.3]))
    expected = two_bus_voltage(1.0, 0.02, 0.05, 0.8, 0.3)
    assert result.squared[0] == pytest.approx(expected, abs=1e-8)
    assert expected < 1.0


def test_two_bus_without_solution_diverges():
    with pytest.raises(OracleDivergenceError):
        two_bus_voltage(1.0, 0.5, 1.0, 2.0, 2.0)


def test_overloaded_sweep_raises():
    feeder = _single_line(r=0.5, x=1.0)
    with pytest.raises(OracleDivergenceError):
        nonlinear_sweep(feeder, np.array([2.0]), np.array([2.0]), max_iter=50)


def test_linear_model_tracks_sweep_over_a_day(feeder13):
    moments = moments_from_profile(feeder13, load_level=0.5, **FULL_DAY)
    problem = build_problem(feeder13, moments, "det", **FULL_DAY)
    alpha = np.zeros(problem.layout.g)
    for hp in problem.hours:
        p_l, q_l, p_g, _ = hp.model.split(hp.mu)
        sweep = nonlinear_sweep(feeder13, p_l, q_l, p_g, np.zeros_like(p_g))
        affine = np.sqrt(hp.model.voltages(hp.mu, alpha))
        assert np.max(np.abs(sweep.magnitude - affine)) <= 0.01


def test_oracle_cross_check_reports_gap(drcc13):
    problem, solution = drcc13
    check = oracle_cross_check(problem, solution)
    assert 0.0 <= check.max_discrepancy <= 0.02
    assert check.hour in problem.layout.hours
    assert set(check.to_dict()) == {"max_abs_voltage_discrepancy", "hour", "max_iterations"}


def test_wilson_interval():
    lo, hi = wilson_interval(50, 100)
    assert lo == pytest.approx(0.4038, abs=1e-3)
    assert hi == pytest.approx(0.5962, abs=1e-3)
    assert wilson_interval(0, 1000)[0] == 0.0
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_truncation_clips_multipliers(two_pv):
    problem = build_problem(two_pv, moments_from_profile(two_pv, horizon=1, start_hour=12), "det",
                            start_hour=12, horizon=1)
    xi = np.array([[1.5, -0.1, 0.2, 2.0, -0.3, 0.1, 0.2, -1.0]])
    out = truncate_samples(problem.hours[0].model, xi)
    np.testing.assert_allclose(out, [[1.0, 0.0, 0.2, 1.0, 0.0, 0.1, 0.2, 0.0]])


def test_deterministic_moments_never_violate(feeder13, moments13):
    problem = build_problem(feeder13, moments13.with_zero_covariance(), "drcc", epsilon=0.05, **FULL_DAY)
    solution = solve_dispatch(problem)
    report = monte_carlo_violation(problem, solution, n=1000, seed=1)
    assert report.max_rate == 0.0
    assert report.realized["max_mean_shift"] == pytest.approx(0.0, abs=1e-12)


def _binding_targets(solution, floor=-1e-6):
    return [(t, int(k)) for t, s in enumerate(solution.slacks) for k in np.flatnonzero(-s >= floor)]


def test_gaussian_report_covers_every_row(drcc13):
    problem, solution = drcc13
    report = monte_carlo_violation(problem, solution, n=10000, seed=3, workers=2)
    assert report.samples == 10000
    assert len(report.rows) == sum(len(hp.rows) for hp in problem.hours)
    assert _binding_targets(solution)
    assert report.max_rate <= 0.05
    assert report.worst.ci95[1] <= 0.05 + 0.01


@pytest.mark.parametrize("eps", [0.02, 0.05, 0.1])
def test_gaussian_violations_stay_below_epsilon(two_pv, evening_two_pv, eps):
    moments, v_floor = evening_two_pv
    problem = build_problem(two_pv, moments, "drcc", epsilon=eps, v_min=v_floor, start_hour=19, horizon=1)
    solution = solve_dispatch(problem)
    assert solution.status == "optimal"
    assert _binding_targets(solution)
    report = monte_carlo_violation(problem, solution, n=20000, seed=11)
    assert report.max_rate <= eps
    assert report.worst.ci95[1] <= eps + 0.01


def test_monte_carlo_is_reproducible(drcc13):
    problem, solution = drcc13
    first = monte_carlo_violation(problem, solution, n=3000, seed=9, workers=1, block=1000)
    second = monte_carlo_violation(problem, solution, n=3000, seed=9, workers=3, block=1000)
    assert [r.count for r in first.rows] == [r.count for r in second.rows]
    assert [r.exact_count for r in first.rows] == [r.exact_count for r in second.rows]


def test_monte_carlo_arguments(drcc13):
    problem, solution = drcc13
    with pytest.raises(ParameterError):
        monte_carlo_violation(problem, solution, n=999)
    with pytest.raises(ParameterError):
        monte_carlo_violation(problem, solution, family="cauchy")


def test_two_point_family_attains_epsilon(drcc13):
    """A row tight at mean + kappa * std is violated with probability epsilon."""
    problem, _ = drcc13
    hp = problem.hours[0]
    eps = 0.05
    rng = np.random.default_rng(4)
    a = rng.standard_normal(hp.mu.size)
    s = np.linalg.norm(hp.sqrt_cov @ a)
    b = -a @ hp.mu - soc_radius(eps) * s
    xi = two_point_samples(hp.mu, hp.sqrt_cov, a, b, 100000, rng)
    rate = np.mean(xi @ a + b > 1e-7)
    assert eps - 0.01 <= rate <= eps
    projection = (xi - hp.mu) @ a / s
    assert abs(projection.mean()) < 0.01
    assert projection.var() == pytest.approx(1.0, abs=0.02)


def test_two_point_on_binding_rows(drcc13):
    """The extremal two-point law reaches epsilon on every tight row and never exceeds it."""
    problem, solution = drcc13
    targets = _binding_targets(solution)
    assert targets
    report = monte_carlo_violation(problem, solution, family="two_point", n=100000, seed=2, targets=targets)
    assert len(report.rows) == len(targets)
    for row in report.rows:
        assert 0.05 - 0.01 <= row.rate <= 0.05 + 1e-4


def test_energy_report(feeder13, moments13):
    report = energy_report(feeder13, moments13, epsilon=0.05, epsilons=(0.05, 0.1), **FULL_DAY)
    base = report.mode("Base")
    assert base.reduction_pct == 0.0
    for m in report.modes + report.epsilon_table:
        assert m.status == "optimal"
        assert m.energy_kwh <= report.base_kwh + 1e-6
    assert report.mode("DRCC").energy_kwh > report.mode("Deter").energy_kwh + 0.1
    assert report.mode("DRCC eps=0.1").energy_kwh <= report.mode("DRCC eps=0.05").energy_kwh + 1e-6
    table = report.format_table()
    assert "RO (variance)" in table and "Reduction" in table


def test_reduction_pct():
    assert reduction_pct(100.0, 97.5) == pytest.approx(2.5)
    assert reduction_pct(0.0, 1.0) is None
    assert reduction_pct(100.0, None) is None


def test_report_keeps_timing_separate(tmp_path, drcc13):
    problem, solution = drcc13
    violations = monte_carlo_violation(problem, solution, n=1000, seed=0)
    report = build_report(violations=violations, seeds={"monte_carlo": 0})
    path = tmp_path / "report.json"
    save_report(path, report, timing={"validate_ms": 12.0})
    document = json.loads(path.read_text())
    assert document["timing"] == {"validate_ms": 12.0}
    assert document["seeds"] == {"monte_carlo": 0}
    assert document["monte_carlo"]["family"] == "gaussian"
    assert len(document["violations"]) == len(violations.rows)
