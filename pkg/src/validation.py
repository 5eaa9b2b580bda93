"""
Independent checks of a dispatch: a nonlinear forward/backward sweep oracle,
Monte-Carlo violation rates under several distribution families, and the
energy comparison of base case, deterministic, robust and DRCC dispatch.
"""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from dispatch import (
    DispatchProblem,
    DispatchSolution,
    SolverSettings,
    base_case_solution,
    build_problem,
    solve_dispatch,
)
from errors import CvrError, DomainError, OracleDivergenceError, ParameterError
from feeder_model import PHASE_INDEX, Feeder
from load_models import zip_power_exact
from moments import MomentAmbiguitySet

logger = structlog.get_logger(__name__)

SWEEP_TOLERANCE = 1e-10
SWEEP_MAX_ITER = 200
MIN_SAMPLES = 1000
DEFAULT_BLOCK = 2500
VIOLATION_TOLERANCE = 1e-7
WILSON_Z = 1.959963984540054
FAMILIES = ("gaussian", "two_point")
DEFAULT_EPSILONS = (0.02, 0.05, 0.1)


# Nonlinear oracle

@dataclass
class SweepResult:
    voltages: np.ndarray
    iterations: int

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.voltages)

    @property
    def squared(self) -> np.ndarray:
        return np.abs(self.voltages) ** 2


def _root_phasors(feeder: Feeder) -> np.ndarray:
    angles = np.deg2rad([0.0, -120.0, 120.0])
    return np.sqrt(feeder.v0) * np.exp(1j * angles)


def nonlinear_sweep(
    feeder: Feeder,
    p_l: np.ndarray,
    q_l: np.ndarray,
    p_g: Optional[np.ndarray] = None,
    q_g: Optional[np.ndarray] = None,
    tolerance: float = SWEEP_TOLERANCE,
    max_iter: int = SWEEP_MAX_ITER,
) -> SweepResult:
    """Three-phase forward/backward sweep with exact ZIP loads.

    ``p_l``/``q_l`` are load multipliers in node order; ``p_g``/``q_g`` are
    PV injections in PV-node order.
    """
    nodes = feeder.nodes
    index = feeder.node_index
    n = len(nodes)
    injection = np.zeros(n, dtype=complex)
    if p_g is not None:
        for k, node in enumerate(feeder.pv_nodes):
            injection[index[node]] += p_g[k] + 1j * (0.0 if q_g is None else q_g[k])

    zip_p = [feeder.bus(b).zip.kp for b, _ in nodes]
    zip_q = [feeder.bus(b).zip.kq for b, _ in nodes]
    root = _root_phasors(feeder)
    V = np.array([root[PHASE_INDEX[p]] for _, p in nodes])
    children: Dict[str, List[str]] = {}
    for line in feeder.lines:
        children.setdefault(line.from_id, []).append(line.to_id)
    rows = {b: [index[(b, p)] for p in feeder.bus(b).phases] for b in feeder.bus_order}

    for iteration in range(1, max_iter + 1):
        v_sq = np.abs(V) ** 2
        try:
            load = np.array([
                zip_power_exact(v_sq[k], p_l[k], zip_p[k]) + 1j * zip_power_exact(v_sq[k], q_l[k], zip_q[k])
                for k in range(n)
            ])
        except DomainError as e:
            raise OracleDivergenceError(f"sweep left the load-model domain at iteration {iteration}") from e
        current = np.conj((load - injection) / V)

        branch: Dict[str, np.ndarray] = {}
        for bus_id in reversed(feeder.bus_order):
            phases = feeder.bus(bus_id).phases
            total = current[rows[bus_id]].copy()
            for child in children.get(bus_id, ()):
                for k, ph in enumerate(feeder.bus(child).phases):
                    total[phases.index(ph)] += branch[child][k]
            branch[bus_id] = total

        updated = V.copy()
        for bus_id in feeder.bus_order:
            upstream = feeder.parent[bus_id]
            phases = feeder.bus(bus_id).phases
            idx = [PHASE_INDEX[p] for p in phases]
            line = feeder.line_into[bus_id]
            Z = (line.r + 1j * line.x)[np.ix_(idx, idx)]
            head = root[idx] if upstream == feeder.root_id else updated[[index[(upstream, p)] for p in phases]]
            updated[rows[bus_id]] = head - Z @ branch[bus_id]

        if not np.all(np.isfinite(updated)):
            raise OracleDivergenceError(f"sweep produced non-finite voltages at iteration {iteration}")
        change = float(np.max(np.abs(updated - V))) if n else 0.0
        V = updated
        if change < tolerance:
            return SweepResult(V, iteration)
    raise OracleDivergenceError(
        f"sweep did not converge in {max_iter} iterations", {"last_change": change}
    )


def two_bus_voltage(v1: float, r: float, x: float, p: float, q: float) -> float:
    """Squared receiving-end voltage of one line feeding a constant-power load."""
    b = v1 - 2.0 * (r * p + x * q)
    disc = b * b - 4.0 * (r * r + x * x) * (p * p + q * q)
    if disc < 0:
        raise OracleDivergenceError("no power-flow solution for the two-bus load")
    return 0.5 * (b + np.sqrt(disc))


@dataclass
class OracleCheck:
    max_discrepancy: float
    hour: Optional[int]
    iterations: int

    def to_dict(self) -> Dict[str, Any]:
        return {"max_abs_voltage_discrepancy": self.max_discrepancy, "hour": self.hour,
                "max_iterations": self.iterations}


def oracle_cross_check(problem: DispatchProblem, solution: DispatchSolution) -> OracleCheck:
    """Largest |V| gap between the sweep and the affine model at the mean."""
    worst, worst_hour, iterations = 0.0, None, 0
    for t, hp in enumerate(problem.hours):
        alpha = solution.alpha[t]
        p_l, q_l, p_g, q_cap = hp.model.split(hp.mu)
        sweep = nonlinear_sweep(problem.feeder, p_l, q_l, p_g, alpha * q_cap)
        affine = np.sqrt(np.clip(hp.model.voltages(hp.mu, alpha), 0.0, None))
        gap = float(np.max(np.abs(sweep.magnitude - affine))) if affine.size else 0.0
        iterations = max(iterations, sweep.iterations)
        if gap >= worst:
            worst, worst_hour = gap, hp.hour
    logger.info("oracle cross-check", max_discrepancy=worst, hour=worst_hour, iterations=iterations)
    return OracleCheck(worst, worst_hour, iterations)


# Monte Carlo

def wilson_interval(count: int, n: int, z: float = WILSON_Z) -> Tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    p = count / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return float(max(0.0, center - half)), float(min(1.0, center + half))


@dataclass
class RowViolation:
    bus: str
    phase: str
    hour: int
    side: str
    count: int
    samples: int
    exact_count: Optional[int] = None

    @property
    def rate(self) -> float:
        return self.count / self.samples

    @property
    def ci95(self) -> Tuple[float, float]:
        return wilson_interval(self.count, self.samples)

    @property
    def exact_rate(self) -> Optional[float]:
        return None if self.exact_count is None else self.exact_count / self.samples

    def to_dict(self) -> Dict[str, Any]:
        out = {"bus": self.bus, "phase": self.phase, "hour": self.hour, "side": self.side,
               "rate": self.rate, "ci95": list(self.ci95)}
        if self.exact_count is not None:
            out["exact_rate"] = self.exact_rate
        return out


@dataclass
class ViolationReport:
    family: str
    samples: int
    seed: int
    rows: List[RowViolation]
    realized: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    @property
    def max_rate(self) -> float:
        return max((r.rate for r in self.rows), default=0.0)

    @property
    def max_exact_rate(self) -> float:
        return max((r.exact_rate or 0.0 for r in self.rows), default=0.0)

    @property
    def worst(self) -> Optional[RowViolation]:
        return max(self.rows, key=lambda r: r.rate, default=None)

    def to_dict(self) -> Dict[str, Any]:
        worst = self.worst
        return {
            "family": self.family,
            "samples": self.samples,
            "seed": self.seed,
            "max_rate": self.max_rate,
            "max_exact_rate": self.max_exact_rate,
            "worst": worst.to_dict() if worst else None,
            "violations": [r.to_dict() for r in self.rows],
            "realized_moments": self.realized,
            "warnings": self.warnings,
        }


def truncate_samples(model, xi: np.ndarray) -> np.ndarray:
    """Clip load multipliers to [0, 1] and PV quantities to >= 0."""
    n = model.n
    out = xi.copy()
    out[:, :2 * n] = np.clip(out[:, :2 * n], 0.0, 1.0)
    out[:, 2 * n:] = np.clip(out[:, 2 * n:], 0.0, None)
    return out


@dataclass
class _Tally:
    rows: List[np.ndarray]
    exact: List[np.ndarray]
    sums: List[np.ndarray]
    squares: List[np.ndarray]


def _row_nodes(problem: DispatchProblem, position: int) -> Tuple[np.ndarray, np.ndarray]:
    tags = problem.hours[position].rows.tags
    index = problem.feeder.node_index
    nodes = np.array([index[(bus, phase)] for bus, phase, _, _ in tags], dtype=int)
    upper = np.array([side == "upper" for _, _, _, side in tags])
    return nodes, upper


def _gaussian_block(problem: DispatchProblem, solution: DispatchSolution, seed: np.random.SeedSequence,
                    size: int, tolerance: float) -> _Tally:
    rng = np.random.default_rng(seed)
    tally = _Tally([], [], [], [])
    for t, hp in enumerate(problem.hours):
        alpha = solution.alpha[t]
        z = rng.standard_normal((size, hp.mu.size))
        xi = truncate_samples(hp.model, hp.mu + z @ hp.sqrt_cov)
        values = hp.rows.values(xi, alpha)
        tally.rows.append(np.count_nonzero(values > tolerance, axis=0))
        v = hp.model.voltages(xi, alpha)
        nodes, upper = _row_nodes(problem, t)
        outside = np.where(upper[None, :], v[:, nodes] > problem.v_max + tolerance,
                           v[:, nodes] < problem.v_min - tolerance)
        tally.exact.append(np.count_nonzero(outside, axis=0))
        tally.sums.append(xi.sum(axis=0))
        tally.squares.append((xi ** 2).sum(axis=0))
    return tally


def _block_sizes(n: int, block: int) -> List[int]:
    full, rest = divmod(n, block)
    return [block] * full + ([rest] if rest else [])


def _gaussian_report(problem: DispatchProblem, solution: DispatchSolution, n: int, seed: int,
                     workers: int, block: int, tolerance: float) -> ViolationReport:
    sizes = _block_sizes(n, block)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        tallies = list(pool.map(lambda args: _gaussian_block(problem, solution, args[0], args[1], tolerance),
                                zip(seeds, sizes)))

    rows, warnings = [], []
    mean_shift, var_ratio = 0.0, 0.0
    for t, hp in enumerate(problem.hours):
        counts = sum(tl.rows[t] for tl in tallies)
        exact = sum(tl.exact[t] for tl in tallies)
        for k, (bus, phase, hour, side) in enumerate(hp.rows.tags):
            rows.append(RowViolation(bus, phase, hour, side, int(counts[k]), n, int(exact[k])))
        mean = sum(tl.sums[t] for tl in tallies) / n
        var = sum(tl.squares[t] for tl in tallies) / n - mean ** 2
        target = np.diag(hp.cov)
        mean_shift = max(mean_shift, float(np.max(np.abs(mean - hp.mu), initial=0.0)))
        spread = target > 0
        if np.any(spread):
            var_ratio = max(var_ratio, float(np.max(np.abs(var[spread] / target[spread] - 1.0))))
    if var_ratio > 0.1:
        warnings.append(f"truncation to the multiplier box changed variances by up to {var_ratio:.1%}")
    for message in warnings:
        logger.warning("monte carlo", message=message)
    return ViolationReport("gaussian", n, seed, rows,
                           {"max_mean_shift": mean_shift, "max_relative_variance_change": var_ratio}, warnings)


def _binding_rows(problem: DispatchProblem, solution: DispatchSolution) -> List[Tuple[int, int]]:
    kappa = problem.kappa
    targets = []
    for t, hp in enumerate(problem.hours):
        values = hp.row_values(solution.alpha[t], problem.mode, kappa)
        if values.size:
            targets.append((t, int(np.argmax(values))))
    return targets


def two_point_samples(mu: np.ndarray, sqrt_cov: np.ndarray, a: np.ndarray, b: float, n: int,
                      rng: np.random.Generator, tolerance: float = VIOLATION_TOLERANCE) -> np.ndarray:
    """Samples with moments (mu, S S) whose projection on a is the Cantelli extremizer.

    Along u = S a / |S a| the standardized component takes tau (just past the
    row's zero) with probability 1 / (1 + tau^2) and -1/tau otherwise; the
    orthogonal complement is Gaussian.
    """
    Sa = sqrt_cov @ a
    s = float(np.linalg.norm(Sa))
    dim = mu.size
    if s == 0.0:
        return np.tile(mu, (n, 1))
    u = Sa / s
    m = float(a @ mu + b)
    tau = -m / s
    if tau <= 0:
        z = rng.choice([-1.0, 1.0], size=n)
    else:
        high = int(np.floor(n / (1.0 + tau * tau)))
        z = np.full(n, -1.0 / tau)
        z[:high] = tau + (2.0 * tolerance + 1e-6 * abs(m)) / s
        z = rng.permutation(z)
    g = rng.standard_normal((n, dim))
    w = z[:, None] * u[None, :] + g - (g @ u)[:, None] * u[None, :]
    return mu + w @ sqrt_cov


def _two_point_report(problem: DispatchProblem, solution: DispatchSolution, n: int, seed: int,
                      tolerance: float, targets: Optional[Sequence[Tuple[int, int]]]) -> ViolationReport:
    targets = list(targets) if targets is not None else _binding_rows(problem, solution)
    seeds = np.random.SeedSequence(seed).spawn(max(1, len(targets)))
    rows = []
    for (t, k), child in zip(targets, seeds):
        hp = problem.hours[t]
        a = hp.rows.coefficients(solution.alpha[t])[k]
        b = float(hp.rows.b[k])
        xi = two_point_samples(hp.mu, hp.sqrt_cov, a, b, n, np.random.default_rng(child), tolerance)
        count = int(np.count_nonzero(xi @ a + b > tolerance))
        bus, phase, hour, side = hp.rows.tags[k]
        rows.append(RowViolation(bus, phase, hour, side, count, n))
    return ViolationReport("two_point", n, seed, rows)


def monte_carlo_violation(
    problem: DispatchProblem,
    solution: DispatchSolution,
    family: str = "gaussian",
    n: int = 10000,
    seed: int = 0,
    workers: int = 1,
    block: int = DEFAULT_BLOCK,
    tolerance: float = VIOLATION_TOLERANCE,
    targets: Optional[Sequence[Tuple[int, int]]] = None,
) -> ViolationReport:
    """Empirical violation rates of the chance rows under ``family``.

    The Gaussian family samples (mu, Sigma) truncated to the multiplier box
    and also counts exits of the affine voltage model from [v_min, v_max].
    The two-point family evaluates the Cantelli extremizer of each targeted
    row (by default the most binding row of every hour).
    """
    if family not in FAMILIES:
        raise ParameterError(f"distribution family must be one of {FAMILIES}, got {family!r}")
    if n < MIN_SAMPLES:
        raise ParameterError(f"Monte-Carlo needs at least {MIN_SAMPLES} samples, got {n}")
    if solution.alpha.shape != (problem.horizon, problem.layout.g):
        raise ParameterError("dispatch does not match the problem horizon and PV set")
    started = time.perf_counter()
    if family == "gaussian":
        report = _gaussian_report(problem, solution, n, seed, workers, block, tolerance)
    else:
        report = _two_point_report(problem, solution, n, seed, tolerance, targets)
    logger.info("monte carlo done", family=family, samples=n, seed=seed, max_rate=report.max_rate,
                seconds=round(time.perf_counter() - started, 3))
    return report


# Energy comparison

@dataclass
class ModeEnergy:
    label: str
    mode: str
    epsilon: Optional[float]
    status: str
    energy_kwh: Optional[float]
    seconds: float
    reduction_pct: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {"label": self.label, "mode": self.mode, "epsilon": self.epsilon, "status": self.status,
                "energy_kwh": self.energy_kwh, "reduction_pct": self.reduction_pct, "seconds": self.seconds}


@dataclass
class EnergyReport:
    base_kwh: float
    modes: List[ModeEnergy]
    epsilon_table: List[ModeEnergy] = field(default_factory=list)

    def mode(self, label: str) -> ModeEnergy:
        return next(m for m in self.modes + self.epsilon_table if m.label == label)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "base": self.base_kwh,
            "modes": {m.label: m.to_dict() for m in self.modes},
            "epsilon": [m.to_dict() for m in self.epsilon_table],
        }

    def format_table(self) -> str:
        lines = [f"{'Case':<18}{'Energy (kWh)':>14}{'Reduction (%)':>15}{'Time (s)':>10}  Status"]
        for m in self.modes:
            energy = f"{m.energy_kwh:14.3f}" if m.energy_kwh is not None else f"{'-':>14}"
            reduction = f"{m.reduction_pct:15.3f}" if m.reduction_pct is not None else f"{'-':>15}"
            lines.append(f"{m.label:<18}{energy}{reduction}{m.seconds:10.3f}  {m.status}")
        if self.epsilon_table:
            lines.append("")
            lines.append(f"{'epsilon':<18}{'Energy (kWh)':>14}{'Reduction (%)':>15}")
            for m in self.epsilon_table:
                energy = f"{m.energy_kwh:14.3f}" if m.energy_kwh is not None else f"{'-':>14}"
                reduction = f"{m.reduction_pct:15.3f}" if m.reduction_pct is not None else f"{'-':>15}"
                lines.append(f"{m.epsilon:<18}{energy}{reduction}")
        return "\n".join(lines)


def reduction_pct(base: float, energy: Optional[float]) -> Optional[float]:
    if energy is None or base == 0:
        return None
    return 100.0 * (base - energy) / base


def _run_mode(label: str, feeder: Feeder, moments: MomentAmbiguitySet, horizon: int, settings: SolverSettings,
              base: float, **kwargs) -> ModeEnergy:
    started = time.perf_counter()
    try:
        problem = build_problem(feeder, moments, horizon=horizon, **kwargs)
        solution = solve_dispatch(problem, settings)
        energy = solution.objective_kwh if solution.status == "optimal" else None
        status = solution.status
    except CvrError as e:
        logger.warning("mode failed", label=label, error=e.message)
        energy, status = None, e.code
    seconds = time.perf_counter() - started
    return ModeEnergy(label, kwargs["mode"], kwargs.get("epsilon"), status, energy, seconds,
                      reduction_pct(base, energy))


def energy_report(
    feeder: Feeder,
    moments: MomentAmbiguitySet,
    horizon: int,
    epsilon: float = 0.05,
    epsilons: Sequence[float] = DEFAULT_EPSILONS,
    start_hour: int = 0,
    settings: Optional[SolverSettings] = None,
    **problem_kwargs,
) -> EnergyReport:
    """Base case (alpha = 0) against every dispatch mode over the horizon."""
    settings = settings or SolverSettings()
    common = dict(start_hour=start_hour, **problem_kwargs)
    common.pop("ro_interpretation", None)
    base_problem = build_problem(feeder, moments, "deterministic", horizon, **common)
    base = base_case_solution(base_problem).objective_kwh

    modes = [ModeEnergy("Base", "base", None, "optimal", base, 0.0, 0.0)]
    modes.append(_run_mode("Deter", feeder, moments, horizon, settings, base, mode="deterministic", **common))
    for interpretation in ("half_width", "variance"):
        modes.append(_run_mode(f"RO ({interpretation})", feeder, moments, horizon, settings, base,
                               mode="robust", ro_interpretation=interpretation, **common))
    modes.append(_run_mode("DRCC", feeder, moments, horizon, settings, base,
                           mode="drcc", epsilon=epsilon, **common))
    table = [
        _run_mode(f"DRCC eps={eps}", feeder, moments, horizon, settings, base, mode="drcc", epsilon=eps, **common)
        for eps in epsilons
    ]
    report = EnergyReport(base, modes, table)
    logger.info("energy report", base_kwh=round(base, 6),
                modes={m.label: m.energy_kwh for m in modes})
    return report


# report.json

def build_report(
    violations: Optional[ViolationReport] = None,
    energy: Optional[EnergyReport] = None,
    oracle: Optional[OracleCheck] = None,
    seeds: Optional[Dict[str, Any]] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    report: Dict[str, Any] = {
        "violations": violations.to_dict()["violations"] if violations else [],
        "energy": energy.to_dict() if energy else None,
        "seeds": seeds or {},
    }
    if violations:
        summary = violations.to_dict()
        summary.pop("violations")
        report["monte_carlo"] = summary
    if oracle:
        report["oracle"] = oracle.to_dict()
    report.update(extra or {})
    return report


def save_report(path: Union[str, Path], report: Dict[str, Any], timing: Optional[Dict[str, Any]] = None) -> None:
    document = dict(report)
    document["timing"] = timing or {}
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=True), encoding="utf-8")
