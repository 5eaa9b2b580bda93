"""
CVR reactive-power dispatch: affine voltage model, chance-constraint rows and
per-hour conic programs in deterministic, robust and DRCC modes.
"""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import cvxpy as cp
import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from errors import (
    DispatchFailedError,
    ModelValidityError,
    ParameterError,
    SchemaError,
)
from feeder_model import Feeder, Node, SensitivityModel, format_validation_error, sensitivities_for
from moments import MomentAmbiguitySet, UncertaintyVectorLayout, symmetric_sqrt

logger = structlog.get_logger(__name__)

MODES = ("deterministic", "robust", "drcc")
MODE_ALIASES = {"det": "deterministic", "ro": "robust", "deterministic": "deterministic",
                "robust": "robust", "drcc": "drcc"}
COUPLING_REFERENCES = ("base_profile", "bound")
RO_INTERPRETATIONS = ("half_width", "variance")
DEFAULT_V_MIN = 0.95 ** 2
DEFAULT_V_MAX = 1.05 ** 2
FEASIBILITY_TOLERANCE = 1e-7
# Solved rows are held at or below -ROW_MARGIN.
ROW_MARGIN = 1e-9


def normalize_mode(mode: str) -> str:
    try:
        return MODE_ALIASES[mode.lower()]
    except (KeyError, AttributeError):
        raise ParameterError(f"mode must be one of det, ro, drcc; got {mode!r}")


def soc_radius(epsilon: float) -> float:
    """kappa(eps) = sqrt((1 - eps) / eps)."""
    if epsilon is None or not np.isfinite(epsilon) or not 0.0 < epsilon < 1.0:
        raise ParameterError(f"epsilon must lie in (0, 1), got {epsilon}")
    return float(np.sqrt((1.0 - epsilon) / epsilon))


@dataclass(frozen=True)
class SolverSettings:
    solver: str = "CLARABEL"
    tolerance: float = 1e-8
    max_iter: int = 500
    workers: int = 1

    def options(self) -> Dict[str, Any]:
        name = self.solver.upper()
        if name == "CLARABEL":
            return {"tol_gap_abs": self.tolerance, "tol_gap_rel": self.tolerance,
                    "tol_feas": self.tolerance, "max_iter": self.max_iter}
        if name == "ECOS":
            return {"abstol": self.tolerance, "reltol": self.tolerance,
                    "feastol": self.tolerance, "max_iters": self.max_iter}
        if name == "SCS":
            return {"eps": self.tolerance, "max_iters": self.max_iter * 20}
        return {}


# Affine voltage model

@dataclass(frozen=True)
class AffineVoltageModel:
    """M(xi) v = v_tilde + C_xi xi + C_alpha (alpha * Q_cap) for one hour."""

    hour: int
    R: np.ndarray
    X: np.ndarray
    v_tilde: np.ndarray
    slope_p: np.ndarray
    offset_p: np.ndarray
    slope_q: np.ndarray
    offset_q: np.ndarray
    pv_index: np.ndarray

    @property
    def n(self) -> int:
        return self.v_tilde.size

    @property
    def g(self) -> int:
        return self.pv_index.size

    @property
    def C_alpha(self) -> np.ndarray:
        return self.X[:, self.pv_index]

    @property
    def C_xi(self) -> np.ndarray:
        return np.hstack([
            -self.R * self.offset_p[None, :],
            -self.X * self.offset_q[None, :],
            self.R[:, self.pv_index],
            np.zeros((self.n, self.g)),
        ])

    @property
    def offset(self) -> np.ndarray:
        return self.v_tilde

    def split(self, xi: np.ndarray) -> Tuple[np.ndarray, ...]:
        n, g = self.n, self.g
        return xi[..., :n], xi[..., n:2 * n], xi[..., 2 * n:2 * n + g], xi[..., 2 * n + g:]

    def denominator(self, p_l: np.ndarray, q_l: np.ndarray) -> np.ndarray:
        return (np.eye(self.n) + self.R * (self.slope_p * p_l)[None, :]
                + self.X * (self.slope_q * q_l)[None, :])

    def numerator(self, xi: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        _, _, _, q_cap = self.split(xi)
        return self.v_tilde + xi @ self.C_xi.T + (np.asarray(alpha) * q_cap) @ self.C_alpha.T

    def voltages(self, xi: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        """Squared voltages; xi may be a single block or a (samples, block) batch."""
        p_l, q_l, _, _ = self.split(xi)
        rhs = self.numerator(xi, alpha)
        if xi.ndim == 1:
            return np.linalg.solve(self.denominator(p_l, q_l), rhs)
        M = (np.eye(self.n)[None, :, :] + self.R[None, :, :] * (self.slope_p * p_l)[:, None, :]
             + self.X[None, :, :] * (self.slope_q * q_l)[:, None, :])
        return np.linalg.solve(M, rhs[..., None])[..., 0]

    def substation_power(self, xi: np.ndarray, alpha: np.ndarray) -> float:
        """Feeder-head active power (p.u.) with linearized ZIP loads."""
        p_l, _, p_g, _ = self.split(xi)
        v = self.voltages(xi, alpha)
        return float(p_l @ (self.slope_p * v + self.offset_p) - p_g.sum())

    def power_affine(self, xi: np.ndarray) -> Tuple[float, np.ndarray]:
        """(constant, gradient) of the substation power in alpha at fixed xi."""
        p_l, q_l, _, q_cap = self.split(xi)
        constant = self.substation_power(xi, np.zeros(self.g))
        if not self.g:
            return constant, np.zeros(0)
        sensitivity = np.linalg.solve(self.denominator(p_l, q_l), self.C_alpha * q_cap[None, :])
        return constant, (p_l * self.slope_p) @ sensitivity


def zip_vectors(feeder: Feeder) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    buses = [feeder.bus(b) for b, _ in feeder.nodes]
    return (np.array([b.zip.slope_p for b in buses]), np.array([b.zip.offset_p for b in buses]),
            np.array([b.zip.slope_q for b in buses]), np.array([b.zip.offset_q for b in buses]))


@dataclass
class DenominatorReport:
    ok: bool
    worst_margin: float
    worst_node: Optional[Node]
    margins: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {"ok": self.ok, "worst_margin": self.worst_margin,
                "worst_node": list(self.worst_node) if self.worst_node else None}


@dataclass(frozen=True)
class MultiplierBox:
    p_lo: np.ndarray
    p_hi: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray

    @classmethod
    def point(cls, p_l: np.ndarray, q_l: np.ndarray) -> "MultiplierBox":
        return cls(p_l, p_l, q_l, q_l)

    @classmethod
    def around(cls, model: AffineVoltageModel, mu: np.ndarray, cov: np.ndarray, spread: float) -> "MultiplierBox":
        sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        p_mu, q_mu, _, _ = model.split(mu)
        p_sd, q_sd, _, _ = model.split(sigma)
        return cls(np.clip(p_mu - spread * p_sd, 0, 1), np.clip(p_mu + spread * p_sd, 0, 1),
                   np.clip(q_mu - spread * q_sd, 0, 1), np.clip(q_mu + spread * q_sd, 0, 1))


def check_denominator_positivity(model: AffineVoltageModel, box: MultiplierBox,
                                 nodes: Optional[Sequence[Node]] = None) -> DenominatorReport:
    """Worst row diagonal-dominance margin of M(xi) over the vertices of the box."""
    vertices = [
        model.R * (model.slope_p * p)[None, :] + model.X * (model.slope_q * q)[None, :]
        for p in (box.p_lo, box.p_hi) for q in (box.q_lo, box.q_hi)
    ]
    stacked = np.stack(vertices)
    diagonal = 1.0 + np.min(np.diagonal(stacked, axis1=1, axis2=2), axis=0)
    off = np.max(np.abs(stacked), axis=0)
    np.fill_diagonal(off, 0.0)
    margins = diagonal - off.sum(axis=1)
    k = int(np.argmin(margins)) if margins.size else 0
    worst = float(margins[k]) if margins.size else 1.0
    node = tuple(nodes[k]) if nodes is not None and margins.size else None
    return DenominatorReport(ok=worst > 0, worst_margin=worst, worst_node=node, margins=margins)


def assemble_voltage_affine(feeder: Feeder, sens: SensitivityModel, layout: UncertaintyVectorLayout,
                            hour: int, mu_block: Optional[np.ndarray] = None) -> AffineVoltageModel:
    slope_p, offset_p, slope_q, offset_q = zip_vectors(feeder)
    pv_index = np.array([sens.node_index[node] for node in layout.pv_nodes], dtype=int)
    model = AffineVoltageModel(hour, np.asarray(sens.R), np.asarray(sens.X), np.asarray(sens.v_tilde),
                               slope_p, offset_p, slope_q, offset_q, pv_index)
    if mu_block is not None:
        p_l, q_l, _, _ = model.split(mu_block)
        report = check_denominator_positivity(model, MultiplierBox.point(p_l, q_l), layout.nodes)
        if not report.ok:
            raise ModelValidityError(
                f"hour {hour}: M(mu) is not diagonally dominant (margin {report.worst_margin:.3e})",
                report.to_dict(),
            )
    return model


# Chance rows

@dataclass(frozen=True)
class ChanceRow:
    bus: str
    phase: str
    hour: int
    side: str
    a_const: np.ndarray
    a_alpha: np.ndarray
    b: float
    q_cap_offset: int

    def a(self, alpha: np.ndarray) -> np.ndarray:
        out = self.a_const.copy()
        out[self.q_cap_offset:] = self.a_alpha * np.asarray(alpha)
        return out


@dataclass(frozen=True)
class ChanceRowSet:
    """a(alpha)^T xi + b <= 0 for every row; alpha enters only the Q_cap block."""

    hour: int
    tags: Tuple[Tuple[str, str, int, str], ...]
    C: np.ndarray
    D: np.ndarray
    b: np.ndarray
    q_cap_offset: int

    def __len__(self) -> int:
        return self.b.size

    def coefficients(self, alpha: np.ndarray) -> np.ndarray:
        A = self.C.copy()
        A[:, self.q_cap_offset:] = self.D * np.asarray(alpha)[None, :]
        return A

    def values(self, xi: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        return xi @ self.coefficients(alpha).T + self.b

    def rows(self) -> List[ChanceRow]:
        return [
            ChanceRow(bus, phase, hour, side, self.C[k], self.D[k], float(self.b[k]), self.q_cap_offset)
            for k, (bus, phase, hour, side) in enumerate(self.tags)
        ]


def assemble_chance_rows(model: AffineVoltageModel, v_min: float, v_max: float, layout: UncertaintyVectorLayout,
                         reference: Optional[np.ndarray] = None, box: Optional[MultiplierBox] = None,
                         monitored: Optional[Sequence[int]] = None) -> ChanceRowSet:
    """Voltage bounds multiplied through by the denominator of the affine model.

    ``reference`` gives the voltages used for the coupling to other nodes; the
    row's own node always sits at the bound. Without a reference every node
    is taken at the bound.

    ``build_problem`` passes the alpha = 0 mean profile by default; with
    ``coupling_reference="bound"`` it passes no reference, which gives the
    literal grouping with every node at the bound.
    """
    if box is not None:
        report = check_denominator_positivity(model, box, layout.nodes)
        if not report.ok:
            raise ModelValidityError(
                f"hour {model.hour}: denominator not positive over the multiplier box "
                f"(margin {report.worst_margin:.3e})",
                report.to_dict(),
            )
    n = model.n
    monitored = np.arange(n) if monitored is None else np.asarray(monitored, dtype=int)
    R, X = model.R[monitored], model.X[monitored]
    q_cap_offset = 2 * n + model.g

    blocks, tags, b = [], [], []
    for side, bound, sign in (("upper", v_max, -1.0), ("lower", v_min, 1.0)):
        W = np.tile(reference if reference is not None else np.full(n, bound), (monitored.size, 1))
        W[np.arange(monitored.size), monitored] = bound
        a_pl = sign * R * (W * model.slope_p[None, :] + model.offset_p[None, :])
        a_ql = sign * X * (W * model.slope_q[None, :] + model.offset_q[None, :])
        a_pg = -sign * R[:, model.pv_index]
        blocks.append((np.hstack([a_pl, a_ql, a_pg, np.zeros((monitored.size, model.g))]),
                       -sign * X[:, model.pv_index]))
        vt = model.v_tilde[monitored]
        b.append(vt - bound if side == "upper" else bound - vt)
        tags += [(*layout.nodes[i], model.hour, side) for i in monitored]

    return ChanceRowSet(
        hour=model.hour,
        tags=tuple(tags),
        C=np.vstack([blk[0] for blk in blocks]),
        D=np.vstack([blk[1] for blk in blocks]),
        b=np.concatenate(b),
        q_cap_offset=q_cap_offset,
    )


# Problem assembly

@dataclass
class HourProblem:
    position: int
    hour: int
    model: AffineVoltageModel
    rows: ChanceRowSet
    mu: np.ndarray
    cov: np.ndarray
    sqrt_cov: np.ndarray
    half_width: np.ndarray
    fixed_zero: np.ndarray
    objective_constant: float
    objective_gradient: np.ndarray

    def row_values(self, alpha: np.ndarray, mode: str, kappa: float = 0.0) -> np.ndarray:
        """Left-hand sides of the reformulated constraints (feasible when <= 0)."""
        A = self.rows.coefficients(alpha)
        mean = A @ self.mu + self.rows.b
        if mode == "drcc":
            return mean + kappa * np.linalg.norm(A @ self.sqrt_cov, axis=1)
        if mode == "robust":
            return mean + np.abs(A) @ self.half_width
        return mean

    def objective(self, alpha: np.ndarray) -> float:
        return float(self.objective_constant + self.objective_gradient @ np.asarray(alpha))


@dataclass
class DispatchProblem:
    feeder: Feeder
    layout: UncertaintyVectorLayout
    mode: str
    epsilon: Optional[float]
    v_min: float
    v_max: float
    coupling_reference: str
    ro_interpretation: str
    ro_relative: float
    hours: List[HourProblem]

    @property
    def horizon(self) -> int:
        return len(self.hours)

    @property
    def kappa(self) -> float:
        return soc_radius(self.epsilon) if self.mode == "drcc" else 0.0

    def settings_dict(self) -> Dict[str, Any]:
        return {
            "v_min": self.v_min, "v_max": self.v_max, "coupling_reference": self.coupling_reference,
            "ro_interpretation": self.ro_interpretation, "ro_relative": self.ro_relative,
        }


def robust_half_width(mu: np.ndarray, interpretation: str, relative: float) -> np.ndarray:
    if interpretation not in RO_INTERPRETATIONS:
        raise ParameterError(f"ro interpretation must be one of {RO_INTERPRETATIONS}")
    if relative < 0:
        raise ParameterError("robust half-width must be nonnegative")
    scale = relative if interpretation == "half_width" else np.sqrt(3.0) * relative
    return scale * np.abs(mu)


def build_problem(
    feeder: Feeder,
    moments: MomentAmbiguitySet,
    mode: str,
    horizon: int,
    epsilon: Optional[float] = None,
    start_hour: int = 0,
    v_min: float = DEFAULT_V_MIN,
    v_max: float = DEFAULT_V_MAX,
    coupling_reference: str = "base_profile",
    ro_interpretation: str = "half_width",
    ro_relative: float = 0.10,
    denominator_spread: float = 3.0,
    monitored: Optional[Sequence[Node]] = None,
    sensitivities: Optional[SensitivityModel] = None,
) -> DispatchProblem:
    mode = normalize_mode(mode)
    if mode == "drcc":
        if epsilon is None:
            raise ParameterError("drcc mode requires epsilon")
        soc_radius(epsilon)
    if not 0 < v_min <= v_max:
        raise ParameterError(f"voltage limits must satisfy 0 < v_min <= v_max, got {v_min}, {v_max}")
    if coupling_reference not in COUPLING_REFERENCES:
        raise ParameterError(f"coupling reference must be one of {COUPLING_REFERENCES}")

    layout = UncertaintyVectorLayout.for_feeder(feeder, start_hour, horizon)
    mu, blocks = moments.restrict(layout)
    sens = sensitivities or sensitivities_for(feeder)
    monitored_idx = None if monitored is None else [feeder.node_index[tuple(m)] for m in monitored]
    q_cap = slice(2 * layout.n + layout.g, layout.block_size)

    hours = []
    for position, hour in enumerate(layout.hours):
        mu_t = mu[layout.hour_slice(position)]
        cov_t = blocks[position]
        model = assemble_voltage_affine(feeder, sens, layout, hour, mu_t)
        box = MultiplierBox.around(model, mu_t, cov_t, denominator_spread)
        reference = model.voltages(mu_t, np.zeros(layout.g)) if coupling_reference == "base_profile" else None
        rows = assemble_chance_rows(model, v_min, v_max, layout, reference, box, monitored_idx)
        constant, gradient = model.power_affine(mu_t)
        fixed_zero = (mu_t[q_cap] <= 0) & (np.diag(cov_t)[q_cap] <= 0)
        hours.append(HourProblem(
            position=position, hour=hour, model=model, rows=rows, mu=mu_t, cov=cov_t,
            sqrt_cov=symmetric_sqrt(cov_t),
            half_width=robust_half_width(mu_t, ro_interpretation, ro_relative) if mode == "robust"
            else np.zeros_like(mu_t),
            fixed_zero=fixed_zero, objective_constant=constant, objective_gradient=gradient,
        ))
    logger.info("dispatch problem built", mode=mode, epsilon=epsilon, horizon=horizon,
                rows=sum(len(h.rows) for h in hours), pv=layout.g)
    return DispatchProblem(feeder, layout, mode, epsilon, v_min, v_max, coupling_reference,
                           ro_interpretation, ro_relative, hours)


# Solving

@dataclass
class HourResult:
    hour: int
    status: str
    alpha: np.ndarray
    objective: float
    slacks: np.ndarray
    hint: Optional[Dict[str, Any]] = None


@dataclass
class DispatchSolution:
    mode: str
    epsilon: Optional[float]
    start_hour: int
    pv_nodes: Tuple[Node, ...]
    hours: Tuple[int, ...]
    alpha: np.ndarray
    status: str
    objective_kwh: float
    hour_status: List[str]
    slacks: List[np.ndarray] = field(default_factory=list)
    hint: Optional[Dict[str, Any]] = None
    settings: Dict[str, Any] = field(default_factory=dict)
    solve_seconds: float = 0.0

    @property
    def horizon(self) -> int:
        return len(self.hours)

    def alpha_at(self, position: int) -> np.ndarray:
        return self.alpha[position]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "epsilon": self.epsilon,
            "horizon": self.horizon,
            "start_hour": self.start_hour,
            "objective_kwh": self.objective_kwh,
            "status": self.status,
            "alpha_q": [
                {"bus": b, "phase": p, "hour": int(h), "value": float(self.alpha[t, k])}
                for t, h in enumerate(self.hours) for k, (b, p) in enumerate(self.pv_nodes)
            ],
            "hours": [{"hour": int(h), "status": s} for h, s in zip(self.hours, self.hour_status)],
            "infeasibility_hint": self.hint,
            "settings": self.settings,
            "timing": {"solve_ms": round(self.solve_seconds * 1000.0, 3)},
        }


def _status(problem_status: Optional[str]) -> str:
    if problem_status == cp.OPTIMAL:
        return "optimal"
    if problem_status == cp.INFEASIBLE:
        return "infeasible"
    return "numerical-limit"


def _constraint_expression(hp: HourProblem, mode: str, kappa: float, alpha: cp.Variable):
    rows = hp.rows
    q_cap_mu = hp.mu[rows.q_cap_offset:]
    mean = rows.C @ hp.mu + rows.b + rows.D @ cp.multiply(q_cap_mu, alpha)
    if mode == "drcc" and np.any(hp.sqrt_cov):
        S = hp.sqrt_cov
        spread = rows.C @ S
        S_q = S[rows.q_cap_offset:, :]
        if np.any(S_q):
            spread = spread + rows.D @ cp.diag(alpha) @ S_q
        return mean + kappa * cp.norm(spread, 2, axis=1)
    if mode == "robust" and np.any(hp.half_width):
        h = hp.half_width
        return (mean + np.abs(rows.C) @ h
                + np.abs(rows.D) @ cp.multiply(h[rows.q_cap_offset:], cp.abs(alpha)))
    return mean


def _infeasibility_hint(hp: HourProblem, mode: str, kappa: float, settings: SolverSettings) -> Dict[str, Any]:
    g = hp.model.g
    alpha = cp.Variable(g) if g else None
    if alpha is not None:
        expr = _constraint_expression(hp, mode, kappa, alpha)
        t = cp.Variable()
        prob = cp.Problem(cp.Minimize(t), [expr <= t, alpha >= -1, alpha <= 1])
        try:
            prob.solve(solver=settings.solver, **settings.options())
            values = hp.row_values(alpha.value, mode, kappa) if alpha.value is not None else None
        except cp.error.SolverError:
            values = None
    else:
        values = hp.row_values(np.zeros(0), mode, kappa)
    if values is None:
        values = hp.row_values(np.zeros(g), mode, kappa)
    k = int(np.argmax(values))
    bus, phase, hour, side = hp.rows.tags[k]
    return {"bus": bus, "phase": phase, "hour": int(hour), "side": side, "slack": float(values[k])}


def solve_hour(hp: HourProblem, mode: str, kappa: float, settings: SolverSettings) -> HourResult:
    g = hp.model.g
    log = logger.bind(hour=hp.hour, mode=mode)
    if g == 0:
        values = hp.row_values(np.zeros(0), mode, kappa)
        status = "optimal" if np.all(values <= FEASIBILITY_TOLERANCE) else "infeasible"
        hint = None if status == "optimal" else _infeasibility_hint(hp, mode, kappa, settings)
        return HourResult(hp.hour, status, np.zeros(0), hp.objective_constant, -values, hint)

    alpha = cp.Variable(g)
    constraints = [_constraint_expression(hp, mode, kappa, alpha) <= -ROW_MARGIN, alpha >= -1, alpha <= 1]
    if np.any(hp.fixed_zero):
        constraints.append(alpha[np.flatnonzero(hp.fixed_zero)] == 0)
    problem = cp.Problem(cp.Minimize(hp.objective_gradient @ alpha + hp.objective_constant), constraints)
    try:
        problem.solve(solver=settings.solver, **settings.options())
        status = _status(problem.status)
    except cp.error.SolverError as e:
        log.warning("solver error", error=str(e))
        status = "numerical-limit"

    if status == "optimal" and alpha.value is not None:
        value = np.clip(np.asarray(alpha.value, dtype=float), -1.0, 1.0)
        value[hp.fixed_zero] = 0.0
        slacks = -hp.row_values(value, mode, kappa)
        log.debug("hour solved", status=status, objective=hp.objective(value))
        return HourResult(hp.hour, status, value, hp.objective(value), slacks)

    hint = _infeasibility_hint(hp, mode, kappa, settings) if status == "infeasible" else None
    log.warning("hour not solved", status=status, hint=hint)
    zero = np.zeros(g)
    return HourResult(hp.hour, status, zero, hp.objective(zero), -hp.row_values(zero, mode, kappa), hint)


def solve_dispatch(problem: DispatchProblem, settings: Optional[SolverSettings] = None) -> DispatchSolution:
    """Solve every hour concurrently; hours are independent."""
    settings = settings or SolverSettings()
    kappa = problem.kappa
    started = time.perf_counter()
    with ThreadPoolExecutor(max_workers=max(1, settings.workers)) as pool:
        results = list(pool.map(lambda hp: solve_hour(hp, problem.mode, kappa, settings), problem.hours))
    elapsed = time.perf_counter() - started

    statuses = [r.status for r in results]
    if "infeasible" in statuses:
        status = "infeasible"
    elif "numerical-limit" in statuses:
        status = "numerical-limit"
    else:
        status = "optimal"
    hint = next((r.hint for r in results if r.hint), None)
    alpha = np.vstack([r.alpha for r in results]) if results else np.zeros((0, problem.layout.g))
    objective_kwh = problem.feeder.base_power_kva * sum(r.objective for r in results)
    logger.info("dispatch solved", mode=problem.mode, epsilon=problem.epsilon, status=status,
                objective_kwh=round(objective_kwh, 6), seconds=round(elapsed, 3))
    return DispatchSolution(
        mode=problem.mode, epsilon=problem.epsilon, start_hour=problem.layout.hours[0] if problem.hours else 0,
        pv_nodes=problem.layout.pv_nodes, hours=problem.layout.hours,
        alpha=alpha.reshape(len(results), problem.layout.g),
        status=status, objective_kwh=float(objective_kwh), hour_status=statuses,
        slacks=[r.slacks for r in results], hint=hint, settings=problem.settings_dict(), solve_seconds=elapsed,
    )


def base_case_solution(problem: DispatchProblem) -> DispatchSolution:
    """Unity power factor: alpha = 0 everywhere."""
    alpha = np.zeros((problem.horizon, problem.layout.g))
    objective = problem.feeder.base_power_kva * sum(hp.objective(alpha[k]) for k, hp in enumerate(problem.hours))
    return DispatchSolution(
        mode="base", epsilon=None, start_hour=problem.layout.hours[0], pv_nodes=problem.layout.pv_nodes,
        hours=problem.layout.hours, alpha=alpha, status="optimal", objective_kwh=float(objective),
        hour_status=["optimal"] * problem.horizon, settings=problem.settings_dict(),
    )


def require_optimal(solution: DispatchSolution) -> DispatchSolution:
    if solution.status != "optimal":
        raise DispatchFailedError(f"dispatch ended {solution.status}", {"hint": solution.hint})
    return solution


# dispatch.json

class AlphaDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    bus: str
    phase: str = Field(..., pattern="^[abc]$")
    hour: int = Field(..., ge=0)
    value: float = Field(..., ge=-1.0, le=1.0)


class DispatchDocument(BaseModel):
    model_config = ConfigDict(extra="ignore")

    mode: str
    epsilon: Optional[float] = None
    horizon: int = Field(..., ge=1)
    start_hour: int = Field(default=0, ge=0)
    objective_kwh: float
    status: str
    alpha_q: List[AlphaDocument]
    hours: List[Dict[str, Any]] = Field(default_factory=list)
    infeasibility_hint: Optional[Dict[str, Any]] = None
    settings: Dict[str, Any] = Field(default_factory=dict)

    def to_solution(self, feeder: Feeder) -> DispatchSolution:
        hours = tuple(range(self.start_hour, self.start_hour + self.horizon))
        pv_nodes = feeder.pv_nodes
        alpha = np.zeros((self.horizon, len(pv_nodes)))
        index = {node: k for k, node in enumerate(pv_nodes)}
        for k, item in enumerate(self.alpha_q):
            node = (item.bus, item.phase)
            if node not in index or item.hour not in hours:
                raise SchemaError(f"alpha_q.{k}: ({item.bus}, {item.phase}, hour {item.hour}) is not a PV entry")
            alpha[hours.index(item.hour), index[node]] = item.value
        return DispatchSolution(
            mode=self.mode, epsilon=self.epsilon, start_hour=self.start_hour, pv_nodes=pv_nodes, hours=hours,
            alpha=alpha, status=self.status, objective_kwh=self.objective_kwh,
            hour_status=[h.get("status", self.status) for h in self.hours] or [self.status] * self.horizon,
            hint=self.infeasibility_hint, settings=dict(self.settings),
        )


def save_dispatch(path: Union[str, Path], solution: DispatchSolution) -> None:
    Path(path).write_text(json.dumps(solution.to_dict(), indent=2, sort_keys=True), encoding="utf-8")


def load_dispatch(path: Union[str, Path], feeder: Feeder) -> DispatchSolution:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"dispatch file {path} does not exist")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return DispatchDocument.model_validate(data).to_solution(feeder)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    except ValidationError as e:
        raise SchemaError(format_validation_error(e)) from e
