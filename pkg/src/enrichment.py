"""
Mixed-resolution data enrichment.

Teacher transformers (high-resolution PMU data) train bound models
(hourly mean -> hourly max / min) and second-order Markov transition tensors.
Student transformers (hourly smart-meter data only) blend the teachers'
models with learning weights and draw within-hour samples whose mean matches
the observed hourly value.
"""

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.spatial.distance import cdist

from errors import (
    DataError,
    DegenerateBoundsError,
    DegenerateInputError,
    NoTeachersError,
    ParameterError,
)
from gaussian_process import GaussianProcessRegressor, KernelHyperparameters

logger = structlog.get_logger(__name__)

QUANTITIES: Tuple[str, str, str] = ("p", "q", "pv")
MIN_TRAINING_HOURS = 24
DEFAULT_BINS = 20
LAPLACE_SMOOTHING = 1e-3
WEIGHT_DELTA = 1e-6
BOUND_MARGIN_ABS = 1e-3
BOUND_MARGIN_REL = 0.1
WEIGHT_MODES = ("inverse", "literal")
REACTIVE_COUPLINGS = ("independent", "power_factor")


@dataclass(frozen=True)
class HourlySeries:
    transformer_id: str
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[s]")
        values = np.asarray(self.values, dtype=float)
        if ts.shape != values.shape or values.ndim != 1:
            raise DataError(f"{self.transformer_id}: timestamps and values differ in shape")
        if ts.size > 1 and np.any(np.diff(ts) <= np.timedelta64(0, "s")):
            raise DataError(f"{self.transformer_id}: hourly timestamps must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise DataError(f"{self.transformer_id}: hourly values must be finite")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class HighResSeries:
    """Within-hour samples, one row per hour."""

    transformer_id: str
    hour_start: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.hour_start, dtype="datetime64[s]")
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[0] != ts.size:
            raise DataError(f"{self.transformer_id}: expected one row of samples per hour")
        if ts.size > 1 and np.any(np.diff(ts) <= np.timedelta64(0, "s")):
            raise DataError(f"{self.transformer_id}: hour starts must be strictly increasing")
        if not np.all(np.isfinite(samples)):
            raise DataError(f"{self.transformer_id}: high-resolution samples must be finite")
        object.__setattr__(self, "hour_start", ts)
        object.__setattr__(self, "samples", samples)

    @property
    def hours(self) -> int:
        return self.samples.shape[0]

    @property
    def samples_per_hour(self) -> int:
        return self.samples.shape[1]

    @property
    def resolution_s(self) -> float:
        return 3600.0 / self.samples_per_hour

    @property
    def hourly_mean(self) -> np.ndarray:
        return self.samples.mean(axis=1)

    @property
    def hourly_max(self) -> np.ndarray:
        return self.samples.max(axis=1)

    @property
    def hourly_min(self) -> np.ndarray:
        return self.samples.min(axis=1)

    def to_hourly(self) -> HourlySeries:
        return HourlySeries(self.transformer_id, self.hour_start, self.hourly_mean)


# Bound models

def clamp_bounds(p_a, lo, hi) -> Tuple[np.ndarray, np.ndarray]:
    """Force lo <= P_a <= hi; crossings beyond the margin are an error."""
    p_a = np.atleast_1d(np.asarray(p_a, dtype=float))
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    margin = BOUND_MARGIN_ABS + BOUND_MARGIN_REL * np.abs(p_a)
    crossed = hi < lo - margin
    if np.any(crossed):
        k = int(np.argmax(crossed))
        raise DegenerateBoundsError(
            "predicted upper bound below lower bound",
            {"p_a": float(p_a[k]), "lower": float(lo[k]), "upper": float(hi[k])},
        )
    return np.minimum(lo, p_a), np.maximum(hi, p_a)


@dataclass
class BoundModel:
    """Hourly-mean to hourly-max and hourly-min regressors for one teacher."""

    upper: GaussianProcessRegressor
    lower: GaussianProcessRegressor

    def predict_raw(self, p_a) -> Tuple[np.ndarray, np.ndarray]:
        return self.lower.predict(p_a), self.upper.predict(p_a)

    def predict(self, p_a) -> Tuple[np.ndarray, np.ndarray]:
        return clamp_bounds(p_a, *self.predict_raw(p_a))


@dataclass
class BlendedBoundModel:
    models: Sequence[BoundModel]
    weights: np.ndarray

    def predict_raw(self, p_a) -> Tuple[np.ndarray, np.ndarray]:
        predictions = [m.predict_raw(p_a) for m in self.models]
        lo = sum(w * lo_s for w, (lo_s, _) in zip(self.weights, predictions))
        hi = sum(w * hi_s for w, (_, hi_s) in zip(self.weights, predictions))
        return lo, hi

    def predict(self, p_a) -> Tuple[np.ndarray, np.ndarray]:
        return clamp_bounds(p_a, *self.predict_raw(p_a))


def fit_bound_models(
    teacher: HighResSeries, hyperparameters: Optional[KernelHyperparameters] = None
) -> BoundModel:
    if teacher.hours < MIN_TRAINING_HOURS:
        raise DegenerateInputError(
            f"{teacher.transformer_id}: need at least {MIN_TRAINING_HOURS} training hours, got {teacher.hours}"
        )
    x = teacher.hourly_mean
    upper = GaussianProcessRegressor(hyperparameters).fit(x, teacher.hourly_max)
    lower = GaussianProcessRegressor(hyperparameters).fit(x, teacher.hourly_min)
    return BoundModel(upper=upper, lower=lower)


# Transition models

@dataclass(frozen=True)
class TransitionModel:
    """tensor[b1, b2, b3] = Pr(next bin b3 | previous bins b1, b2)."""

    tensor: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tensor, dtype=float)
        if t.ndim != 3 or len(set(t.shape)) != 1:
            raise ParameterError(f"transition tensor must be B x B x B, got {t.shape}")
        if np.any(t < 0):
            raise ParameterError("transition probabilities must be nonnegative")
        if not np.allclose(t.sum(axis=-1), 1.0, atol=1e-9):
            raise ParameterError("transition rows must sum to one")
        t.setflags(write=False)
        object.__setattr__(self, "tensor", t)

    @property
    def bins(self) -> int:
        return self.tensor.shape[0]

    @cached_property
    def cdf(self) -> np.ndarray:
        return np.cumsum(self.tensor, axis=-1)


def bin_index(samples: np.ndarray, bins: int) -> np.ndarray:
    """Per-hour min/max normalization into equal-width bins."""
    lo = samples.min(axis=1, keepdims=True)
    width = samples.max(axis=1, keepdims=True) - lo
    position = np.divide(samples - lo, width, out=np.full_like(samples, 0.5), where=width > 0)
    return np.minimum((position * bins).astype(np.intp), bins - 1)


def fit_transition_model(
    teacher: HighResSeries, bins: int = DEFAULT_BINS, smoothing: float = LAPLACE_SMOOTHING
) -> TransitionModel:
    if bins < 2:
        raise ParameterError(f"bins must be at least 2, got {bins}")
    if teacher.samples_per_hour < 3:
        raise DegenerateInputError(f"{teacher.transformer_id}: need at least 3 samples per hour")
    states = bin_index(teacher.samples, bins)
    counts = np.zeros((bins, bins, bins))
    # transitions never cross an hour boundary
    np.add.at(counts, (states[:, :-2].ravel(), states[:, 1:-1].ravel(), states[:, 2:].ravel()), 1.0)
    counts += smoothing
    return TransitionModel(counts / counts.sum(axis=-1, keepdims=True))


# Learning weights and blending

@dataclass(frozen=True)
class LearningWeights:
    teacher_ids: Tuple[str, ...]
    weights: np.ndarray
    distances: np.ndarray
    mode: str = "inverse"

    def to_dict(self) -> Dict[str, float]:
        return {tid: float(w) for tid, w in zip(self.teacher_ids, self.weights)}


def daily_patterns(values: np.ndarray) -> np.ndarray:
    """Complete days of an hourly series as rows of 24 values."""
    values = np.asarray(values, dtype=float)
    days = values.size // 24
    if days == 0:
        raise DegenerateInputError(f"need at least one full day of hourly data, got {values.size} hours")
    return values[: days * 24].reshape(days, 24)


def compute_learning_weights(
    student_patterns: np.ndarray,
    teacher_patterns: Sequence[np.ndarray],
    mode: str = "inverse",
    teacher_ids: Optional[Sequence[str]] = None,
) -> LearningWeights:
    if mode not in WEIGHT_MODES:
        raise ParameterError(f"weights mode must be one of {WEIGHT_MODES}, got {mode!r}")
    student = np.atleast_2d(np.asarray(student_patterns, dtype=float))
    if not len(teacher_patterns) or student.size == 0:
        raise ParameterError("learning weights need a student pattern and at least one teacher")
    ids = tuple(teacher_ids) if teacher_ids is not None else tuple(str(k) for k in range(len(teacher_patterns)))

    distances = []
    for patterns in teacher_patterns:
        patterns = np.atleast_2d(np.asarray(patterns, dtype=float))
        if patterns.size == 0 or patterns.shape[1] != student.shape[1]:
            raise ParameterError("teacher and student patterns must be non-empty and of equal length")
        distances.append(float(cdist(student, patterns).mean()))
    d = np.array(distances)

    raw = 1.0 / (d + WEIGHT_DELTA) if mode == "inverse" else d.copy()
    total = raw.sum()
    weights = raw / total if total > 0 else np.full(len(d), 1.0 / len(d))
    return LearningWeights(ids, weights, d, mode)


def blend_teachers(
    weights: LearningWeights,
    bound_models: Sequence[BoundModel],
    transition_models: Sequence[TransitionModel],
) -> Tuple[BlendedBoundModel, TransitionModel]:
    w = np.asarray(weights.weights, dtype=float)
    if not (len(w) == len(bound_models) == len(transition_models)):
        raise ParameterError("weights and teacher models differ in count")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ParameterError("learning weights must be nonnegative and sum to one")
    if len({t.bins for t in transition_models}) != 1:
        raise ParameterError("teacher transition models use different bin counts")

    tensor = sum(wk * t.tensor for wk, t in zip(w, transition_models))
    tensor = tensor / tensor.sum(axis=-1, keepdims=True)
    return BlendedBoundModel(list(bound_models), w), TransitionModel(tensor)


# Sampling

def hour_rng(master_seed: int, transformer_id: str, hour: int, quantity: str = "p") -> np.random.Generator:
    """Independent stream for one (transformer, quantity, hour) task."""
    key = [int(master_seed), zlib.crc32(str(transformer_id).encode()), int(hour), QUANTITIES.index(quantity)]
    return np.random.default_rng(np.random.SeedSequence(key))


def _match_mean(x: np.ndarray, p_a: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    d = x - x.mean(axis=1, keepdims=True)
    up = d.max(axis=1)
    down = -d.min(axis=1)
    c = np.ones_like(p_a)
    np.minimum(c, np.divide(hi - p_a, up, out=np.ones_like(c), where=up > 0), out=c)
    np.minimum(c, np.divide(p_a - lo, down, out=np.ones_like(c), where=down > 0), out=c)
    c = np.clip(c, 0.0, 1.0)
    return p_a[:, None] + c[:, None] * d


def sample_hours(
    p_a: np.ndarray,
    bounds: Tuple[np.ndarray, np.ndarray],
    transition: TransitionModel,
    draws: np.ndarray,
) -> np.ndarray:
    """Run one Markov chain per hour; draws has shape (hours, 2, n_samples)."""
    lo, hi = bounds
    hours, _, n = draws.shape
    b = transition.bins
    cdf = transition.cdf
    states = np.empty((hours, n), dtype=np.intp)
    head = min(2, n)
    states[:, :head] = np.minimum((draws[:, 0, :head] * b).astype(np.intp), b - 1)
    for m in range(2, n):
        row = cdf[states[:, m - 2], states[:, m - 1]]
        states[:, m] = np.minimum((row < draws[:, 0, m, None]).sum(axis=1), b - 1)

    position = (states + draws[:, 1, :]) / b
    x = lo[:, None] + position * (hi - lo)[:, None]
    out = _match_mean(x, p_a, lo, hi)
    flat = hi - lo <= 0
    out[flat] = p_a[flat, None]
    return out


def enrich_hour(
    p_a: float,
    bound_model,
    transition_model: TransitionModel,
    n_samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Within-hour samples for one hourly value."""
    if n_samples < 1:
        raise ParameterError("n_samples must be positive")
    p = np.array([float(p_a)])
    bounds = bound_model.predict(p)
    draws = rng.random((1, 2, n_samples))
    return sample_hours(p, bounds, transition_model, draws)[0]


def enrich_series(
    hourly: HourlySeries,
    bound_model,
    transition_model: TransitionModel,
    n_samples: int,
    master_seed: int,
    quantity: str = "p",
) -> HighResSeries:
    """Enrich every hour; each hour has its own seeded stream."""
    p = hourly.values
    bounds = bound_model.predict(p)
    draws = np.stack([
        hour_rng(master_seed, hourly.transformer_id, h, quantity).random((2, n_samples))
        for h in range(p.size)
    ]) if p.size else np.empty((0, 2, n_samples))
    samples = sample_hours(p, bounds, transition_model, draws)
    return HighResSeries(hourly.transformer_id, hourly.timestamps, samples)


# Dataset-level enrichment

@dataclass(frozen=True)
class EnrichmentSettings:
    bins: int = DEFAULT_BINS
    weights_mode: str = "inverse"
    seed: int = 0
    reactive_coupling: str = "independent"
    workers: int = 1
    hyperparameters: Optional[KernelHyperparameters] = None

    def __post_init__(self):
        if self.weights_mode not in WEIGHT_MODES:
            raise ParameterError(f"weights mode must be one of {WEIGHT_MODES}")
        if self.reactive_coupling not in REACTIVE_COUPLINGS:
            raise ParameterError(f"reactive coupling must be one of {REACTIVE_COUPLINGS}")
        if self.bins < 2:
            raise ParameterError(f"bins must be at least 2, got {self.bins}")


@dataclass
class TeacherModels:
    transformer_id: str
    bounds: Dict[str, BoundModel] = field(default_factory=dict)
    transitions: Dict[str, TransitionModel] = field(default_factory=dict)
    patterns: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class EnrichmentResult:
    series: Dict[str, Dict[str, HighResSeries]]
    weights: Dict[str, Dict[str, LearningWeights]]
    teachers: List[str]
    students: List[str]


def fit_teacher(transformer_id: str, data: Mapping[str, HighResSeries], settings: EnrichmentSettings) -> TeacherModels:
    models = TeacherModels(transformer_id)
    for quantity, series in data.items():
        if np.unique(series.hourly_mean).size < 2:
            logger.info("teacher quantity skipped", teacher=transformer_id, quantity=quantity,
                        reason="constant hourly means")
            continue
        models.bounds[quantity] = fit_bound_models(series, settings.hyperparameters)
        models.transitions[quantity] = fit_transition_model(series, settings.bins)
        models.patterns[quantity] = daily_patterns(series.hourly_mean)
    return models


def _power_factor_coupled(p_series: HighResSeries, p_hourly: HourlySeries, q_hourly: HourlySeries) -> HighResSeries:
    p_a = p_hourly.values
    ratio = np.divide(q_hourly.values, p_a, out=np.zeros_like(p_a), where=p_a != 0)
    samples = p_series.samples * ratio[:, None]
    flat = p_a == 0
    samples[flat] = q_hourly.values[flat, None]
    return HighResSeries(q_hourly.transformer_id, q_hourly.timestamps, samples)


def enrich_student(
    student_id: str,
    hourly: Mapping[str, HourlySeries],
    teachers: Sequence[TeacherModels],
    n_samples: int,
    settings: EnrichmentSettings,
) -> Tuple[Dict[str, HighResSeries], Dict[str, LearningWeights]]:
    series: Dict[str, HighResSeries] = {}
    weights: Dict[str, LearningWeights] = {}
    order = [q for q in QUANTITIES if q in hourly]
    for quantity in order:
        data = hourly[quantity]
        if quantity == "q" and settings.reactive_coupling == "power_factor" and "p" in series:
            series["q"] = _power_factor_coupled(series["p"], hourly["p"], data)
            continue
        if not np.any(data.values):
            series[quantity] = HighResSeries(student_id, data.timestamps, np.zeros((len(data), n_samples)))
            continue
        able = [t for t in teachers if quantity in t.bounds]
        if not able and quantity == "p":
            raise NoTeachersError(f"no teacher carries a usable {quantity!r} series", {"student": student_id})
        if not able:
            logger.warning("no teacher for quantity; holding hourly values", student=student_id, quantity=quantity)
            series[quantity] = HighResSeries(student_id, data.timestamps,
                                             np.repeat(data.values[:, None], n_samples, axis=1))
            continue
        w = compute_learning_weights(
            daily_patterns(data.values),
            [t.patterns[quantity] for t in able],
            settings.weights_mode,
            [t.transformer_id for t in able],
        )
        bounds, transition = blend_teachers(w, [t.bounds[quantity] for t in able],
                                            [t.transitions[quantity] for t in able])
        series[quantity] = enrich_series(data, bounds, transition, n_samples, settings.seed, quantity)
        weights[quantity] = w
    return series, weights


def enrich_dataset(
    pmu: Mapping[str, Mapping[str, HighResSeries]],
    sm: Mapping[str, Mapping[str, HourlySeries]],
    settings: EnrichmentSettings,
) -> EnrichmentResult:
    """Teachers pass through unchanged; every SM-only transformer is enriched."""
    if not pmu:
        raise NoTeachersError("no PMU teacher transformers found")
    resolutions = {s.samples_per_hour for data in pmu.values() for s in data.values()}
    if len(resolutions) != 1:
        raise DataError("teacher PMU files use different sub-hour resolutions",
                        {"samples_per_hour": sorted(resolutions)})
    n_samples = resolutions.pop()

    teacher_ids = sorted(pmu)
    student_ids = sorted(tid for tid in sm if tid not in pmu)
    with ThreadPoolExecutor(max_workers=max(1, settings.workers)) as pool:
        teachers = list(pool.map(lambda tid: fit_teacher(tid, pmu[tid], settings), teacher_ids))
        students = list(pool.map(
            lambda sid: enrich_student(sid, sm[sid], teachers, n_samples, settings), student_ids
        ))

    series = {tid: dict(pmu[tid]) for tid in teacher_ids}
    weights = {}
    for sid, (s, w) in zip(student_ids, students):
        series[sid] = s
        weights[sid] = w
        if "p" in w:
            logger.info("student enriched", student=sid, weights=w["p"].to_dict())
    logger.info("enrichment finished", teachers=len(teacher_ids), students=len(student_ids), samples_per_hour=n_samples)
    return EnrichmentResult(series, weights, teacher_ids, student_ids)
