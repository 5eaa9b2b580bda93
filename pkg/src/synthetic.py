"""
Synthetic measurements for the bundled feeders.

Every mapped transformer gets an archetype (a daily load shape and a
within-hour volatility). Hourly levels vary from day to day, within-hour
samples follow an AR(1) fluctuation, and PV buses carry a clear-sky bell
with cloud noise. The full-resolution data of every transformer is kept as
ground truth; teachers expose it as PMU files, everybody as hourly SM files.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from enrichment import HighResSeries, HourlySeries
from errors import ParameterError
from feeder_model import Feeder
from measurements import write_series
from moments import MomentAmbiguitySet
from load_models import pv_reactive_capability

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class Archetype:
    name: str
    shape: np.ndarray
    volatility: float
    reactive_ratio: float


def _shape(values: Sequence[float]) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    return arr / arr.max()


ARCHETYPES: Dict[str, Archetype] = {
    "residential": Archetype(
        "residential",
        _shape([0.45, 0.40, 0.38, 0.37, 0.38, 0.45, 0.60, 0.70, 0.62, 0.55, 0.52, 0.52,
                0.53, 0.52, 0.55, 0.62, 0.75, 0.90, 1.00, 0.98, 0.90, 0.78, 0.62, 0.52]),
        0.02, 0.35,
    ),
    "commercial": Archetype(
        "commercial",
        _shape([0.30, 0.28, 0.28, 0.28, 0.30, 0.35, 0.50, 0.70, 0.88, 0.96, 1.00, 1.00,
                0.98, 1.00, 1.00, 0.97, 0.92, 0.80, 0.62, 0.48, 0.40, 0.36, 0.33, 0.31]),
        0.04, 0.45,
    ),
    "industrial": Archetype(
        "industrial",
        _shape([0.70, 0.70, 0.68, 0.68, 0.70, 0.78, 0.90, 0.98, 1.00, 1.00, 0.98, 0.96,
                0.92, 0.96, 0.98, 0.97, 0.92, 0.85, 0.80, 0.78, 0.76, 0.74, 0.72, 0.70]),
        0.06, 0.55,
    ),
    "agricultural": Archetype(
        "agricultural",
        _shape([0.20, 0.20, 0.20, 0.22, 0.35, 0.60, 0.85, 1.00, 0.95, 0.70, 0.50, 0.45,
                0.45, 0.48, 0.55, 0.70, 0.90, 0.95, 0.75, 0.45, 0.30, 0.25, 0.22, 0.20]),
        0.08, 0.30,
    ),
}
ARCHETYPE_NAMES: Tuple[str, ...] = tuple(ARCHETYPES)


def pv_shape(hours: np.ndarray) -> np.ndarray:
    """Clear-sky bell, zero outside 6:00-18:00."""
    h = np.asarray(hours, dtype=float) % 24
    return np.where((h > 6) & (h < 18), np.sin(np.pi * (h - 6) / 12.0), 0.0)


@dataclass(frozen=True)
class SyntheticSettings:
    days: int = 7
    samples_per_hour: int = 60
    seed: int = 0
    node_peak_pu: float = 0.3
    pv_level: float = 0.8
    ar_coefficient: float = 0.9
    day_scale_std: float = 0.10
    start: str = "2024-06-01T00:00:00"

    def __post_init__(self):
        if self.days < 2:
            raise ParameterError("synthetic data needs at least two days")
        if self.samples_per_hour < 2:
            raise ParameterError("samples per hour must be at least 2")
        if not 0 <= self.ar_coefficient < 1:
            raise ParameterError("AR coefficient must lie in [0, 1)")


@dataclass
class SyntheticDataset:
    feeder: Feeder
    truth: Dict[str, Dict[str, HighResSeries]]
    archetypes: Dict[str, str]
    settings: SyntheticSettings

    def teacher_order(self) -> List[str]:
        """Transformers ordered so that every prefix of length 2k covers k archetypes in pairs."""
        by_type: Dict[str, List[str]] = {}
        for tid in sorted(self.truth):
            by_type.setdefault(self.archetypes[tid], []).append(tid)
        order: List[str] = []
        rounds = max(len(v) for v in by_type.values()) if by_type else 0
        for start in range(0, rounds, 2):
            for name in ARCHETYPE_NAMES:
                order += by_type.get(name, [])[start:start + 2]
        return order

    def select_teachers(self, count: int) -> List[str]:
        if count < 0 or count > len(self.truth):
            raise ParameterError(f"teacher count must lie in [0, {len(self.truth)}]")
        return self.teacher_order()[:count]

    def pmu(self, teacher_ids: Sequence[str]) -> Dict[str, Dict[str, HighResSeries]]:
        return {tid: dict(self.truth[tid]) for tid in teacher_ids}

    def sm(self) -> Dict[str, Dict[str, HourlySeries]]:
        return {tid: {q: s.to_hourly() for q, s in data.items()} for tid, data in self.truth.items()}


def _ar1(rng: np.random.Generator, shape: Tuple[int, int], phi: float) -> np.ndarray:
    """Unit-variance AR(1) along the last axis, restarted every hour."""
    shocks = rng.standard_normal(shape)
    out = np.empty(shape)
    out[:, 0] = shocks[:, 0]
    scale = np.sqrt(1.0 - phi * phi)
    for k in range(1, shape[1]):
        out[:, k] = phi * out[:, k - 1] + scale * shocks[:, k]
    return out


def load_samples(archetype: Archetype, peak_kw: float, settings: SyntheticSettings,
                 rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    hours = settings.days * 24
    day_scale = 1.0 + settings.day_scale_std * rng.standard_normal(settings.days)
    hourly = peak_kw * np.tile(archetype.shape, settings.days) * np.repeat(np.clip(day_scale, 0.5, 1.5), 24)
    noise = _ar1(rng, (hours, settings.samples_per_hour), settings.ar_coefficient)
    p = np.clip(hourly[:, None] * (1.0 + archetype.volatility * noise), 0.0, None)
    q_noise = _ar1(rng, (hours, settings.samples_per_hour), settings.ar_coefficient)
    q = np.clip(archetype.reactive_ratio * p * (1.0 + 0.5 * archetype.volatility * q_noise), 0.0, None)
    return p, q


def pv_samples(capacity_kw: float, settings: SyntheticSettings, rng: np.random.Generator) -> np.ndarray:
    hours = np.arange(settings.days * 24)
    clouds = np.clip(1.0 - 0.25 * rng.beta(0.5, 3.0, settings.days), 0.0, 1.0)
    hourly = settings.pv_level * capacity_kw * pv_shape(hours) * np.repeat(clouds, 24)
    noise = _ar1(rng, (hours.size, settings.samples_per_hour), settings.ar_coefficient)
    return np.clip(hourly[:, None] * (1.0 + 0.05 * noise), 0.0, capacity_kw)


def generate_dataset(feeder: Feeder, settings: Optional[SyntheticSettings] = None) -> SyntheticDataset:
    """Ground-truth high-resolution series for every transformer of ``feeder``."""
    settings = settings or SyntheticSettings()
    if not feeder.transformers:
        raise ParameterError("feeder maps no service transformers")
    per_node: Dict[Tuple[str, str], List[str]] = {}
    for t in feeder.transformers:
        per_node.setdefault((t.bus, t.phase), []).append(t.id)

    start = np.datetime64(settings.start, "s")
    hour_start = start + np.arange(settings.days * 24) * np.timedelta64(3600, "s")
    base = feeder.base_power_kva
    truth: Dict[str, Dict[str, HighResSeries]] = {}
    archetypes: Dict[str, str] = {}
    pv_done = set()

    for k, t in enumerate(sorted(feeder.transformers, key=lambda tr: tr.id)):
        rng = np.random.default_rng(np.random.SeedSequence([settings.seed, k]))
        archetype = ARCHETYPES[ARCHETYPE_NAMES[k % len(ARCHETYPE_NAMES)]]
        share = settings.node_peak_pu * base / len(per_node[(t.bus, t.phase)])
        p, q = load_samples(archetype, share * rng.uniform(0.8, 1.0), settings, rng)
        data = {"p": HighResSeries(t.id, hour_start, p), "q": HighResSeries(t.id, hour_start, q)}
        node = (t.bus, t.phase)
        if node in feeder.pv_nodes and node not in pv_done:
            capacity = feeder.bus(t.bus).pv.s_cap * base
            data["pv"] = HighResSeries(t.id, hour_start, pv_samples(capacity, settings, rng))
            pv_done.add(node)
        truth[t.id] = data
        archetypes[t.id] = archetype.name

    missing = [node for node in feeder.pv_nodes if node not in pv_done]
    if missing:
        logger.warning("pv nodes without a mapped transformer", nodes=[list(n) for n in missing])
    logger.info("synthetic dataset generated", transformers=len(truth), days=settings.days,
                samples_per_hour=settings.samples_per_hour, seed=settings.seed)
    return SyntheticDataset(feeder, truth, archetypes, settings)


def write_dataset(dataset: SyntheticDataset, pmu_dir: Union[str, Path], sm_dir: Union[str, Path],
                  teacher_ids: Sequence[str]) -> None:
    """One PMU CSV per teacher, one SM CSV per transformer."""
    pmu_dir, sm_dir = Path(pmu_dir), Path(sm_dir)
    pmu_dir.mkdir(parents=True, exist_ok=True)
    sm_dir.mkdir(parents=True, exist_ok=True)
    for tid, data in dataset.pmu(teacher_ids).items():
        write_series(pmu_dir / f"{tid}.csv", {tid: data})
    for tid, data in dataset.sm().items():
        write_series(sm_dir / f"{tid}.csv", {tid: data})
    logger.info("synthetic files written", pmu=len(teacher_ids), sm=len(dataset.truth))


def moments_from_profile(
    feeder: Feeder,
    horizon: int = 24,
    start_hour: int = 0,
    load_level: float = 0.3,
    relative_sigma: float = 0.1,
    pv_level: float = 0.6,
    archetype: str = "residential",
    reactive_ratio: Optional[float] = None,
) -> MomentAmbiguitySet:
    """Diagonal moment set straight from a daily shape with sigma = relative_sigma * mu."""
    shape = ARCHETYPES[archetype].shape
    ratio = ARCHETYPES[archetype].reactive_ratio if reactive_ratio is None else reactive_ratio
    keys, mu = [], []
    for h in range(start_hour, start_hour + horizon):
        p_level = load_level * shape[h % 24]
        for b, ph in feeder.nodes:
            keys.append(("p_L", b, ph, h))
            mu.append(p_level)
        for b, ph in feeder.nodes:
            keys.append(("q_L", b, ph, h))
            mu.append(ratio * p_level)
        pg = {}
        for b, ph in feeder.pv_nodes:
            s_cap = feeder.bus(b).pv.s_cap
            pg[(b, ph)] = pv_level * s_cap * float(pv_shape(np.array([h]))[0])
            keys.append(("p_g", b, ph, h))
            mu.append(pg[(b, ph)])
        for b, ph in feeder.pv_nodes:
            keys.append(("Q_cap", b, ph, h))
            mu.append(pv_reactive_capability(feeder.bus(b).pv.s_cap, pg[(b, ph)]))
    mu_arr = np.array(mu)
    return MomentAmbiguitySet(tuple(keys), mu_arr, (relative_sigma * mu_arr) ** 2,
                              meta={"source": "profile", "archetype": archetype})
