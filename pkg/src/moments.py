"""
Moment ambiguity sets: the layout of the uncertainty vector, Gaussian MLE of
means and covariances from enriched samples, and the moments.json format.
"""

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from enrichment import HighResSeries, HourlySeries
from errors import DataError, MomentLayoutError, ParameterError, SchemaError
from feeder_model import Feeder, Node, format_validation_error
from load_models import pv_reactive_capability

logger = structlog.get_logger(__name__)

QUANTITY_NAMES: Tuple[str, str, str, str] = ("p_L", "q_L", "p_g", "Q_cap")
CORRELATION_GROUPS = ("none", "bus-hour", "hour")

MomentKey = Tuple[str, str, str, int]


@dataclass(frozen=True)
class UncertaintyVectorLayout:
    """Time-major ordering of xi: per hour [p_L nodes; q_L nodes; p_g PV nodes; Q_cap PV nodes]."""

    nodes: Tuple[Node, ...]
    pv_nodes: Tuple[Node, ...]
    hours: Tuple[int, ...]

    @classmethod
    def for_feeder(cls, feeder: Feeder, start_hour: int, horizon: int) -> "UncertaintyVectorLayout":
        if horizon < 1 or start_hour < 0:
            raise ParameterError("horizon must be >= 1 and start hour >= 0")
        return cls(feeder.nodes, feeder.pv_nodes, tuple(range(start_hour, start_hour + horizon)))

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def g(self) -> int:
        return len(self.pv_nodes)

    @property
    def block_size(self) -> int:
        return 2 * self.n + 2 * self.g

    @property
    def size(self) -> int:
        return self.block_size * len(self.hours)

    def offset(self, quantity: str) -> int:
        return {"p_L": 0, "q_L": self.n, "p_g": 2 * self.n, "Q_cap": 2 * self.n + self.g}[quantity]

    def block_keys(self, hour: int) -> List[MomentKey]:
        keys = [("p_L", b, p, hour) for b, p in self.nodes]
        keys += [("q_L", b, p, hour) for b, p in self.nodes]
        keys += [("p_g", b, p, hour) for b, p in self.pv_nodes]
        keys += [("Q_cap", b, p, hour) for b, p in self.pv_nodes]
        return keys

    def keys(self) -> List[MomentKey]:
        return [k for h in self.hours for k in self.block_keys(h)]

    @cached_property
    def _index(self) -> Dict[MomentKey, int]:
        return {k: i for i, k in enumerate(self.keys())}

    def index(self, quantity: str, bus: str, phase: str, hour: int) -> int:
        return self._index[(quantity, bus, phase, hour)]

    def key(self, flat: int) -> MomentKey:
        return self.keys()[flat]

    def hour_slice(self, position: int) -> slice:
        start = position * self.block_size
        return slice(start, start + self.block_size)


@dataclass(frozen=True)
class CovarianceGroup:
    indices: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True)
class MomentAmbiguitySet:
    keys: Tuple[MomentKey, ...]
    mu: np.ndarray
    variance: np.ndarray
    groups: Tuple[CovarianceGroup, ...] = ()
    low_confidence: bool = False
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        var = np.asarray(self.variance, dtype=float)
        if mu.shape != (len(self.keys),) or var.shape != mu.shape:
            raise MomentLayoutError("mu and variance must have one entry per key")
        if np.any(var < 0) or not (np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise DataError("moments must be finite with nonnegative variances")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "variance", var)
        object.__setattr__(self, "keys", tuple(tuple(k) for k in self.keys))

    @cached_property
    def index(self) -> Dict[MomentKey, int]:
        return {k: i for i, k in enumerate(self.keys)}

    @property
    def hours(self) -> List[int]:
        return sorted({k[3] for k in self.keys})

    def covariance(self, indices: Sequence[int]) -> np.ndarray:
        """Dense covariance of the entries at ``indices``."""
        indices = np.asarray(indices, dtype=int)
        cov = np.diag(self.variance[indices])
        where = {int(i): k for k, i in enumerate(indices)}
        for group in self.groups:
            local = [(where[int(g)], k) for k, g in enumerate(group.indices) if int(g) in where]
            if not local:
                continue
            rows, cols = zip(*local)
            cov[np.ix_(rows, rows)] = group.covariance[np.ix_(cols, cols)]
        return cov

    def restrict(self, layout: UncertaintyVectorLayout) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Mean vector and per-hour covariance blocks in layout order."""
        missing = [k for k in layout.keys() if k not in self.index]
        if missing:
            raise MomentLayoutError(
                f"moments do not cover {len(missing)} entries of the uncertainty vector",
                {"first_missing": list(missing[0])},
            )
        mu = np.empty(layout.size)
        blocks = []
        for position, hour in enumerate(layout.hours):
            idx = [self.index[k] for k in layout.block_keys(hour)]
            mu[layout.hour_slice(position)] = self.mu[idx]
            blocks.append(self.covariance(idx))
        return mu, blocks

    def with_zero_covariance(self) -> "MomentAmbiguitySet":
        return replace(self, variance=np.zeros_like(self.variance), groups=())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "entries": [
                {"quantity": q, "bus": b, "phase": p, "hour": int(h), "mu": float(m), "var": float(v)}
                for (q, b, p, h), m, v in zip(self.keys, self.mu, self.variance)
            ],
            "groups": [
                {"members": [int(i) for i in g.indices], "cov": g.covariance.tolist()} for g in self.groups
            ],
            "low_confidence": self.low_confidence,
            "meta": self.meta,
        }


# Estimation

def project_psd(cov: np.ndarray) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    values, vectors = np.linalg.eigh(cov)
    if values.min(initial=0.0) >= 0:
        return cov
    return (vectors * np.clip(values, 0.0, None)) @ vectors.T


def symmetric_sqrt(cov: np.ndarray) -> np.ndarray:
    """S with S @ S = cov for a PSD matrix (negative eigenvalues clipped)."""
    values, vectors = np.linalg.eigh(0.5 * (cov + cov.T))
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def derive_qcap_samples(pg: np.ndarray, s_cap: float) -> np.ndarray:
    pg = np.asarray(pg, dtype=float)
    over = pg > s_cap
    if np.any(over):
        logger.warning("pv output clipped to inverter capacity", count=int(over.sum()), s_cap=s_cap)
    return pv_reactive_capability(s_cap, np.clip(pg, 0.0, s_cap))


def _sort_key(key: MomentKey):
    q, b, p, h = key
    return (h, QUANTITY_NAMES.index(q), b, p)


def estimate_moments(
    samples: Mapping[MomentKey, np.ndarray],
    groups: str = "none",
    pv_capacity: Optional[Mapping[Node, float]] = None,
    low_confidence: bool = False,
    meta: Optional[Dict[str, Any]] = None,
) -> MomentAmbiguitySet:
    """Gaussian MLE (1/N normalization) per entry, cross-covariance within groups."""
    if groups not in CORRELATION_GROUPS:
        raise ParameterError(f"correlation groups must be one of {CORRELATION_GROUPS}, got {groups!r}")
    data = {tuple(k): np.asarray(v, dtype=float).ravel() for k, v in samples.items()}
    for (q, b, p, h), pg in list(data.items()):
        if q == "p_g" and pv_capacity and (b, p) in pv_capacity and ("Q_cap", b, p, h) not in data:
            data[("Q_cap", b, p, h)] = derive_qcap_samples(pg, pv_capacity[(b, p)])

    for key, values in data.items():
        if values.size < 2:
            raise DataError(f"entry {key} has fewer than two samples")
        if not np.all(np.isfinite(values)):
            raise DataError(f"entry {key} contains non-finite samples")

    keys = sorted(data, key=_sort_key)
    mu = np.array([data[k].mean() for k in keys])
    var = np.array([data[k].var() for k in keys])

    cov_groups = []
    if groups != "none":
        members: Dict[tuple, List[int]] = {}
        for i, (q, b, p, h) in enumerate(keys):
            members.setdefault((h,) if groups == "hour" else (b, h), []).append(i)
        for label, idx in members.items():
            if len(idx) < 2:
                continue
            lengths = {data[keys[i]].size for i in idx}
            if len(lengths) != 1:
                logger.warning("group samples not aligned; keeping diagonal", group=list(label))
                continue
            stacked = np.vstack([data[keys[i]] for i in idx])
            cov = project_psd(np.cov(stacked, bias=True))
            cov_groups.append(CovarianceGroup(np.array(idx), cov))

    return MomentAmbiguitySet(tuple(keys), mu, var, tuple(cov_groups), low_confidence, dict(meta or {}))


def _aggregate(feeder: Feeder, series: Mapping[str, Mapping[str, Union[HighResSeries, HourlySeries]]]):
    totals: Dict[Tuple[str, Node], np.ndarray] = {}
    mapped = {t.id for t in feeder.transformers}
    for tid in sorted(set(series) - mapped):
        logger.warning("transformer not mapped to the feeder", transformer=tid)
    for transformer in feeder.transformers:
        if transformer.id not in series:
            raise DataError(f"no measurements for mapped transformer {transformer.id}")
        node = (transformer.bus, transformer.phase)
        if node not in feeder.node_index:
            raise DataError(f"transformer {transformer.id} maps to unknown node {node}")
        for quantity, s in series[transformer.id].items():
            values = s.samples if isinstance(s, HighResSeries) else s.values
            key = (quantity, node)
            totals[key] = totals[key] + values if key in totals else np.array(values, dtype=float)
    return totals


def _multiplier(values: np.ndarray, base_kva: float, label: str) -> np.ndarray:
    m = values / base_kva
    outside = (m < 0) | (m > 1)
    if np.any(outside):
        logger.warning("multipliers regularized to [0, 1]", entry=label, count=int(outside.sum()))
    return np.clip(m, 0.0, 1.0)


def node_samples(
    feeder: Feeder, series: Mapping[str, Mapping[str, HighResSeries]]
) -> Dict[MomentKey, np.ndarray]:
    """Within-hour per-unit samples per (quantity, bus, phase, hour)."""
    totals = _aggregate(feeder, series)
    hours = {v.shape[0] for v in totals.values()}
    width = {v.shape[1] for v in totals.values()}
    if len(hours) > 1 or len(width) > 1:
        raise DataError("transformer series do not share the same hours and resolution")
    n_hours, n_samples = (hours.pop(), width.pop()) if totals else (0, 0)
    zeros = np.zeros((n_hours, n_samples))
    base = feeder.base_power_kva

    out: Dict[MomentKey, np.ndarray] = {}
    for node in feeder.nodes:
        p = _multiplier(totals.get(("p", node), zeros), base, f"p_L {node}")
        q = _multiplier(totals.get(("q", node), zeros), base, f"q_L {node}")
        for h in range(n_hours):
            out[("p_L", *node, h)] = p[h]
            out[("q_L", *node, h)] = q[h]
    for node in feeder.pv_nodes:
        pg = np.clip(totals.get(("pv", node), zeros) / base, 0.0, None)
        for h in range(n_hours):
            out[("p_g", *node, h)] = pg[h]
    return out


def sm_only_samples(
    feeder: Feeder, sm: Mapping[str, Mapping[str, HourlySeries]]
) -> Dict[MomentKey, np.ndarray]:
    """Samples for hour h are the hourly values at the same hour of day on every day."""
    totals = _aggregate(feeder, sm)
    first = next((s for data in sm.values() for s in data.values()), None)
    if first is None:
        raise DataError("no smart-meter data")
    hour_of_day = (first.timestamps.astype("datetime64[h]").astype(np.int64)) % 24
    n_hours = hour_of_day.size
    groups = {h: np.flatnonzero(hour_of_day == h) for h in range(24)}
    if min((g.size for g in groups.values() if g.size), default=0) < 2:
        raise DataError("hour-of-day moments need at least two days of smart-meter data")
    zeros = np.zeros(n_hours)
    base = feeder.base_power_kva

    out: Dict[MomentKey, np.ndarray] = {}
    for node in feeder.nodes:
        p = _multiplier(totals.get(("p", node), zeros), base, f"p_L {node}")
        q = _multiplier(totals.get(("q", node), zeros), base, f"q_L {node}")
        for h in range(n_hours):
            same = groups[int(hour_of_day[h])]
            out[("p_L", *node, h)] = p[same]
            out[("q_L", *node, h)] = q[same]
    for node in feeder.pv_nodes:
        pg = np.clip(totals.get(("pv", node), zeros) / base, 0.0, None)
        for h in range(n_hours):
            out[("p_g", *node, h)] = pg[groups[int(hour_of_day[h])]]
    return out


def pv_capacity_map(feeder: Feeder) -> Dict[Node, float]:
    return {node: feeder.bus(node[0]).pv.s_cap for node in feeder.pv_nodes}


# moments.json

class MomentEntryDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    quantity: str
    bus: str
    phase: str = Field(..., pattern="^[abc]$")
    hour: int = Field(..., ge=0)
    mu: float
    var: float = Field(..., ge=0)

    @field_validator("quantity")
    @classmethod
    def validate_quantity(cls, v):
        if v not in QUANTITY_NAMES:
            raise ValueError(f"quantity must be one of {QUANTITY_NAMES}")
        return v

    @field_validator("bus", mode="before")
    @classmethod
    def coerce_bus(cls, v):
        return str(v)


class GroupDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    members: List[int] = Field(..., min_length=1)
    cov: List[List[float]]


class MomentsDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    entries: List[MomentEntryDocument]
    groups: List[GroupDocument] = Field(default_factory=list)
    low_confidence: bool = False
    meta: Dict[str, Any] = Field(default_factory=dict)
    timing: Dict[str, Any] = Field(default_factory=dict)

    def to_moments(self) -> MomentAmbiguitySet:
        keys = tuple((e.quantity, e.bus, e.phase, e.hour) for e in self.entries)
        if len(set(keys)) != len(keys):
            raise SchemaError("entries: duplicate (quantity, bus, phase, hour) keys")
        groups = []
        for k, g in enumerate(self.groups):
            size = len(g.members)
            if any(m < 0 or m >= len(keys) for m in g.members):
                raise SchemaError(f"groups.{k}.members: index out of range")
            cov = np.asarray(g.cov, dtype=float)
            if cov.shape != (size, size):
                raise SchemaError(f"groups.{k}.cov: expected a {size}x{size} matrix")
            groups.append(CovarianceGroup(np.asarray(g.members), project_psd(cov)))
        return MomentAmbiguitySet(
            keys,
            np.array([e.mu for e in self.entries]),
            np.array([e.var for e in self.entries]),
            tuple(groups),
            self.low_confidence,
            dict(self.meta),
        )


def load_moments(path: Union[str, Path]) -> MomentAmbiguitySet:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise SchemaError(f"cannot read moments file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    try:
        return MomentsDocument.model_validate(data).to_moments()
    except ValidationError as e:
        raise SchemaError(format_validation_error(e)) from e


def save_moments(path: Union[str, Path], moments: MomentAmbiguitySet, timing: Optional[Dict] = None) -> None:
    document = moments.to_dict()
    document["timing"] = timing or {}
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=True), encoding="utf-8")
