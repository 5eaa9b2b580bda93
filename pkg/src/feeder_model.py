"""
Unbalanced three-phase radial feeder model.

Loads feeder documents, checks radiality, and builds the incidence and
voltage-sensitivity matrices (v = v_tilde + R p + X q) consumed by the
dispatch and validation modules.
"""

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import scipy.linalg
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from errors import CvrError, FeederValidationError, SchemaError, SensitivityError
from load_models import DEFAULT_KP, DEFAULT_KQ, PvInverter, ZipCoefficients

logger = structlog.get_logger(__name__)

PHASES: Tuple[str, str, str] = ("a", "b", "c")
PHASE_INDEX: Dict[str, int] = {p: i for i, p in enumerate(PHASES)}
ROTATION = np.exp(-2j * np.pi / 3)
SYMMETRY_TOLERANCE = 1e-12
SINGULAR_CONDITION = 1e12

FIXTURES_DIR = Path(__file__).resolve().parent / "fixtures"

Node = Tuple[str, str]


def _frozen_array(values, shape: Optional[Tuple[int, ...]] = None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


def _normalize_phases(phases: Union[str, Sequence[str]]) -> Tuple[str, ...]:
    return tuple(sorted(set(phases), key=lambda p: PHASE_INDEX.get(p, 99)))


@dataclass(frozen=True)
class Bus:
    id: str
    phases: Tuple[str, ...]
    zip: ZipCoefficients = field(default_factory=ZipCoefficients)
    pv: Optional[PvInverter] = None

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "phases", _normalize_phases(self.phases))

    @property
    def pv_phases(self) -> Tuple[str, ...]:
        if self.pv is None:
            return ()
        return _normalize_phases(self.pv.phases) if self.pv.phases else self.phases


@dataclass(frozen=True)
class Line:
    from_id: str
    to_id: str
    r: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "from_id", str(self.from_id))
        object.__setattr__(self, "to_id", str(self.to_id))
        object.__setattr__(self, "r", _frozen_array(self.r))
        object.__setattr__(self, "x", _frozen_array(self.x))


@dataclass(frozen=True)
class Transformer:
    """Service transformer mapped to a bus/phase of the feeder."""

    id: str
    bus: str
    phase: str


@dataclass(frozen=True)
class Feeder:
    buses: Tuple[Bus, ...]
    lines: Tuple[Line, ...]
    root_id: str
    v0: np.ndarray
    base_voltage_kv: float = 4.16
    base_power_kva: float = 100.0
    transformers: Tuple[Transformer, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "root_id", str(self.root_id))
        v0 = np.broadcast_to(np.asarray(self.v0, dtype=float), (3,))
        object.__setattr__(self, "v0", _frozen_array(v0))
        object.__setattr__(self, "transformers", tuple(self.transformers))

    @cached_property
    def bus_map(self) -> Dict[str, Bus]:
        return {bus.id: bus for bus in self.buses}

    def bus(self, bus_id: str) -> Bus:
        return self.bus_map[str(bus_id)]

    @cached_property
    def bus_order(self) -> Tuple[str, ...]:
        """Non-root bus ids in breadth-first order from the root."""
        graph = nx.DiGraph()
        graph.add_node(self.root_id)
        graph.add_edges_from((line.from_id, line.to_id) for line in self.lines)
        return tuple(j for _, j in nx.bfs_edges(graph, self.root_id))

    @cached_property
    def parent(self) -> Dict[str, str]:
        return {line.to_id: line.from_id for line in self.lines}

    @cached_property
    def line_into(self) -> Dict[str, Line]:
        return {line.to_id: line for line in self.lines}

    @cached_property
    def nodes(self) -> Tuple[Node, ...]:
        """Reduced (bus, phase) ordering shared by every matrix and vector."""
        return tuple((b, p) for b in self.bus_order for p in self.bus(b).phases)

    @cached_property
    def node_index(self) -> Dict[Node, int]:
        return {node: k for k, node in enumerate(self.nodes)}

    @cached_property
    def pv_nodes(self) -> Tuple[Node, ...]:
        """(bus, phase) pairs carrying an inverter, in node order."""
        return tuple(
            (b, p) for b, p in self.nodes if p in self.bus(b).pv_phases
        )

    def pv_capacity(self) -> np.ndarray:
        return np.array([self.bus(b).pv.s_cap for b, _ in self.pv_nodes], dtype=float)


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    buses: Tuple[str, ...] = ()
    lines: Tuple[Tuple[str, str], ...] = ()

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind,
            "message": self.message,
            "buses": list(self.buses),
            "lines": [list(pair) for pair in self.lines],
        }


@dataclass
class RadialReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, kind: str, message: str, buses=(), lines=()) -> None:
        self.violations.append(Violation(kind, message, tuple(buses), tuple(lines)))

    def to_dict(self) -> Dict:
        return {"ok": self.ok, "violations": [v.to_dict() for v in self.violations]}


@dataclass(frozen=True)
class IncidencePair:
    """Row k is the line into node k: +1 on the from-bus phase, -1 on the to-bus phase."""

    A0: np.ndarray
    A: np.ndarray
    nodes: Tuple[Node, ...]

    def full(self) -> np.ndarray:
        return np.hstack([self.A0, self.A])


@dataclass(frozen=True)
class SensitivityModel:
    R: np.ndarray
    X: np.ndarray
    v_tilde: np.ndarray
    nodes: Tuple[Node, ...]

    @cached_property
    def node_index(self) -> Dict[Node, int]:
        return {node: k for k, node in enumerate(self.nodes)}

    def voltages(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Squared voltages for net injections p, q (positive = injection)."""
        return self.v_tilde + self.R @ p + self.X @ q


# Feeder document schema

class ZipDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kp: List[float] = Field(default_factory=lambda: list(DEFAULT_KP), min_length=3, max_length=3)
    kq: List[float] = Field(default_factory=lambda: list(DEFAULT_KQ), min_length=3, max_length=3)
    normalized: bool = True


class PvDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    s_cap_kva: float = Field(..., ge=0, description="Per-phase inverter capacity")
    phases: Optional[str] = None


class BusDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    phases: str = Field(..., min_length=1, max_length=3)
    zip: ZipDocument = Field(default_factory=ZipDocument)
    pv: Optional[PvDocument] = None

    @field_validator("id", mode="before")
    @classmethod
    def coerce_id(cls, v):
        return str(v)

    @field_validator("phases", mode="before")
    @classmethod
    def validate_phases(cls, v):
        if isinstance(v, (list, tuple)):
            v = "".join(v)
        v = str(v).lower()
        if not v or any(p not in PHASE_INDEX for p in v) or len(set(v)) != len(v):
            raise ValueError(f"phases must be a non-empty subset of 'abc', got {v!r}")
        return v


class LineDocument(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    from_id: str = Field(..., alias="from")
    to_id: str = Field(..., alias="to")
    r: List[List[float]]
    x: List[List[float]]

    @field_validator("from_id", "to_id", mode="before")
    @classmethod
    def coerce_id(cls, v):
        return str(v)

    @field_validator("r", "x")
    @classmethod
    def validate_shape(cls, v):
        if len(v) != 3 or any(len(row) != 3 for row in v):
            raise ValueError("impedance matrices must be 3x3, row-major")
        return v


class TransformerDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    bus: str
    phase: str = Field(..., pattern="^[abc]$")

    @field_validator("id", "bus", mode="before")
    @classmethod
    def coerce_id(cls, v):
        return str(v)


class FeederDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    buses: List[BusDocument] = Field(..., min_length=1)
    lines: List[LineDocument] = Field(default_factory=list)
    root: str
    v0: Union[float, List[float]] = 1.0
    base_voltage_kv: float = Field(default=4.16, gt=0)
    base_power_kva: float = Field(default=100.0, gt=0)
    transformers: List[TransformerDocument] = Field(default_factory=list)

    @field_validator("root", mode="before")
    @classmethod
    def coerce_root(cls, v):
        return str(v)

    @field_validator("v0")
    @classmethod
    def validate_v0(cls, v):
        values = [v] if isinstance(v, (int, float)) else v
        if len(values) not in (1, 3) or any(x <= 0 for x in values):
            raise ValueError("v0 must be a positive scalar or three positive values")
        return v

    def to_feeder(self) -> Feeder:
        """Convert to the immutable domain feeder (kVA converted to per-unit)."""
        buses = []
        for k, doc in enumerate(self.buses):
            try:
                zip_coeffs = ZipCoefficients(tuple(doc.zip.kp), tuple(doc.zip.kq), doc.zip.normalized)
            except CvrError as e:
                raise SchemaError(f"buses.{k}.zip: {e.message}", {"bus": doc.id}) from e
            pv = None
            if doc.pv is not None:
                pv = PvInverter(
                    s_cap=doc.pv.s_cap_kva / self.base_power_kva,
                    phases=tuple(doc.pv.phases or ""),
                )
            buses.append(Bus(id=doc.id, phases=tuple(doc.phases), zip=zip_coeffs, pv=pv))
        lines = [Line(d.from_id, d.to_id, d.r, d.x) for d in self.lines]
        transformers = [Transformer(t.id, t.bus, t.phase) for t in self.transformers]
        return Feeder(
            buses=tuple(buses),
            lines=tuple(lines),
            root_id=self.root,
            v0=np.broadcast_to(np.asarray(self.v0, dtype=float), (3,)),
            base_voltage_kv=self.base_voltage_kv,
            base_power_kva=self.base_power_kva,
            transformers=tuple(transformers),
        )


def format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        loc = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{loc}: {item['msg']}")
    return "; ".join(parts)


def feeder_from_dict(data: Dict) -> Feeder:
    try:
        document = FeederDocument.model_validate(data)
    except ValidationError as e:
        raise SchemaError(format_validation_error(e), {"errors": e.errors(include_url=False)}) from e
    return document.to_feeder()


def load_feeder(path: Union[str, Path]) -> Feeder:
    """Read and schema-check a feeder JSON file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise SchemaError(f"cannot read feeder file {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    feeder = feeder_from_dict(data)
    logger.debug("feeder loaded", path=str(path), buses=len(feeder.buses), lines=len(feeder.lines))
    return feeder


def load_bundled_feeder(name: str) -> Feeder:
    return load_feeder(FIXTURES_DIR / f"{name}.json")


# Topology

def validate_radial(feeder: Feeder) -> RadialReport:
    """Check the structural invariants of a radial three-phase feeder."""
    report = RadialReport()
    ids = [bus.id for bus in feeder.buses]
    known = set(ids)

    duplicates = sorted({i for i in ids if ids.count(i) > 1})
    if duplicates:
        report.add("duplicate bus", f"duplicate bus ids: {', '.join(duplicates)}", buses=duplicates)

    if feeder.root_id not in known:
        report.add("unknown root", f"root bus {feeder.root_id!r} is not defined", buses=[feeder.root_id])

    for bus in feeder.buses:
        if not bus.phases or any(p not in PHASE_INDEX for p in bus.phases):
            report.add("phases", f"bus {bus.id} must have a non-empty subset of phases abc", buses=[bus.id])
        if bus.pv is not None and not set(bus.pv_phases) <= set(bus.phases):
            report.add("phases", f"PV phases at bus {bus.id} are not present on the bus", buses=[bus.id])

    valid_lines = []
    for line in feeder.lines:
        pair = (line.from_id, line.to_id)
        missing = [b for b in pair if b not in known]
        if missing:
            report.add("dangling endpoint", f"line {pair[0]}->{pair[1]} references unknown bus {missing[0]}",
                       buses=missing, lines=[pair])
        elif line.from_id == line.to_id:
            report.add("self loop", f"line {pair[0]}->{pair[1]} connects a bus to itself", lines=[pair])
        else:
            valid_lines.append(line)

    if len(feeder.lines) != len(feeder.buses) - 1:
        report.add(
            "not radial",
            f"not radial: |E| ≠ |N|−1 ({len(feeder.lines)} lines, {len(feeder.buses)} buses)",
        )

    graph = nx.Graph()
    graph.add_nodes_from(known)
    for line in valid_lines:
        if graph.has_edge(line.from_id, line.to_id):
            report.add("parallel lines", f"more than one line between {line.from_id} and {line.to_id}",
                       lines=[(line.from_id, line.to_id)])
        graph.add_edge(line.from_id, line.to_id)

    for cycle in nx.cycle_basis(graph):
        report.add("cycle", f"not radial: cycle through {', '.join(map(str, cycle))}", buses=cycle)

    if feeder.root_id in known:
        reachable = nx.node_connected_component(graph, feeder.root_id)
        isolated = sorted(known - reachable)
        if isolated:
            report.add("disconnected", f"buses not connected to the root: {', '.join(isolated)}", buses=isolated)

    incoming: Dict[str, List[Line]] = {}
    for line in valid_lines:
        incoming.setdefault(line.to_id, []).append(line)
    for bus_id in ids:
        count = len(incoming.get(bus_id, []))
        if bus_id == feeder.root_id and count:
            report.add("predecessor", f"root bus {bus_id} has an incoming line", buses=[bus_id])
        elif bus_id != feeder.root_id and count != 1:
            report.add("predecessor", f"bus {bus_id} has {count} predecessors, expected exactly one",
                       buses=[bus_id])

    buses = feeder.bus_map
    for line in valid_lines:
        pair = (line.from_id, line.to_id)
        to_phases = set(buses[line.to_id].phases)
        if not to_phases <= set(buses[line.from_id].phases):
            report.add("phase mismatch",
                       f"line {pair[0]}->{pair[1]} phases {''.join(sorted(to_phases))} "
                       f"not present at bus {line.from_id}", lines=[pair])
        _check_impedance(line, to_phases, report)

    if not report.ok:
        logger.debug("feeder validation failed", violations=len(report.violations))
    return report


def _check_impedance(line: Line, phases: set, report: RadialReport) -> None:
    pair = (line.from_id, line.to_id)
    for name, matrix in (("r", line.r), ("x", line.x)):
        if matrix.shape != (3, 3) or not np.all(np.isfinite(matrix)):
            report.add("impedance", f"line {pair[0]}->{pair[1]} {name} must be a finite 3x3 matrix", lines=[pair])
            continue
        if not np.allclose(matrix, matrix.T, rtol=0.0, atol=SYMMETRY_TOLERANCE):
            report.add("impedance", f"line {pair[0]}->{pair[1]} {name} is not symmetric", lines=[pair])
        absent = [PHASE_INDEX[p] for p in PHASES if p not in phases]
        if absent and (np.any(matrix[absent, :] != 0) or np.any(matrix[:, absent] != 0)):
            report.add("impedance", f"line {pair[0]}->{pair[1]} {name} has entries on absent phases",
                       lines=[pair])
    if line.r.shape == (3, 3) and np.any(np.diag(line.r) < 0):
        report.add("impedance", f"line {pair[0]}->{pair[1]} has negative self resistance", lines=[pair])


def _require_radial(feeder: Feeder) -> None:
    report = validate_radial(feeder)
    if not report.ok:
        raise FeederValidationError(
            "; ".join(v.message for v in report.violations),
            report.to_dict(),
        )


def build_incidence(feeder: Feeder) -> IncidencePair:
    """Reduced incidence [A0 | A] with rows ordered like ``feeder.nodes``."""
    _require_radial(feeder)
    nodes = feeder.nodes
    index = feeder.node_index
    A0 = np.zeros((len(nodes), 3))
    A = np.zeros((len(nodes), len(nodes)))
    for k, (bus_id, phase) in enumerate(nodes):
        upstream = feeder.parent[bus_id]
        if upstream == feeder.root_id:
            A0[k, PHASE_INDEX[phase]] = 1.0
        else:
            A[k, index[(upstream, phase)]] = 1.0
        A[k, k] = -1.0
    return IncidencePair(A0=_frozen_array(A0), A=_frozen_array(A), nodes=nodes)


def rotation_matrix() -> np.ndarray:
    """Gamma[phi, psi] = alpha ** ((phi - psi) mod 3)."""
    idx = np.arange(3)
    return ROTATION ** ((idx[:, None] - idx[None, :]) % 3)


def three_phase_effective_impedance(line: Line) -> Tuple[np.ndarray, np.ndarray]:
    gamma = rotation_matrix()
    r_bar = gamma.real * line.r + gamma.imag * line.x
    x_bar = gamma.real * line.x - gamma.imag * line.r
    return r_bar, x_bar


def _line_blocks(feeder: Feeder) -> Tuple[np.ndarray, np.ndarray]:
    r_blocks, x_blocks = [], []
    for bus_id in feeder.bus_order:
        r_bar, x_bar = three_phase_effective_impedance(feeder.line_into[bus_id])
        idx = [PHASE_INDEX[p] for p in feeder.bus(bus_id).phases]
        r_blocks.append(r_bar[np.ix_(idx, idx)])
        x_blocks.append(x_bar[np.ix_(idx, idx)])
    return scipy.linalg.block_diag(*r_blocks), scipy.linalg.block_diag(*x_blocks)


def build_sensitivities(feeder: Feeder, incidence: IncidencePair) -> SensitivityModel:
    """R = 2 A^-1 D_r A^-T, X = 2 A^-1 D_x A^-T, v_tilde = -A^-1 A0 v0."""
    A = np.asarray(incidence.A)
    try:
        condition = np.linalg.cond(A)
        if not np.isfinite(condition) or condition > SINGULAR_CONDITION:
            raise SensitivityError("reduced incidence matrix is singular", {"condition": float(condition)})
        A_inv = scipy.linalg.inv(A)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise SensitivityError(f"reduced incidence matrix is singular: {e}") from e

    D_r, D_x = _line_blocks(feeder)
    R = 2.0 * A_inv @ D_r @ A_inv.T
    X = 2.0 * A_inv @ D_x @ A_inv.T
    v_tilde = -A_inv @ incidence.A0 @ feeder.v0
    logger.debug("sensitivities built", nodes=len(incidence.nodes), condition=float(condition))
    return SensitivityModel(
        R=_frozen_array(R), X=_frozen_array(X), v_tilde=_frozen_array(v_tilde), nodes=incidence.nodes
    )


def sensitivities_for(feeder: Feeder) -> SensitivityModel:
    return build_sensitivities(feeder, build_incidence(feeder))


def lindistflow_recursive(feeder: Feeder, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Squared voltages by summing subtree flows and stepping down from the root."""
    _require_radial(feeder)
    index = feeder.node_index
    p_flow: Dict[str, np.ndarray] = {}
    q_flow: Dict[str, np.ndarray] = {}
    for bus_id in reversed(feeder.bus_order):
        phases = feeder.bus(bus_id).phases
        p_flow[bus_id] = -np.array([p[index[(bus_id, ph)]] for ph in phases])
        q_flow[bus_id] = -np.array([q[index[(bus_id, ph)]] for ph in phases])
        for line in feeder.lines:
            if line.from_id != bus_id:
                continue
            for k, ph in enumerate(feeder.bus(line.to_id).phases):
                pos = phases.index(ph)
                p_flow[bus_id][pos] += p_flow[line.to_id][k]
                q_flow[bus_id][pos] += q_flow[line.to_id][k]

    v = np.zeros(len(feeder.nodes))
    head = {ph: feeder.v0[PHASE_INDEX[ph]] for ph in PHASES}
    for bus_id in feeder.bus_order:
        upstream = feeder.parent[bus_id]
        phases = feeder.bus(bus_id).phases
        idx = [PHASE_INDEX[ph] for ph in phases]
        r_bar, x_bar = three_phase_effective_impedance(feeder.line_into[bus_id])
        drop = 2.0 * (r_bar[np.ix_(idx, idx)] @ p_flow[bus_id] + x_bar[np.ix_(idx, idx)] @ q_flow[bus_id])
        for k, ph in enumerate(phases):
            v_up = head[ph] if upstream == feeder.root_id else v[index[(upstream, ph)]]
            v[index[(bus_id, ph)]] = v_up - drop[k]
    return v
