"""DC network model: case files, measurement layout, Jacobian and power flow."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    CaseParseError,
    CaseValidationError,
    ConnectivityError,
    LayoutMismatchError,
    SingularSystemError,
)

CLOSED = "closed"
OPEN = "open"

INJECTION = "injection"
FLOW_FROM = "flow_from"
FLOW_TO = "flow_to"


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    susceptance: float
    status: str = CLOSED

    @property
    def closed(self) -> bool:
        return self.status == CLOSED

    @property
    def label(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


@dataclass(frozen=True)
class GridCase:
    name: str
    slack_bus: int
    buses: tuple[int, ...]
    branches: tuple[Branch, ...]
    operating_injections: Mapping[int, float] | None = None

    def __post_init__(self):
        validate_case(self)

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def state_buses(self) -> tuple[int, ...]:
        """Buses carrying a state variable (all but the slack), in bus order."""
        return tuple(b for b in self.buses if b != self.slack_bus)

    def branch_index(self, from_bus: int, to_bus: int) -> int:
        """0-based index of the branch joining two buses (either orientation)."""
        pair = {from_bus, to_bus}
        for k, br in enumerate(self.branches):
            if {br.from_bus, br.to_bus} == pair:
                return k
        raise CaseValidationError(f"no branch between buses {from_bus} and {to_bus}")

    def statuses(self, topology: Mapping[int, str] | None = None) -> tuple[str, ...]:
        status = [br.status for br in self.branches]
        for k, s in (topology or {}).items():
            if s not in (CLOSED, OPEN):
                raise CaseValidationError(f"bad branch status {s!r}")
            if not 0 <= k < len(status):
                raise CaseValidationError(f"branch index {k} out of range")
            status[k] = s
        return tuple(status)

    def injection_vector(self, injections: Mapping[int, float] | None = None) -> np.ndarray:
        """Per-bus injections in bus order with the slack balancing the rest."""
        injections = self.operating_injections if injections is None else injections
        if injections is None:
            raise CaseValidationError(f"case {self.name!r} has no operating injections")
        p = np.array([float(injections.get(b, 0.0)) for b in self.buses])
        s = self.buses.index(self.slack_bus)
        p[s] = 0.0
        p[s] = -p.sum()
        return p


def _components(buses: Sequence[int], edges: Sequence[tuple[int, int]]) -> list[set[int]]:
    parent = {b: b for b in buses}

    def find(b):
        while parent[b] != b:
            parent[b] = parent[parent[b]]
            b = parent[b]
        return b

    for i, j in edges:
        parent[find(i)] = find(j)
    groups: dict[int, set[int]] = {}
    for b in buses:
        groups.setdefault(find(b), set()).add(b)
    return list(groups.values())


def check_connected(case: GridCase, statuses: Sequence[str]) -> None:
    edges = [(br.from_bus, br.to_bus) for br, s in zip(case.branches, statuses) if s == CLOSED]
    comps = _components(case.buses, edges)
    if len(comps) > 1:
        main = next(c for c in comps if case.slack_bus in c)
        isolated = sorted(b for b in case.buses if b not in main)
        raise ConnectivityError(
            f"closed branches leave buses {isolated} disconnected from slack bus {case.slack_bus}",
            isolated,
        )


def validate_case(case: GridCase) -> None:
    if len(set(case.buses)) != len(case.buses):
        raise CaseValidationError("duplicate bus ids")
    if case.slack_bus not in case.buses:
        raise CaseValidationError(f"slack bus {case.slack_bus} is not a bus of the case")
    known = set(case.buses)
    seen = set()
    for k, br in enumerate(case.branches):
        if br.from_bus not in known or br.to_bus not in known:
            raise CaseValidationError(f"branch {k + 1} ({br.label}) references an unknown bus")
        if br.from_bus == br.to_bus:
            raise CaseValidationError(f"branch {k + 1} is a self-loop")
        if not br.susceptance > 0:
            raise CaseValidationError(f"branch {k + 1} ({br.label}) has non-positive susceptance")
        if br.status not in (CLOSED, OPEN):
            raise CaseValidationError(f"branch {k + 1} has bad status {br.status!r}")
        pair = frozenset((br.from_bus, br.to_bus))
        if pair in seen:
            raise CaseValidationError(f"duplicate branch {br.label}")
        seen.add(pair)
    if case.operating_injections is not None:
        unknown = set(case.operating_injections) - known
        if unknown:
            raise CaseValidationError(f"injections given for unknown buses {sorted(unknown)}")
    check_connected(case, [br.status for br in case.branches])


def case_from_dict(doc: dict) -> GridCase:
    try:
        branches = tuple(
            Branch(int(b["from"]), int(b["to"]), float(b["susceptance"]), b.get("status", CLOSED))
            for b in doc["branches"]
        )
        inj = doc.get("injections_pu")
        if inj is not None:
            inj = {int(k): float(v) for k, v in inj.items()}
        return GridCase(
            name=str(doc.get("name", "")),
            slack_bus=int(doc["slack_bus"]),
            buses=tuple(int(b) for b in doc["buses"]),
            branches=branches,
            operating_injections=inj,
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise CaseParseError(f"malformed case document: {exc!r}") from exc


def case_to_dict(case: GridCase) -> dict:
    doc = {
        "name": case.name,
        "slack_bus": case.slack_bus,
        "buses": list(case.buses),
        "branches": [
            {"from": b.from_bus, "to": b.to_bus, "susceptance": b.susceptance, "status": b.status}
            for b in case.branches
        ],
    }
    if case.operating_injections is not None:
        doc["injections_pu"] = {str(k): v for k, v in case.operating_injections.items()}
    return doc


def bundled_case_path(name: str) -> Path:
    return Path(str(resources.files("grid_attack") / "data" / "cases" / f"{name}.json"))


def load_case(path) -> GridCase:
    """Load a JSON case file.

    ``path`` may also be the bare name of a bundled case (``"ieee14"``,
    ``"tri3"``) when no such file exists in the working directory.
    """
    p = Path(path)
    if not p.exists() and p.suffix == "" and bundled_case_path(str(path)).exists():
        p = bundled_case_path(str(path))
    try:
        doc = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise CaseParseError(f"case file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"case file {path} is not valid JSON: {exc}") from exc
    return case_from_dict(doc)


@dataclass(frozen=True)
class Meter:
    kind: str
    bus: int | None = None
    branch: int | None = None  # 0-based index into case.branches

    def label(self, case: GridCase) -> str:
        if self.kind == INJECTION:
            return f"P{self.bus}"
        br = case.branches[self.branch]
        if self.kind == FLOW_FROM:
            return f"P{br.from_bus}-{br.to_bus}"
        return f"P{br.to_bus}-{br.from_bus}"


@dataclass(frozen=True)
class MeasurementLayout:
    """Canonical ordering: injections by bus id, then from-flows, then to-flows."""

    entries: tuple[Meter, ...]

    @classmethod
    def canonical(cls, case: GridCase) -> MeasurementLayout:
        entries = [Meter(INJECTION, bus=b) for b in sorted(case.buses)]
        entries += [Meter(FLOW_FROM, branch=k) for k in range(len(case.branches))]
        entries += [Meter(FLOW_TO, branch=k) for k in range(len(case.branches))]
        return cls(tuple(entries))

    def __len__(self):
        return len(self.entries)

    @cached_property
    def _index(self) -> dict[Meter, int]:
        return {m: i for i, m in enumerate(self.entries)}

    def index_of(self, meter: Meter) -> int:
        """0-based position of a meter."""
        return self._index[meter]

    def injection(self, bus: int) -> int:
        return self.index_of(Meter(INJECTION, bus=bus))

    def flow_from(self, branch: int) -> int:
        return self.index_of(Meter(FLOW_FROM, branch=branch))

    def flow_to(self, branch: int) -> int:
        return self.index_of(Meter(FLOW_TO, branch=branch))

    def branch_meters(self, case: GridCase, branch: int) -> tuple[int, ...]:
        """Indices of the meters touched by a branch: both injections and both flows."""
        br = case.branches[branch]
        return (
            self.injection(br.from_bus),
            self.injection(br.to_bus),
            self.flow_from(branch),
            self.flow_to(branch),
        )

    def labels(self, case: GridCase) -> list[str]:
        return [m.label(case) for m in self.entries]


@dataclass(frozen=True)
class Jacobian:
    matrix: np.ndarray
    layout: MeasurementLayout
    state_order: tuple[int, ...]
    statuses: tuple[str, ...] = field(default=())

    @property
    def shape(self):
        return self.matrix.shape


def build_jacobian(case: GridCase, topology: Mapping[int, str] | None = None,
                   require_connected: bool = True) -> Jacobian:
    """Dense DC measurement Jacobian with the slack column removed.

    ``topology`` overrides branch statuses by 0-based branch index.
    """
    statuses = case.statuses(topology)
    if require_connected:
        check_connected(case, statuses)
    layout = MeasurementLayout.canonical(case)
    state = case.state_buses
    col = {b: j for j, b in enumerate(state)}
    nb = len(case.branches)
    H = np.zeros((len(layout), len(state)))

    flow_rows = np.zeros((nb, len(state)))
    for k, (br, s) in enumerate(zip(case.branches, statuses)):
        if s != CLOSED:
            continue
        if br.from_bus in col:
            flow_rows[k, col[br.from_bus]] += br.susceptance
        if br.to_bus in col:
            flow_rows[k, col[br.to_bus]] -= br.susceptance

    for k, br in enumerate(case.branches):
        H[layout.flow_from(k)] = flow_rows[k]
        H[layout.flow_to(k)] = -flow_rows[k]
        H[layout.injection(br.from_bus)] += flow_rows[k]
        H[layout.injection(br.to_bus)] -= flow_rows[k]
    return Jacobian(H, layout, state, statuses)


@dataclass(frozen=True)
class MeasurementVector:
    values: np.ndarray
    layout: MeasurementLayout
    locked: np.ndarray | None = None  # boolean mask

    def __post_init__(self):
        if len(self.values) != len(self.layout):
            raise LayoutMismatchError(
                f"layout mismatch: {len(self.values)} values for {len(self.layout)} meters"
            )

    def __len__(self):
        return len(self.values)

    def with_locked(self, locked) -> MeasurementVector:
        return replace(self, locked=np.asarray(locked, dtype=bool))


def as_array(z) -> np.ndarray:
    return np.asarray(getattr(z, "values", z), dtype=float)


def as_matrix(H) -> np.ndarray:
    return np.asarray(getattr(H, "matrix", H), dtype=float)


def simulate_measurements(case, true_state, noise=0.0, seed=None, topology=None) -> MeasurementVector:
    """Noisy DC measurements ``z = H x + e`` with Gaussian ``e``.

    ``noise`` is a scalar or per-measurement standard deviation.
    """
    jac = build_jacobian(case, topology)
    x = np.asarray(true_state, dtype=float)
    if x.shape != (jac.shape[1],):
        raise LayoutMismatchError(
            f"state has dimension {x.size}, case {case.name!r} needs {jac.shape[1]}"
        )
    sigma = np.broadcast_to(np.asarray(noise, dtype=float), (jac.shape[0],))
    z = jac.matrix @ x
    if np.any(sigma > 0):
        rng = np.random.default_rng(seed)
        z = z + sigma * rng.standard_normal(jac.shape[0])
    return MeasurementVector(z, jac.layout)


def dc_power_flow(case: GridCase, injections=None, topology=None) -> np.ndarray:
    """Non-slack bus angles (radians) solving ``B' theta = P``.

    ``injections`` is a mapping bus -> p.u. or a vector in bus order; the
    slack entry is ignored since the slack absorbs the imbalance.
    """
    if injections is None or isinstance(injections, Mapping):
        p = case.injection_vector(injections)
    else:
        p = np.asarray(injections, dtype=float)
        if p.shape != (case.n_buses,):
            raise LayoutMismatchError(f"expected {case.n_buses} injections, got {p.size}")
    jac = build_jacobian(case, topology)
    rows = [jac.layout.injection(b) for b in case.state_buses]
    B = jac.matrix[rows]
    rhs = np.array([p[case.buses.index(b)] for b in case.state_buses])
    try:
        return np.linalg.solve(B, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("power-flow matrix is singular") from exc


def load_measurements(path, layout: MeasurementLayout) -> MeasurementVector:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CaseParseError(f"cannot read measurement file {path}: {exc}") from exc
    if doc.get("layout", "canonical") != "canonical":
        raise LayoutMismatchError(f"unsupported layout {doc.get('layout')!r}")
    values = np.asarray(doc.get("values", []), dtype=float)
    return MeasurementVector(values, layout)


def dump_measurements(z: MeasurementVector) -> dict:
    return {"layout": "canonical", "values": [float(v) for v in z.values]}
