"""Shared value types for the multi-edge scheduling problem.

Edges ``[0, Q)`` form the control region a scheduler may dispatch to; edges
``[Q, N)`` only appear as mobility destinations of requests.  All times are
seconds, sizes are abstract data-size units and coordinates live in the unit
square.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

FORMAT_VERSION = 1

Coords = tuple[float, float]


@dataclass(frozen=True)
class EdgeProfile:
    id: int
    coords: Coords
    phi_coeffs: tuple[float, ...]  # lowest degree first
    replica_count: int


@dataclass(frozen=True)
class WorkloadSnapshot:
    c_le: float = 0.0
    c_in: float = 0.0
    t_in: float = 0.0
    b_le: float = 0.0
    b_in: float = 0.0

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.c_le, self.c_in, self.t_in, self.b_le, self.b_in)


ZERO_SNAPSHOT = WorkloadSnapshot()


@dataclass(frozen=True)
class RequestSpec:
    id: int
    source_edge: int
    predicted_edge: int
    input_size: float
    output_size: float


@dataclass(frozen=True)
class BacklogItem:
    input_size: float
    output_size: float
    origin_edge: Optional[int]  # None for items already queued for local execution
    predicted_edge: int


@dataclass(frozen=True)
class EdgeBacklog:
    local: tuple[BacklogItem, ...] = ()
    transfer_in: tuple[BacklogItem, ...] = ()


@dataclass(frozen=True)
class Instance:
    edges: tuple[EdgeProfile, ...]
    region_size: int
    transmission_constant: float
    snapshots: tuple[WorkloadSnapshot, ...]
    requests: tuple[RequestSpec, ...] = ()
    backlogs: Optional[tuple[EdgeBacklog, ...]] = None

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_requests(self) -> int:
        return len(self.requests)

    def coords_array(self) -> np.ndarray:
        return np.array([e.coords for e in self.edges], dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class Assignment:
    """Dense form of the dispatch matrix: ``exec_edge[z]`` is the edge running request z."""

    exec_edge: tuple[int, ...]

    @classmethod
    def of(cls, edges: Sequence[int]) -> "Assignment":
        return cls(tuple(int(q) for q in edges))

    def __len__(self) -> int:
        return len(self.exec_edge)

    def matrix(self, region_size: int) -> np.ndarray:
        x = np.zeros((len(self.exec_edge), region_size), dtype=int)
        x[np.arange(len(self.exec_edge)), list(self.exec_edge)] = 1
        return x


@dataclass(frozen=True)
class Violation:
    index: int
    rule: str


class InvalidAssignmentError(ValueError):
    pass


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Euclidean distance between two planar points."""
    return math.hypot(a[0] - b[0], a[1] - b[1])


def distance_matrix(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def check_assignment(inst: Instance, asg: Assignment) -> None:
    if len(asg.exec_edge) != len(inst.requests):
        raise InvalidAssignmentError(
            f"assignment has {len(asg.exec_edge)} entries for {len(inst.requests)} requests"
        )
    for z, q in enumerate(asg.exec_edge):
        if not 0 <= q < inst.region_size:
            raise InvalidAssignmentError(f"request {z} assigned to edge {q} outside [0, {inst.region_size})")


def _phi_min_on(coeffs: Sequence[float], hi: float) -> float:
    poly = np.polynomial.Polynomial(coeffs)
    xs = [0.0, hi]
    if len(coeffs) > 2:
        xs += [r.real for r in poly.deriv().roots() if abs(r.imag) < 1e-12 and 0.0 <= r.real <= hi]
    return float(min(poly(x) for x in xs))


def validate_instance(inst: Instance) -> Optional[Violation]:
    """Return the first violated invariant, or None when the instance is well formed."""
    n, q_size = len(inst.edges), inst.region_size
    if not 1 <= q_size <= n:
        return Violation(0, "region_size in [1, n_edges]")
    if len(inst.snapshots) != q_size:
        return Violation(len(inst.snapshots), "snapshots length = region_size")
    if not (math.isfinite(inst.transmission_constant) and inst.transmission_constant >= 0):
        return Violation(0, "transmission_constant ≥ 0")

    sizes = [r.input_size for r in inst.requests]
    if inst.backlogs is not None:
        sizes += [it.input_size for b in inst.backlogs for it in (*b.local, *b.transfer_in)]
    hi = max(sizes, default=1.0)

    for i, e in enumerate(inst.edges):
        if e.id != i:
            return Violation(i, "edge id = position")
        if not all(math.isfinite(c) for c in e.coords):
            return Violation(i, "coords finite")
        if e.replica_count < 1:
            return Violation(i, "replica_count ≥ 1")
        if len(e.phi_coeffs) == 0:
            return Violation(i, "phi_coeffs nonempty")
        if i < q_size and _phi_min_on(e.phi_coeffs, hi) < 0:
            return Violation(i, "phi ≥ 0 on data range")

    for i, s in enumerate(inst.snapshots):
        if min(s.as_tuple()) < 0:
            return Violation(i, "snapshot fields ≥ 0")

    for z, r in enumerate(inst.requests):
        if not 0 <= r.source_edge < q_size:
            return Violation(z, "source outside control region")
        if not 0 <= r.predicted_edge < n:
            return Violation(z, "predicted outside system")
        if not r.input_size > 0:
            return Violation(z, "input_size > 0")
        if not r.output_size >= 0:
            return Violation(z, "output_size ≥ 0")

    if inst.backlogs is not None:
        if len(inst.backlogs) != q_size:
            return Violation(len(inst.backlogs), "backlogs length = region_size")
        for i, b in enumerate(inst.backlogs):
            for it in b.local:
                if it.origin_edge is not None:
                    return Violation(i, "local backlog has no origin")
            for it in b.transfer_in:
                if it.origin_edge is None or it.origin_edge == i or not 0 <= it.origin_edge < q_size:
                    return Violation(i, "transfer-in origin is another schedulable edge")
            for it in (*b.local, *b.transfer_in):
                if not 0 <= it.predicted_edge < n:
                    return Violation(i, "backlog predicted outside system")
    return None


# -- (de)serialization to a plain key/value tree ---------------------------------

def _item_to_dict(it: BacklogItem) -> dict:
    return {"f": it.input_size, "u": it.output_size, "origin": it.origin_edge, "predicted": it.predicted_edge}


def instance_to_dict(inst: Instance) -> dict:
    doc = {
        "version": FORMAT_VERSION,
        "n_edges": inst.n_edges,
        "region_size": inst.region_size,
        "c_t": inst.transmission_constant,
        "edges": [
            {"coords": list(e.coords), "phi_coeffs": list(e.phi_coeffs), "replicas": e.replica_count}
            for e in inst.edges
        ],
        "snapshots": [
            {"c_le": s.c_le, "c_in": s.c_in, "t_in": s.t_in, "b_le": s.b_le, "b_in": s.b_in}
            for s in inst.snapshots
        ],
        "requests": [
            {"source": r.source_edge, "predicted": r.predicted_edge, "f": r.input_size, "u": r.output_size}
            for r in inst.requests
        ],
    }
    if inst.backlogs is not None:
        doc["backlogs"] = [
            {"local": [_item_to_dict(it) for it in b.local],
             "transfer_in": [_item_to_dict(it) for it in b.transfer_in]}
            for b in inst.backlogs
        ]
    return doc


class InstanceFormatError(ValueError):
    """Malformed instance document; ``location`` is a path such as ``edges[2].coords``."""

    def __init__(self, message: str, location: str = "$"):
        super().__init__(f"{location}: {message}")
        self.location = location


class InstanceVersionError(InstanceFormatError):
    pass


def _get(d, key, loc, kind=None):
    if not isinstance(d, dict) or key not in d:
        raise InstanceFormatError(f"missing field {key!r}", loc)
    v = d[key]
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise InstanceFormatError("expected a number", f"{loc}.{key}")
        return float(v)
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise InstanceFormatError("expected an integer", f"{loc}.{key}")
        return v
    if kind is list and not isinstance(v, list):
        raise InstanceFormatError("expected a list", f"{loc}.{key}")
    return v


def _item_from_dict(d, loc) -> BacklogItem:
    origin = _get(d, "origin", loc)
    if origin is not None and (isinstance(origin, bool) or not isinstance(origin, int)):
        raise InstanceFormatError("expected an integer or null", f"{loc}.origin")
    return BacklogItem(_get(d, "f", loc, float), _get(d, "u", loc, float), origin, _get(d, "predicted", loc, int))


def instance_from_dict(doc) -> Instance:
    if not isinstance(doc, dict):
        raise InstanceFormatError("expected an object")
    version = _get(doc, "version", "$")
    if version != FORMAT_VERSION:
        raise InstanceVersionError(f"unsupported version {version!r} (expected {FORMAT_VERSION})", "$.version")
    n_edges = _get(doc, "n_edges", "$", int)
    edges = []
    for i, e in enumerate(_get(doc, "edges", "$", list)):
        loc = f"$.edges[{i}]"
        coords = _get(e, "coords", loc, list)
        if len(coords) != 2:
            raise InstanceFormatError("expected two coordinates", f"{loc}.coords")
        coeffs = _get(e, "phi_coeffs", loc, list)
        edges.append(EdgeProfile(
            i,
            (float(coords[0]), float(coords[1])),
            tuple(float(c) for c in coeffs),
            _get(e, "replicas", loc, int),
        ))
    if len(edges) != n_edges:
        raise InstanceFormatError(f"n_edges={n_edges} but {len(edges)} edges listed", "$.edges")
    snapshots = []
    for i, s in enumerate(_get(doc, "snapshots", "$", list)):
        loc = f"$.snapshots[{i}]"
        snapshots.append(WorkloadSnapshot(*(_get(s, k, loc, float) for k in ("c_le", "c_in", "t_in", "b_le", "b_in"))))
    requests = []
    for z, r in enumerate(_get(doc, "requests", "$", list)):
        loc = f"$.requests[{z}]"
        requests.append(RequestSpec(
            z, _get(r, "source", loc, int), _get(r, "predicted", loc, int),
            _get(r, "f", loc, float), _get(r, "u", loc, float),
        ))
    backlogs = None
    if doc.get("backlogs") is not None:
        backlogs = []
        for i, b in enumerate(_get(doc, "backlogs", "$", list)):
            loc = f"$.backlogs[{i}]"
            backlogs.append(EdgeBacklog(
                tuple(_item_from_dict(it, f"{loc}.local[{j}]") for j, it in enumerate(_get(b, "local", loc, list))),
                tuple(_item_from_dict(it, f"{loc}.transfer_in[{j}]")
                      for j, it in enumerate(_get(b, "transfer_in", loc, list))),
            ))
        backlogs = tuple(backlogs)
    inst = Instance(
        edges=tuple(edges),
        region_size=_get(doc, "region_size", "$", int),
        transmission_constant=_get(doc, "c_t", "$", float),
        snapshots=tuple(snapshots),
        requests=tuple(requests),
        backlogs=backlogs,
    )
    bad = validate_instance(inst)
    if bad is not None:
        raise InstanceFormatError(f"invalid instance: {bad.rule} (index {bad.index})")
    return inst
