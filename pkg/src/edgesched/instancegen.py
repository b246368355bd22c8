"""Seeded random instances, queue transitions between rounds, and instance files.

Randomness comes from numpy's PCG64 seeded through ``SeedSequence(seed, spawn_key=(k,))``
with one fixed key ``k`` per purpose, so each stream (coordinates, phi, replicas,
backlogs, requests) is independent of how much the others consume.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .domain import (
    Assignment,
    BacklogItem,
    EdgeBacklog,
    EdgeProfile,
    Instance,
    InstanceFormatError,
    RequestSpec,
    WorkloadSnapshot,
    check_assignment,
    instance_from_dict,
    instance_to_dict,
)
from .objective import Problem
from .stateval import evaluate_workload, workload_arrays

STREAMS = {"coords": 0, "phi": 1, "replicas": 2, "backlogs": 3, "requests": 4}


def substream(seed: int, purpose: str | int) -> np.random.Generator:
    key = STREAMS[purpose] if isinstance(purpose, str) else int(purpose)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed % 2**64, spawn_key=(key,))))


def derive_seed(seed: int, *path: int) -> int:
    """Stable 64-bit child seed, e.g. one per training batch."""
    ss = np.random.SeedSequence(seed % 2**64, spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class GenConfig:
    n_edges: int = 10
    region_size: int = 5
    n_requests: int = 50
    seed: int = 0
    c_t: float = 3.0
    replica_choices: tuple[int, ...] = (1, 2, 3, 4)
    backlog_count_range: tuple[int, int] = (0, 100)  # [lo, hi)
    input_size_range: tuple[float, float] = (0.0, 1.0)
    output_size_range: tuple[float, float] = (0.0, 0.1)
    phi_degree: int = 1
    phi_coeff_range: tuple[float, float] = (0.0, 1.0)
    keep_backlogs: bool = True

    def validate(self) -> None:
        if not 1 <= self.region_size <= self.n_edges:
            raise ValueError(f"need 1 <= Q <= N, got Q={self.region_size}, N={self.n_edges}")
        if self.n_requests < 0:
            raise ValueError("n_requests must be >= 0")
        if not self.replica_choices or min(self.replica_choices) < 1:
            raise ValueError("replica_choices must be nonempty positive integers")
        lo, hi = self.backlog_count_range
        if not 0 <= lo < hi:
            raise ValueError(f"empty backlog_count_range {self.backlog_count_range}")
        for name in ("input_size_range", "output_size_range", "phi_coeff_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"empty {name} {(lo, hi)}")
        if self.input_size_range[0] < 0 or self.output_size_range[0] < 0 or self.phi_coeff_range[0] < 0:
            raise ValueError("size and phi coefficient ranges must be nonnegative")
        if self.phi_degree < 0:
            raise ValueError("phi_degree must be >= 0")


def _uniform_open_low(rng: np.random.Generator, lo: float, hi: float, size) -> np.ndarray:
    # (lo, hi]: excludes lo so sampled input sizes are strictly positive
    return hi - (hi - lo) * rng.random(size)


def generate(cfg: GenConfig) -> Instance:
    cfg.validate()
    N, Q, Z = cfg.n_edges, cfg.region_size, cfg.n_requests
    coords = substream(cfg.seed, "coords").random((N, 2))
    phi = substream(cfg.seed, "phi").uniform(*cfg.phi_coeff_range, size=(N, cfg.phi_degree + 1))
    replicas = substream(cfg.seed, "replicas").choice(np.asarray(cfg.replica_choices), size=N)
    edges = tuple(
        EdgeProfile(i, (float(coords[i, 0]), float(coords[i, 1])), tuple(float(c) for c in phi[i]), int(replicas[i]))
        for i in range(N)
    )

    rng = substream(cfg.seed, "backlogs")
    lo, hi = cfg.backlog_count_range
    snapshots, backlogs = [], []
    for q in range(Q):
        n_le = int(rng.integers(lo, hi))
        n_in = int(rng.integers(lo, hi)) if Q > 1 else 0
        lf = _uniform_open_low(rng, *cfg.input_size_range, n_le)
        lu = rng.uniform(*cfg.output_size_range, n_le)
        lp = rng.integers(0, N, n_le)
        inf_ = _uniform_open_low(rng, *cfg.input_size_range, n_in)
        inu = rng.uniform(*cfg.output_size_range, n_in)
        inp = rng.integers(0, N, n_in)
        org = rng.integers(0, max(Q - 1, 1), n_in)
        org = org + (org >= q)
        snapshots.append(workload_arrays(
            edges[q].phi_coeffs, edges[q].replica_count, coords[q],
            lf, lu, coords[lp], inf_, inu, coords[org], coords[inp], cfg.c_t,
        ))
        if cfg.keep_backlogs:
            backlogs.append(EdgeBacklog(
                tuple(BacklogItem(float(f), float(u), None, int(p)) for f, u, p in zip(lf, lu, lp)),
                tuple(BacklogItem(float(f), float(u), int(o), int(p)) for f, u, o, p in zip(inf_, inu, org, inp)),
            ))

    rng = substream(cfg.seed, "requests")
    src = rng.integers(0, Q, Z)
    pred = rng.integers(0, N, Z)
    f = _uniform_open_low(rng, *cfg.input_size_range, Z)
    u = rng.uniform(*cfg.output_size_range, Z)
    requests = tuple(RequestSpec(z, int(src[z]), int(pred[z]), float(f[z]), float(u[z])) for z in range(Z))
    return Instance(
        edges=edges,
        region_size=Q,
        transmission_constant=cfg.c_t,
        snapshots=tuple(snapshots),
        requests=requests,
        backlogs=tuple(backlogs) if cfg.keep_backlogs else None,
    )


def generate_many(cfg: GenConfig, count: int) -> list[Instance]:
    """``count`` instances with child seeds derived from ``cfg.seed``."""
    return [generate(replace(cfg, seed=derive_seed(cfg.seed, i))) for i in range(count)]


def apply_decision(inst: Instance, asg: Assignment) -> Instance:
    """Move dispatched requests into the executors' queues and start the next round.

    Requests kept at their source join the local-execution queue; the others join the
    executor's transfer-in queue with their source as origin.  When raw queues are
    present the snapshots are recomputed from them, otherwise the new items are folded
    into the existing snapshots (sums add, maxima take the max).
    """
    check_assignment(inst, asg)
    Q = inst.region_size
    if inst.backlogs is not None:
        local = [list(b.local) for b in inst.backlogs]
        incoming = [list(b.transfer_in) for b in inst.backlogs]
        for r, q in zip(inst.requests, asg.exec_edge):
            if q == r.source_edge:
                local[q].append(BacklogItem(r.input_size, r.output_size, None, r.predicted_edge))
            else:
                incoming[q].append(BacklogItem(r.input_size, r.output_size, r.source_edge, r.predicted_edge))
        backlogs = tuple(EdgeBacklog(tuple(a), tuple(b)) for a, b in zip(local, incoming))
        snapshots = tuple(
            evaluate_workload(inst.edges[q], backlogs[q].local, backlogs[q].transfer_in,
                              inst.transmission_constant, inst.edges)
            for q in range(Q)
        )
        return replace(inst, snapshots=snapshots, requests=(), backlogs=backlogs)

    prob = Problem(inst)
    snaps = [list(s.as_tuple()) for s in inst.snapshots]
    for z, q in enumerate(asg.exec_edge):
        s = snaps[q]
        if prob.is_local[z, q]:
            s[0] += prob.work[z, q]
            s[3] = max(s[3], prob.res[z, q])
        else:
            s[1] += prob.work[z, q]
            s[2] = max(s[2], prob.tin[z, q])
            s[4] = max(s[4], prob.res[z, q])
    return replace(inst, snapshots=tuple(WorkloadSnapshot(*s) for s in snaps), requests=())


def save(inst: Instance) -> bytes:
    return json.dumps(instance_to_dict(inst), indent=1).encode("utf-8")


def load(data: bytes | str) -> Instance:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(exc.msg, f"line {exc.lineno} column {exc.colno}") from exc
    return instance_from_dict(doc)
