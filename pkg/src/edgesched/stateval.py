"""System-level state evaluation: per-edge compute-time functions and workload features."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .domain import BacklogItem, EdgeProfile, WorkloadSnapshot


class NonPhysicalPhiError(ValueError):
    pass


class InsufficientSupportError(ValueError):
    pass


@dataclass(frozen=True)
class TimingSample:
    data_size: float
    elapsed: float


def eval_phi(coeffs: Sequence[float], x: float) -> float:
    """Evaluate the compute-time polynomial (coefficients lowest degree first) at ``x``."""
    if x < 0:
        raise ValueError(f"data size must be nonnegative, got {x}")
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    if acc < 0:
        raise NonPhysicalPhiError(f"non-physical phi: phi({x}) = {acc} < 0 for coefficients {list(coeffs)}")
    return acc


def phi_matrix(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Vectorised ``phi_q(x_z)`` for a (Q, D+1) coefficient array and sizes ``x`` -> (Z, Q)."""
    out = np.zeros((x.shape[0], coeffs.shape[0]))
    for d in range(coeffs.shape[1] - 1, -1, -1):
        out = out * x[:, None] + coeffs[None, :, d]
    return out


def fit_phi(samples: Sequence[TimingSample], degree: int = 1) -> list[float]:
    """Ordinary least-squares polynomial fit of elapsed time against data size."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    x = np.array([s.data_size for s in samples], dtype=float)
    t = np.array([s.elapsed for s in samples], dtype=float)
    if len(np.unique(x)) <= degree:
        raise InsufficientSupportError(
            f"insufficient support: {len(np.unique(x))} distinct data sizes for degree {degree}"
        )
    coeffs = np.polynomial.polynomial.polyfit(x, t, degree)
    return [float(c) for c in coeffs]


def load_timing_csv(path: str | Path) -> list[TimingSample]:
    """Read a ``data_size,elapsed`` log."""
    with open(path, newline="") as fh:
        rows = csv.DictReader(fh)
        samples = [TimingSample(float(r["data_size"]), float(r["elapsed"])) for r in rows]
    for s in samples:
        if s.data_size <= 0 or s.elapsed < 0:
            raise ValueError(f"invalid timing sample {s}")
    return samples


def workload_arrays(
    coeffs: Sequence[float],
    replicas: int,
    here: np.ndarray,
    local_f: np.ndarray,
    local_u: np.ndarray,
    local_pred_xy: np.ndarray,
    in_f: np.ndarray,
    in_u: np.ndarray,
    in_origin_xy: np.ndarray,
    in_pred_xy: np.ndarray,
    c_t: float,
) -> WorkloadSnapshot:
    """Array form of :func:`evaluate_workload`; ``*_xy`` are (n, 2) coordinate rows."""

    def dist(xy):
        return np.hypot(xy[:, 0] - here[0], xy[:, 1] - here[1])

    def total_phi(f):
        vals = np.polynomial.polynomial.polyval(f, np.asarray(coeffs, dtype=float))
        if (vals < 0).any():
            raise NonPhysicalPhiError(f"non-physical phi: negative compute time for coefficients {list(coeffs)}")
        return float(vals.sum())

    def longest(x):
        return float(x.max()) if x.size else 0.0

    return WorkloadSnapshot(
        c_le=total_phi(local_f) / replicas,
        c_in=total_phi(in_f) / replicas,
        t_in=longest(c_t * in_f * dist(in_origin_xy)),
        b_le=longest(c_t * local_u * dist(local_pred_xy)),
        b_in=longest(c_t * in_u * dist(in_pred_xy)),
    )


def evaluate_workload(
    edge: EdgeProfile,
    local_queue: Iterable[BacklogItem],
    transfer_in_queue: Iterable[BacklogItem],
    c_t: float,
    all_edges: Sequence[EdgeProfile],
) -> WorkloadSnapshot:
    """Summarise an edge's backlog queues into the five workload features.

    Computing time is the replica-averaged sum of ``phi``; transmission times are the
    maximum over a queue since an edge receives from (and sends to) peers in parallel.
    Empty queues contribute zero.
    """
    local_queue, transfer_in_queue = list(local_queue), list(transfer_in_queue)
    if any(it.origin_edge is None for it in transfer_in_queue):
        raise ValueError("transfer-in backlog item without origin edge")
    xy = np.array([e.coords for e in all_edges], dtype=float).reshape(-1, 2)

    def cols(items):
        f = np.array([it.input_size for it in items], dtype=float)
        u = np.array([it.output_size for it in items], dtype=float)
        pred = xy[np.array([it.predicted_edge for it in items], dtype=int)]
        return f, u, pred

    lf, lu, lp = cols(local_queue)
    inf_, inu, inp = cols(transfer_in_queue)
    origin = xy[np.array([it.origin_edge for it in transfer_in_queue], dtype=int)]
    return workload_arrays(edge.phi_coeffs, edge.replica_count, np.asarray(edge.coords, dtype=float),
                           lf, lu, lp, inf_, inu, origin, inp, c_t)
