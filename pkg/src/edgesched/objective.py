"""Min-max makespan objective over schedulable edges.

For edge q under an assignment, with requests split into those executed at their
source (local) and those transferred in:

    mu     = local compute / replicas + c_le
    eta    = transferred compute / replicas + c_in
    kappa1 = max(longest input transfer into q, t_in)
    kappa2 = max(longest result transfer of transferred requests, b_in)
    beta   = max(longest result transfer of local requests, b_le)
    T_q    = max(kappa1, mu) + max(eta + kappa2, beta)

The ``printed`` variant instead lets every request executed at q feed kappa2 and
closes with ``max(eta + kappa2, b_in)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .domain import Assignment, Instance, check_assignment, distance_matrix
from .stateval import NonPhysicalPhiError, phi_matrix

Variant = Literal["canonical", "printed"]
VARIANTS = ("canonical", "printed")


@dataclass(frozen=True)
class ObjectiveBreakdown:
    mu: tuple[float, ...]
    eta: tuple[float, ...]
    kappa1: tuple[float, ...]
    kappa2: tuple[float, ...]
    beta: tuple[float, ...]
    t: tuple[float, ...]
    makespan: float


class Problem:
    """Per-(request, edge) cost tables of an instance, for fast repeated evaluation."""

    def __init__(self, inst: Instance):
        q_size = inst.region_size
        self.Q = q_size
        self.Z = len(inst.requests)
        c_t = inst.transmission_constant
        dist = distance_matrix(inst.coords_array())
        self.dist = dist

        deg = max(len(e.phi_coeffs) for e in inst.edges[:q_size])
        coeffs = np.zeros((q_size, deg))
        for q, e in enumerate(inst.edges[:q_size]):
            coeffs[q, : len(e.phi_coeffs)] = e.phi_coeffs
        self.replicas = np.array([e.replica_count for e in inst.edges[:q_size]], dtype=float)

        self.src = np.array([r.source_edge for r in inst.requests], dtype=int)
        self.pred = np.array([r.predicted_edge for r in inst.requests], dtype=int)
        self.f = np.array([r.input_size for r in inst.requests], dtype=float)
        self.u = np.array([r.output_size for r in inst.requests], dtype=float)

        phi = phi_matrix(coeffs, self.f)
        if (phi < 0).any():
            raise NonPhysicalPhiError("non-physical phi: negative compute time for a request")
        self.work = phi / self.replicas[None, :]
        self.is_local = self.src[:, None] == np.arange(q_size)[None, :]
        self.tin = c_t * self.f[:, None] * dist[self.src, :q_size]
        self.res = c_t * self.u[:, None] * dist[:q_size, self.pred].T

        snaps = np.array([s.as_tuple() for s in inst.snapshots], dtype=float).reshape(q_size, 5)
        self.c_le, self.c_in, self.t_in, self.b_le, self.b_in = snaps.T

    def components(self, A: np.ndarray, variant: Variant = "canonical"):
        """Return (mu, eta, kappa1, kappa2, beta, t), each (n, Q), for assignments ``A`` (n, Z)."""
        if variant not in VARIANTS:
            raise ValueError(f"unknown objective variant {variant!r}")
        A = np.asarray(A, dtype=np.intp)
        if A.ndim == 1:
            A = A[None, :]
        n, Q = A.shape[0], self.Q
        zi = np.broadcast_to(np.arange(self.Z), A.shape)
        flat = (np.arange(n)[:, None] * Q + A).ravel()
        size = n * Q
        w = self.work[zi, A].ravel()
        loc = self.is_local[zi, A].ravel()
        res = self.res[zi, A].ravel()

        mu = np.bincount(flat, w * loc, size).reshape(n, Q) + self.c_le
        eta = np.bincount(flat, w * ~loc, size).reshape(n, Q) + self.c_in
        k1 = np.zeros(size)
        np.maximum.at(k1, flat, self.tin[zi, A].ravel())
        k1 = np.maximum(k1.reshape(n, Q), self.t_in)
        k2 = np.zeros(size)
        if variant == "canonical":
            np.maximum.at(k2, flat, res * ~loc)
            beta = np.zeros(size)
            np.maximum.at(beta, flat, res * loc)
            beta = np.maximum(beta.reshape(n, Q), self.b_le)
        else:
            np.maximum.at(k2, flat, res)
            beta = np.broadcast_to(self.b_in, (n, Q))
        k2 = np.maximum(k2.reshape(n, Q), self.b_in)
        t = np.maximum(k1, mu) + np.maximum(eta + k2, beta)
        return mu, eta, k1, k2, beta, t

    def edge_times(self, A: np.ndarray, variant: Variant = "canonical") -> np.ndarray:
        return self.components(A, variant)[-1]

    def makespans(self, A: np.ndarray, variant: Variant = "canonical") -> np.ndarray:
        return self.edge_times(A, variant).max(axis=1)


def evaluate(inst: Instance, asg: Assignment, variant: Variant = "canonical") -> ObjectiveBreakdown:
    check_assignment(inst, asg)
    prob = Problem(inst)
    parts = prob.components(np.array(asg.exec_edge, dtype=np.intp).reshape(1, -1), variant)
    mu, eta, k1, k2, beta, t = (tuple(float(v) for v in p[0]) for p in parts)
    return ObjectiveBreakdown(mu, eta, k1, k2, beta, t, max(t))


def makespan(inst: Instance, asg: Assignment, variant: Variant = "canonical") -> float:
    return evaluate(inst, asg, variant).makespan


def reward(inst: Instance, asg: Assignment, variant: Variant = "canonical") -> float:
    """Global reward: the worst (lowest) per-edge local reward ``-T_q``."""
    return -evaluate(inst, asg, variant).makespan


def gap(candidate_makespan: float, reference_makespan: float) -> float:
    if not reference_makespan > 0:
        raise ValueError(f"reference makespan must be positive, got {reference_makespan}")
    return candidate_makespan / reference_makespan
