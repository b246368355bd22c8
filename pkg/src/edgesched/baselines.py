"""Comparison schedulers, an exact branch-and-bound oracle and a MILP exporter."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import Assignment, Instance
from .objective import Problem, Variant


def schedule_local(inst: Instance) -> Assignment:
    return Assignment(tuple(r.source_edge for r in inst.requests))


def schedule_predicted(inst: Instance) -> Assignment:
    Q = inst.region_size
    return Assignment(tuple(r.predicted_edge if r.predicted_edge < Q else r.source_edge for r in inst.requests))


def best_of(prob: Problem, A: np.ndarray, variant: Variant = "canonical") -> tuple[int, float]:
    """Index and value of the first minimal-makespan row of ``A``."""
    spans = prob.makespans(A, variant)
    i = int(np.argmin(spans))
    return i, float(spans[i])


def schedule_random(inst: Instance, k: int = 1, seed: int = 0, variant: Variant = "canonical",
                    prob: Optional[Problem] = None) -> Assignment:
    """Best of ``k`` uniformly random assignments."""
    if k < 1:
        raise ValueError("k must be >= 1")
    prob = prob or Problem(inst)
    rng = np.random.Generator(np.random.PCG64(seed % 2**64))
    Z = prob.Z
    chunk = max(1, min(k, 2_000_000 // max(Z, 1)))
    best, best_val, done = None, np.inf, 0
    while done < k:
        m = min(chunk, k - done)
        A = rng.integers(0, prob.Q, size=(m, Z))
        i, val = best_of(prob, A, variant)
        if val < best_val:
            best, best_val = A[i].copy(), val
        done += m
    return Assignment.of(best)


# -- exact oracle ------------------------------------------------------------------

class ExactBudgetExceeded(RuntimeError):
    def __init__(self, incumbent: Assignment, makespan: float, nodes: int):
        super().__init__(f"node budget exhausted after {nodes} nodes; incumbent makespan {makespan:.6g}")
        self.incumbent = incumbent
        self.makespan = makespan
        self.nodes = nodes


@dataclass
class ExactResult:
    assignment: Assignment
    makespan: float
    nodes: int = 0


TIE_RTOL = 1e-12


class _Search:
    def __init__(self, prob: Problem, variant: Variant, budget: Optional[int]):
        self.prob, self.variant, self.budget = prob, variant, budget
        Q, Z = prob.Q, prob.Z
        self.Q, self.Z = Q, Z
        self.w = prob.work.tolist()
        self.loc = prob.is_local.tolist()
        self.tin = prob.tin.tolist()
        self.res = prob.res.tolist()
        self.canonical = variant == "canonical"
        min_w = prob.work.min(axis=1) if Z else np.zeros(0)
        self.rest = np.concatenate([np.cumsum(min_w[::-1])[::-1], [0.0]]).tolist()
        self.mu = prob.c_le.tolist()
        self.eta = prob.c_in.tolist()
        self.k1 = prob.t_in.tolist()
        self.k2 = prob.b_in.tolist()
        self.beta = (prob.b_le if self.canonical else prob.b_in).tolist()
        self.t = [self._t(q) for q in range(Q)]
        self.path = [0] * Z
        self.best_vec: list[int] = []
        self.best = np.inf
        self.nodes = 0

    def _t(self, q):
        return max(self.k1[q], self.mu[q]) + max(self.eta[q] + self.k2[q], self.beta[q])

    def tol(self):
        return TIE_RTOL * max(1.0, self.best) if self.best < np.inf else 0.0

    def offer(self, value, vec):
        tol = self.tol()
        if value < self.best - tol or (value <= self.best + tol and vec < self.best_vec):
            self.best, self.best_vec = value, list(vec)

    def water_level(self, depth):
        rest = self.rest[depth]
        if rest <= 0:
            return 0.0
        bases = sorted(self.mu[q] + self.eta[q] for q in range(self.Q))
        acc = 0.0
        for k, b in enumerate(bases, start=1):
            acc += b
            level = (rest + acc) / k
            if k == len(bases) or level <= bases[k]:
                return level
        return np.inf  # unreachable

    def dfs(self, depth, current):
        self.nodes += 1
        if self.budget is not None and self.nodes > self.budget:
            raise ExactBudgetExceeded(Assignment.of(self.best_vec), self.best, self.nodes)
        if depth == self.Z:
            self.offer(current, self.path)
            return
        tol = self.tol()
        bound = max(current, self.water_level(depth))
        if bound > self.best + tol:
            return
        if bound >= self.best - tol and self.path[:depth] > self.best_vec[:depth]:
            return
        z = depth
        wz, lz, tz, rz = self.w[z], self.loc[z], self.tin[z], self.res[z]
        mu, eta, k1, k2, beta, t = self.mu, self.eta, self.k1, self.k2, self.beta, self.t
        for q in range(self.Q):
            saved = (mu[q], eta[q], k1[q], k2[q], beta[q], t[q])
            if lz[q]:
                mu[q] += wz[q]
                if self.canonical:
                    beta[q] = max(beta[q], rz[q])
                else:
                    k2[q] = max(k2[q], rz[q])
            else:
                eta[q] += wz[q]
                k1[q] = max(k1[q], tz[q])
                k2[q] = max(k2[q], rz[q])
            t[q] = self._t(q)
            nxt = max(current, t[q])
            if nxt <= self.best + self.tol():
                self.path[depth] = q
                self.dfs(depth + 1, nxt)
            mu[q], eta[q], k1[q], k2[q], beta[q], t[q] = saved


def _greedy(prob: Problem, variant: Variant) -> list[int]:
    """Insert requests (largest minimum work first) on the edge that keeps makespan lowest."""
    Z = prob.Z
    order = np.argsort(-prob.work.min(axis=1), kind="stable") if Z else []
    asg = list(prob.src) if Z else []
    for z in order:
        # unplaced requests are charged at their source until they are placed
        cand = np.tile(np.asarray(asg), (prob.Q, 1))
        cand[:, z] = np.arange(prob.Q)
        asg[z] = int(np.argmin(prob.makespans(cand, variant)))
    return [int(q) for q in asg]


def solve_exact(inst: Instance, budget: Optional[int] = None, variant: Variant = "canonical",
                prob: Optional[Problem] = None) -> ExactResult:
    """Minimum-makespan assignment by depth-first branch and bound.

    Requests are branched in their natural order over edges ``0..Q-1``, so among
    equal-makespan optima the lexicographically smallest vector is returned.  A
    partial assignment is bounded by its own makespan (the objective only grows as
    requests are added) and by water-filling the least compute the remaining
    requests must add onto ``mu_q + eta_q``, a lower bound on every ``T_q``.
    """
    prob = prob or Problem(inst)
    search = _Search(prob, variant, budget)
    for start in (_greedy(prob, variant), [int(s) for s in prob.src]):
        val = float(prob.makespans(np.asarray(start, dtype=np.intp).reshape(1, -1), variant)[0])
        search.offer(val, start)
    search.dfs(0, max(search.t) if search.t else 0.0)
    asg = Assignment.of(search.best_vec)
    value = float(prob.makespans(np.asarray(asg.exec_edge, dtype=np.intp).reshape(1, -1), variant)[0])
    return ExactResult(asg, value, search.nodes)


# -- MILP export ---------------------------------------------------------------------

@dataclass
class MilpRow:
    name: str
    terms: dict[str, float]
    sense: str  # ">=" or "="
    rhs: float


@dataclass
class MilpModel:
    objective: dict[str, float]
    rows: list[MilpRow] = field(default_factory=list)
    binaries: list[str] = field(default_factory=list)
    continuous: list[str] = field(default_factory=list)


def _xname(z, q):
    return f"x_{z}_{q}"


def build_milp(inst: Instance, variant: Variant = "canonical") -> MilpModel:
    """Linearised min-max program: every max is a lower bound on a minimised variable."""
    prob = Problem(inst)
    Q, Z = prob.Q, prob.Z
    model = MilpModel(objective={"T": 1.0})
    model.binaries = [_xname(z, q) for z in range(Z) for q in range(Q)]
    model.continuous = ["T"] + [f"A_{q}" for q in range(Q)] + [f"B_{q}" for q in range(Q)]
    rows = model.rows
    for z in range(Z):
        rows.append(MilpRow(f"assign_{z}", {_xname(z, q): 1.0 for q in range(Q)}, "=", 1.0))
    for q in range(Q):
        A, B = f"A_{q}", f"B_{q}"
        local = [z for z in range(Z) if prob.is_local[z, q]]
        moved = [z for z in range(Z) if not prob.is_local[z, q]]

        mu = {A: 1.0}
        for z in local:
            if prob.work[z, q]:
                mu[_xname(z, q)] = -prob.work[z, q]
        rows.append(MilpRow(f"mu_{q}", mu, ">=", float(prob.c_le[q])))
        for z in moved:
            if prob.tin[z, q]:
                rows.append(MilpRow(f"in_{q}_{z}", {A: 1.0, _xname(z, q): -prob.tin[z, q]}, ">=", 0.0))
        rows.append(MilpRow(f"tin_{q}", {A: 1.0}, ">=", float(prob.t_in[q])))

        eta = {B: 1.0}
        for z in moved:
            if prob.work[z, q]:
                eta[_xname(z, q)] = -prob.work[z, q]
        c_in = float(prob.c_in[q])
        result_rows = moved if variant == "canonical" else range(Z)
        for z in result_rows:
            terms = dict(eta)
            x = _xname(z, q)
            terms[x] = terms.get(x, 0.0) - prob.res[z, q]
            rows.append(MilpRow(f"out_{q}_{z}", terms, ">=", c_in))
        rows.append(MilpRow(f"bin_{q}", dict(eta), ">=", c_in + float(prob.b_in[q])))
        if variant == "canonical":
            for z in local:
                if prob.res[z, q]:
                    rows.append(MilpRow(f"outle_{q}_{z}", {B: 1.0, _xname(z, q): -prob.res[z, q]}, ">=", 0.0))
            rows.append(MilpRow(f"ble_{q}", {B: 1.0}, ">=", float(prob.b_le[q])))
        rows.append(MilpRow(f"span_{q}", {"T": 1.0, A: -1.0, B: -1.0}, ">=", 0.0))
    return model


def _fmt(v: float) -> str:
    return repr(float(v))


def milp_to_lp(model: MilpModel, title: str = "multi-edge makespan") -> str:
    """Render in the CPLEX LP text format."""
    out = [f"\\ {title}", "Minimize"]
    out.append(" obj: " + " + ".join(f"{_fmt(c)} {v}" for v, c in model.objective.items()))
    out.append("Subject To")
    for row in model.rows:
        parts = []
        for i, (v, c) in enumerate(row.terms.items()):
            if c == 0:
                continue
            sign = "-" if c < 0 else "+"
            if not parts and sign == "+":
                parts.append(f"{_fmt(abs(c))} {v}")
            else:
                parts.append(f"{sign} {_fmt(abs(c))} {v}")
        lines = [" ".join(parts[i:i + 6]) for i in range(0, len(parts), 6)] or ["0 T"]
        lines[0] = f" {row.name}: {lines[0]}"
        lines[1:] = [f"   {ln}" for ln in lines[1:]]
        lines[-1] += f" {row.sense} {_fmt(row.rhs)}"
        out.extend(lines)
    out.append("Bounds")
    for v in model.continuous:
        out.append(f" {v} >= 0")
    if model.binaries:
        out.append("Binary")
        for i in range(0, len(model.binaries), 10):
            out.append(" " + " ".join(model.binaries[i:i + 10]))
    out.append("End")
    return "\n".join(out) + "\n"


def export_milp(inst: Instance, variant: Variant = "canonical") -> str:
    return milp_to_lp(build_milp(inst, variant))
