"""Experiment harness: method registry, suite runs, metrics, reports and scenario validations."""
from __future__ import annotations

import csv
import io
import math
import time
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .baselines import schedule_local, schedule_predicted, schedule_random, solve_exact
from .domain import Assignment, BacklogItem, EdgeProfile, Instance, RequestSpec
from .instancegen import derive_seed
from .neural import CoRaiS, decode_greedy, decode_sampling, policy
from .objective import Problem
from .stateval import evaluate_workload

Scheduler = Callable[[Instance, int], Assignment]


@dataclass(frozen=True)
class RunRecord:
    method: str
    instance_id: int
    makespan: float
    decision_time: float
    seed: int
    error: str = ""


@dataclass(frozen=True)
class MethodMetrics:
    method: str
    gap_m: float
    time_m: float
    time_s: float
    cost_m: float


def _parse_count(text: str) -> int:
    text = text.lower()
    return int(float(text[:-1]) * 1000) if text.endswith("k") else int(text)


def make_scheduler(spec: str, model: Optional[CoRaiS] = None) -> Scheduler:
    """Build a scheduler from a method spec.

    ``local``, ``predicted``, ``random:K``, ``exact`` or ``exact:BUDGET``,
    ``corais:greedy`` and ``corais:N`` (sampling decoding with N draws; ``1k`` = 1000).
    """
    name, _, arg = spec.partition(":")
    if name == "local":
        return lambda inst, seed: schedule_local(inst)
    if name == "predicted":
        return lambda inst, seed: schedule_predicted(inst)
    if name == "random":
        k = _parse_count(arg or "1")
        return lambda inst, seed: schedule_random(inst, k, seed)
    if name == "exact":
        budget = _parse_count(arg) if arg else None
        return lambda inst, seed: solve_exact(inst, budget).assignment
    if name == "corais":
        if model is None:
            raise ValueError(f"method {spec!r} needs a trained checkpoint")
        if arg in ("", "greedy"):
            return lambda inst, seed: decode_greedy(policy(model, inst))
        n = _parse_count(arg)
        return lambda inst, seed: decode_sampling(policy(model, inst), n, inst, seed)
    raise ValueError(f"unknown method {spec!r}")


def run_suite(methods: dict[str, Scheduler] | Sequence[str], instances: Sequence[Instance], seed: int = 0,
              model: Optional[CoRaiS] = None) -> list[RunRecord]:
    """One record per (method, instance); all methods share the per-instance seed.

    Decision time covers the scheduling call only.  A failing method is recorded with
    NaN makespan and the error text; the suite carries on.
    """
    if not isinstance(methods, dict):
        methods = {m: make_scheduler(m, model) for m in methods}
    records = []
    for i, inst in enumerate(instances):
        s = derive_seed(seed, i)
        prob = Problem(inst)
        for name, fn in methods.items():
            t0 = time.perf_counter()
            try:
                asg = fn(inst, s)
            except Exception as exc:  # noqa: BLE001 - recorded per row
                records.append(RunRecord(name, i, math.nan, time.perf_counter() - t0, s, f"{type(exc).__name__}: {exc}"))
                continue
            elapsed = time.perf_counter() - t0
            span = float(prob.makespans(np.asarray([asg.exec_edge], dtype=np.intp).reshape(1, -1))[0])
            records.append(RunRecord(name, i, span, elapsed, s))
    return records


def summarize(records: Sequence[RunRecord], reference_method: str,
              order: Optional[Sequence[str]] = None) -> list[MethodMetrics]:
    """Gap-M (mean makespan ratio to the reference), Time-M/Time-S and Cost-M per method."""
    ref = {r.instance_id: r.makespan for r in records if r.method == reference_method and not r.error}
    by_method: dict[str, list[RunRecord]] = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)
    names = list(order) if order is not None else sorted(by_method)
    out = []
    for name in names:
        rows = sorted(by_method.get(name, []), key=lambda r: r.instance_id)
        gaps = []
        for r in rows:
            if r.instance_id not in ref:
                raise KeyError(f"no {reference_method!r} reference for instance {r.instance_id}")
            gaps.append(r.makespan / ref[r.instance_id])
        times = np.array([r.decision_time for r in rows])
        n = len(rows)
        out.append(MethodMetrics(
            name,
            math.fsum(gaps) / n if n else math.nan,
            math.fsum(times) / n if n else math.nan,
            float(np.sqrt(math.fsum((times - times.mean()) ** 2) / n)) if n else math.nan,
            math.fsum(r.makespan for r in rows) / n if n else math.nan,
        ))
    return out


METRIC_COLUMNS = ("method", "Gap-M", "Time-M", "Time-S", "Cost-M")
TIMING_COLUMNS = ("Time-M", "Time-S")


def _cells(m: MethodMetrics) -> list[str]:
    return [m.method, repr(m.gap_m), f"{m.time_m:.3f}", f"{m.time_s:.3f}", repr(m.cost_m)]


def report_csv(metrics: Sequence[MethodMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for m in metrics:
        w.writerow(_cells(m))
    return buf.getvalue()


def report_table(metrics: Sequence[MethodMetrics]) -> str:
    rows = [list(METRIC_COLUMNS)] + [
        [m.method, f"{m.gap_m:.4f}", f"{m.time_m:.3f}", f"{m.time_s:.3f}", f"{m.cost_m:.4f}"] for m in metrics
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(len(METRIC_COLUMNS))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def report(metrics: Sequence[MethodMetrics]) -> tuple[str, str]:
    return report_csv(metrics), report_table(metrics)


def parse_report_csv(text: str) -> list[MethodMetrics]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [MethodMetrics(r["method"], float(r["Gap-M"]), float(r["Time-M"]), float(r["Time-S"]), float(r["Cost-M"]))
            for r in rows]


def records_csv(records: Sequence[RunRecord], with_timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["method", "instance", "seed", "makespan"] + (["decision_time"] if with_timing else []) + ["error"]
    w.writerow(cols)
    for r in records:
        row = [r.method, r.instance_id, r.seed, repr(r.makespan)]
        if with_timing:
            row.append(f"{r.decision_time:.3f}")
        w.writerow(row + [r.error])
    return buf.getvalue()


# -- characteristic validations --------------------------------------------------------

SCENARIOS = ("lb", "wp", "ha")
EDGE_NAMES = ("A", "B", "C", "D", "E")
HA_SLOWDOWN = (1.0, 0.85, 0.7, 0.55, 0.4)  # phi multipliers: A slowest, E fastest
WP_LOAD = (1.2, 1.1, 1.0, 0.9, 0.8)  # backlog count multipliers: A heaviest


@dataclass(frozen=True)
class ScenarioConfig:
    n_edges: int = 10
    n_requests: int = 100
    c_t: float = 3.0
    base_backlog_range: tuple[int, int] = (20, 100)


def scenario_instance(kind: str, rng: np.random.Generator, cfg: ScenarioConfig = ScenarioConfig()) -> Instance:
    """Five schedulable edges A..E plus mobility-only edges; all requests are identical and sit at A.

    ``lb``: identical edges and identical backlog state.  ``wp``: identical edges whose
    backlog queues are nested prefixes of one item list, A holding the most.  ``ha``:
    identical backlog state but compute-time functions scaled so E is fastest.
    """
    if kind not in SCENARIOS:
        raise ValueError(f"unknown scenario {kind!r}")
    N, Q = cfg.n_edges, 5
    coords = rng.random((N, 2))
    base_phi = rng.random(2)
    zeta = int(rng.choice([1, 2, 3, 4]))
    scale = HA_SLOWDOWN if kind == "ha" else (1.0,) * Q
    edges = tuple(
        EdgeProfile(i, (float(coords[i, 0]), float(coords[i, 1])),
                    tuple(float(c) * (scale[i] if i < Q else 1.0) for c in base_phi), zeta)
        for i in range(N)
    )
    n_base = int(rng.integers(*cfg.base_backlog_range))
    n_max = int(math.ceil(max(WP_LOAD) * n_base))
    le_items = [BacklogItem(float(1.0 - rng.random()), float(rng.uniform(0, 0.1)), None, int(rng.integers(0, N)))
                for _ in range(n_max)]
    # origin_edge holds an offset in 1..Q-1 here; the holder q sees origin (q + offset) % Q
    in_items = [BacklogItem(float(1.0 - rng.random()), float(rng.uniform(0, 0.1)), int(rng.integers(1, Q)),
                            int(rng.integers(0, N))) for _ in range(n_max)]

    def queues(q: int, n: int):
        incoming = [replace(it, origin_edge=(q + it.origin_edge) % Q) for it in in_items[:n]]
        return evaluate_workload(edges[q], le_items[:n], incoming, cfg.c_t, edges)

    if kind == "wp":
        snaps = [queues(q, int(round(WP_LOAD[q] * n_base))) for q in range(Q)]
    else:
        snaps = [queues(0, n_base)] * Q
    f, u, pred = float(1.0 - rng.random()), float(rng.uniform(0, 0.1)), int(rng.integers(0, N))
    requests = tuple(RequestSpec(z, 0, pred, f, u) for z in range(cfg.n_requests))
    return Instance(edges, Q, cfg.c_t, tuple(snaps), requests)


@dataclass
class CharacteristicResult:
    scenario: str
    ereqn: np.ndarray  # mean executed-request count per edge
    lcost: np.ndarray  # mean per-edge completion time after scheduling
    burden: np.ndarray  # mean per-edge completion time before scheduling
    speed: np.ndarray  # relative compute speed per edge

    def statistic(self) -> dict[str, float]:
        with warnings.catch_warnings():
            # LB/HA have constant burden, LB/WP constant speed: correlation is undefined there
            warnings.simplefilter("ignore", stats.ConstantInputWarning)
            return self._statistic()

    def _statistic(self) -> dict[str, float]:
        return {
            "ereqn_cv": float(self.ereqn.std() / self.ereqn.mean()),
            "lcost_spread": float((self.lcost.max() - self.lcost.min()) / self.lcost.mean()),
            "spearman_burden": float(stats.spearmanr(self.burden, self.ereqn).statistic),
            "spearman_speed": float(stats.spearmanr(self.speed, self.ereqn).statistic),
        }


def characteristic(kind: str, scheduler: Scheduler, seed: int = 0, trials: int = 1000,
                   cfg: ScenarioConfig = ScenarioConfig()) -> CharacteristicResult:
    counts = np.zeros(5)
    lcost = np.zeros(5)
    burden = np.zeros(5)
    for t in range(trials):
        rng = np.random.Generator(np.random.PCG64(derive_seed(seed, 7, t)))
        inst = scenario_instance(kind, rng, cfg)
        asg = scheduler(inst, derive_seed(seed, 8, t))
        prob = Problem(inst)
        counts += np.bincount(np.asarray(asg.exec_edge, dtype=np.intp), minlength=5)
        lcost += prob.edge_times(np.asarray([asg.exec_edge], dtype=np.intp))[0]
        burden += Problem(replace(inst, requests=())).edge_times(np.zeros((1, 0), dtype=np.intp))[0]
    speed = 1.0 / np.asarray(HA_SLOWDOWN if kind == "ha" else (1.0,) * 5)
    return CharacteristicResult(kind, counts / trials, lcost / trials, burden / trials, speed)


def characteristic_lb(scheduler: Scheduler, seed: int = 0, trials: int = 1000) -> CharacteristicResult:
    return characteristic("lb", scheduler, seed, trials)


def characteristic_wp(scheduler: Scheduler, seed: int = 0, trials: int = 1000) -> CharacteristicResult:
    return characteristic("wp", scheduler, seed, trials)


def characteristic_ha(scheduler: Scheduler, seed: int = 0, trials: int = 1000) -> CharacteristicResult:
    return characteristic("ha", scheduler, seed, trials)


def characteristic_csv(res: CharacteristicResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "edge", "EReqN", "LCost", "burden", "speed"])
    for i, name in enumerate(EDGE_NAMES):
        w.writerow([res.scenario, name, repr(float(res.ereqn[i])), repr(float(res.lcost[i])),
                    repr(float(res.burden[i])), repr(float(res.speed[i]))])
    return buf.getvalue()
