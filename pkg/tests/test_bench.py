import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgesched import bench
from edgesched.bench import MethodMetrics, RunRecord
from edgesched.domain import Assignment, validate_instance
from edgesched.objective import Problem
from oracles import light_instance


@pytest.fixture(scope="module")
def instances():
    return [light_instance(s) for s in range(3)]


def test_rows_per_method_and_instance(instances):
    recs = bench.run_suite(["local", "random:4"], instances, seed=1)
    assert len(recs) == 6
    assert all(r.decision_time >= 0 and r.makespan >= 0 for r in recs)


def test_exact_is_minimal(instances):
    recs = bench.run_suite(["local", "predicted", "random:16", "exact"], instances, seed=2)
    for i in range(3):
        rows = [r for r in recs if r.instance_id == i]
        best = min(r.makespan for r in rows)
        assert next(r for r in rows if r.method == "exact").makespan <= best + 1e-9


def test_rerun_gives_same_makespans(instances):
    a = bench.run_suite(["random:8", "exact"], instances, seed=3)
    b = bench.run_suite(["random:8", "exact"], instances, seed=3)
    assert [r.makespan for r in a] == [r.makespan for r in b]


def test_failure_is_recorded(instances):
    def broken(inst, seed):
        raise RuntimeError("boom")

    recs = bench.run_suite({"ok": bench.make_scheduler("local"), "broken": broken}, instances)
    bad = [r for r in recs if r.method == "broken"]
    assert len(bad) == 3 and all("boom" in r.error for r in bad)
    assert all(not r.error for r in recs if r.method == "ok")


def test_unknown_or_unloaded_methods():
    with pytest.raises(ValueError):
        bench.make_scheduler("magic")
    with pytest.raises(ValueError, match="checkpoint"):
        bench.make_scheduler("corais:128")


def rec(method, i, span, t=0.01):
    return RunRecord(method, i, span, t, 0)


def test_summary_examples():
    recs = [rec("ref", 0, 10.0), rec("ref", 1, 5.0), rec("m", 0, 12.0, 0.2), rec("m", 1, 7.0, 0.2)]
    out = {m.method: m for m in bench.summarize(recs, "ref")}
    assert out["ref"].gap_m == 1.0
    assert out["m"].gap_m == pytest.approx(1.3)
    assert out["m"].time_s == 0
    assert out["m"].cost_m == pytest.approx(9.5)


def test_missing_reference():
    with pytest.raises(KeyError):
        bench.summarize([rec("ref", 0, 1.0), rec("m", 1, 2.0)], "ref")


@given(st.randoms(use_true_random=False))
def test_summary_ignores_record_order(rnd):
    base = [rec(m, i, 1 + ((i * 7 + len(m)) % 5) * 0.37, 0.001 * (i + 1)) for m in ("a", "b", "ref") for i in range(9)]
    shuffled = base[:]
    rnd.shuffle(shuffled)
    assert bench.summarize(base, "ref") == bench.summarize(shuffled, "ref")


def test_report_shapes_and_round_trip():
    assert bench.report_csv([]) == "method,Gap-M,Time-M,Time-S,Cost-M\n"
    one = [MethodMetrics("exact", 1.0, 0.0123, 0.0004, 42.125)]
    csv_text, table = bench.report(one)
    assert csv_text.count("\n") == 2 and "exact" in table
    back = bench.parse_report_csv(csv_text)[0]
    assert back.method == "exact" and back.gap_m == 1.0 and back.cost_m == 42.125
    assert back.time_m == pytest.approx(0.0123, abs=5e-4)


@settings(max_examples=10)
@given(st.integers(0, 2**31))
def test_more_random_draws_never_hurt_on_average(seed):
    insts = [light_instance(seed + i) for i in range(4)]
    recs = bench.run_suite(["random:1", "random:5", "random:40"], insts, seed=seed)
    cost = {m.method: m.cost_m for m in bench.summarize(recs, "random:40")}
    assert cost["random:40"] <= cost["random:5"] <= cost["random:1"]


def scenario(kind, seed=0):
    return bench.scenario_instance(kind, np.random.Generator(np.random.PCG64(seed)))


@pytest.mark.parametrize("kind", bench.SCENARIOS)
def test_scenarios_are_valid(kind):
    inst = scenario(kind)
    assert validate_instance(inst) is None
    assert inst.region_size == 5 and inst.n_requests == 100
    assert {r.source_edge for r in inst.requests} == {0}
    assert len({(r.input_size, r.output_size, r.predicted_edge) for r in inst.requests}) == 1


def burden(inst):
    empty = type(inst)(inst.edges, 5, inst.transmission_constant, inst.snapshots)
    return Problem(empty).edge_times(np.zeros((1, 0), dtype=np.intp))[0]


def test_scenario_structure():
    lb, wp, ha = (scenario(k, 3) for k in bench.SCENARIOS)
    assert len(set(lb.snapshots)) == 1 and len({e.phi_coeffs for e in lb.edges[:5]}) == 1
    assert all(np.diff(burden(wp)) < 0)
    assert len(set(ha.snapshots)) == 1
    slopes = [e.phi_coeffs[1] for e in ha.edges[:5]]
    assert all(np.diff(slopes) < 0)


def round_robin(inst, seed):
    return Assignment.of([z % 5 for z in range(inst.n_requests)])


def test_even_split_on_load_balance_scenario():
    res = bench.characteristic("lb", round_robin, trials=5)
    assert res.ereqn.tolist() == [20.0] * 5
    stats = res.statistic()
    assert stats["ereqn_cv"] == 0


def test_best_of_random_shows_the_expected_trends():
    sched = bench.make_scheduler("random:300")
    assert bench.characteristic("wp", sched, trials=20).statistic()["spearman_burden"] <= -0.8
    assert bench.characteristic("ha", sched, trials=20).statistic()["spearman_speed"] >= 0.8
    csv_text = bench.characteristic_csv(bench.characteristic("lb", sched, trials=3))
    assert csv_text.splitlines()[0] == "scenario,edge,EReqN,LCost,burden,speed" and len(csv_text.splitlines()) == 6
