import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from edgesched.domain import BacklogItem, EdgeProfile
from edgesched.stateval import (
    InsufficientSupportError, NonPhysicalPhiError, TimingSample, eval_phi, evaluate_workload, fit_phi,
    load_timing_csv, phi_matrix,
)
from oracles import random_items, reference_snapshot


def test_eval_phi_examples():
    assert eval_phi([0, 1], 0) == 0
    assert eval_phi([0.1, 0.5], 2) == pytest.approx(1.1, abs=1e-15)
    assert eval_phi([0.05, 0.3, 0.01], 3) == pytest.approx(0.05 + 0.9 + 0.09, abs=1e-15)


def test_eval_phi_rejects_negative():
    with pytest.raises(NonPhysicalPhiError):
        eval_phi([0.1, -1.0], 1.0)
    with pytest.raises(ValueError):
        eval_phi([0, 1], -0.5)


def test_phi_matrix_matches_scalar():
    rng = np.random.default_rng(3)
    coeffs = rng.random((4, 3))
    x = rng.random(6)
    M = phi_matrix(coeffs, x)
    for z in range(6):
        for q in range(4):
            assert M[z, q] == pytest.approx(eval_phi(coeffs[q], x[z]), rel=1e-14)


def test_fit_exact_line():
    samples = [TimingSample(x, 2 * x + 1) for x in (0.5, 1.0, 2.0, 3.5)]
    assert fit_phi(samples, 1) == pytest.approx([1, 2], abs=1e-9)


def test_fit_noisy_slope_against_normal_equations():
    rng = np.random.default_rng(0)
    x = rng.uniform(0.1, 2, 100)
    t = 0.5 * x + rng.uniform(-0.01, 0.01, 100)
    coeffs = fit_phi([TimingSample(a, b) for a, b in zip(x, t)], 1)
    X = np.column_stack([np.ones_like(x), x])
    oracle = np.linalg.solve(X.T @ X, X.T @ t)
    assert coeffs == pytest.approx(oracle, abs=1e-10)
    assert abs(coeffs[1] - 0.5) <= 0.01


def test_fit_insufficient_support():
    with pytest.raises(InsufficientSupportError, match="insufficient support"):
        fit_phi([TimingSample(1.0, 2.0), TimingSample(1.0, 2.1)], 1)


@given(st.lists(st.floats(0.01, 5), min_size=3, max_size=10, unique=True),
       st.lists(st.floats(0, 2), min_size=3, max_size=3))
def test_fit_then_eval_reproduces_noiseless(xs, coeffs):
    samples = [TimingSample(x, coeffs[0] + coeffs[1] * x + coeffs[2] * x * x) for x in xs]
    fitted = fit_phi(samples, 2)
    for s in samples:
        assert abs(np.polynomial.polynomial.polyval(s.data_size, fitted) - s.elapsed) <= 1e-9


def test_load_timing_csv(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("data_size,elapsed\n1,3\n2,5\n4,9\n")
    assert fit_phi(load_timing_csv(p), 1) == pytest.approx([1, 2])


EDGES = (EdgeProfile(0, (0.0, 0.0), (0.0, 1.0), 1), EdgeProfile(1, (2.0, 0.0), (0.0, 1.0), 1),
         EdgeProfile(2, (0.3, 0.4), (0.0, 1.0), 1))


def test_empty_queues():
    assert evaluate_workload(EDGES[0], [], [], 3.0, EDGES).as_tuple() == (0, 0, 0, 0, 0)


def test_one_local_item():
    edge = EdgeProfile(0, (0.0, 0.0), (0.0, 1.0), 2)
    s = evaluate_workload(edge, [BacklogItem(1.0, 0.0, None, 0)], [], 3.0, (edge,))
    assert s.as_tuple() == (0.5, 0, 0, 0, 0)


def test_one_transfer_in_item():
    # origin 1 is 2 away; predicted edge 2 is 0.5 away
    s = evaluate_workload(EDGES[0], [], [BacklogItem(1.0, 0.1, 1, 2)], 3.0, EDGES)
    assert s.t_in == pytest.approx(6)
    assert s.c_in == pytest.approx(1)
    assert s.b_in == pytest.approx(0.15)
    assert s.c_le == s.b_le == 0


def test_transfer_in_without_origin():
    with pytest.raises(ValueError):
        evaluate_workload(EDGES[0], [], [BacklogItem(1.0, 0.1, None, 2)], 3.0, EDGES)


def _random_setup(seed):
    rng = np.random.default_rng(seed)
    n = 6
    edges = tuple(EdgeProfile(i, tuple(rng.random(2)), tuple(rng.random(2)), int(rng.integers(1, 5)))
                  for i in range(n))
    local = random_items(rng, int(rng.integers(0, 8)), n)
    incoming = random_items(rng, int(rng.integers(0, 8)), n, origins=[1, 2, 3])
    return rng, edges, local, incoming


@given(st.integers(0, 2**32))
def test_matches_reference(seed):
    _, edges, local, incoming = _random_setup(seed)
    got = evaluate_workload(edges[0], local, incoming, 3.0, edges).as_tuple()
    assert got == pytest.approx(reference_snapshot(edges[0], local, incoming, 3.0, edges).as_tuple(), rel=1e-12)


@given(st.integers(0, 2**32), st.booleans())
def test_adding_an_item_never_decreases_features(seed, to_local):
    rng, edges, local, incoming = _random_setup(seed)
    before = evaluate_workload(edges[0], local, incoming, 3.0, edges).as_tuple()
    if to_local:
        local = local + random_items(rng, 1, len(edges))
    else:
        incoming = incoming + random_items(rng, 1, len(edges), origins=[2])
    after = evaluate_workload(edges[0], local, incoming, 3.0, edges).as_tuple()
    assert all(a >= b for a, b in zip(after, before))


@given(st.integers(0, 2**32))
def test_doubling_replicas_halves_compute_only(seed):
    _, edges, local, incoming = _random_setup(seed)
    e = edges[0]
    doubled = EdgeProfile(e.id, e.coords, e.phi_coeffs, 2 * e.replica_count)
    a = evaluate_workload(e, local, incoming, 3.0, edges)
    b = evaluate_workload(doubled, local, incoming, 3.0, edges)
    assert b.c_le == pytest.approx(a.c_le / 2, rel=1e-15) and b.c_in == pytest.approx(a.c_in / 2, rel=1e-15)
    assert (b.t_in, b.b_le, b.b_in) == (a.t_in, a.b_le, a.b_in)


def test_b_le_uses_local_queue():
    edges = EDGES
    s = evaluate_workload(edges[0], [BacklogItem(0.5, 0.1, None, 1)], [BacklogItem(0.5, 0.02, 1, 2)], 3.0, edges)
    assert s.b_le == pytest.approx(3 * 0.1 * 2)
    assert s.b_in == pytest.approx(3 * 0.02 * 0.5)
    assert not math.isclose(s.b_le, s.b_in)
