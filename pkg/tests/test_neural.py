import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from edgesched.baselines import solve_exact
from edgesched.neural import (
    ModelConfig, NumericOverflowError, PolicyMatrix, backward, batch_tensors, build_model, count_parameters,
    decode_greedy, decode_sampling, featurize, policy, sample_assignments,
)
from edgesched.objective import makespan
from fd import TINY, numeric_grads, relative_errors
from oracles import handmade, light_instance, small_instance

SMALL = ModelConfig(d_h=16, n_edge_layers=2, n_request_layers=1, n_heads=4, ff_hidden=32)


def test_featurize_rows():
    edges = [((0, 0), (0, 1), 1), ((0.1, 0.2), (0, 1), 2), ((0.9, 0.9), (0, 1), 1)]
    inst = handmade(edges, requests=[(1, 2, 0.5, 0.05)], q=2)
    e, r = featurize(inst)
    assert e[0].tolist() == [0, 0, 0, 1, 1, 0, 0, 0, 0, 0]
    assert r[0].tolist() == pytest.approx([0.1, 0.2, 0.5, 0.9, 0.9, 0.05])
    assert e.shape == (2, SMALL.edge_feature_dim)


def test_featurize_permutes_with_requests():
    inst = small_instance(0, z=5)
    perm = [3, 0, 4, 1, 2]
    shuffled = type(inst)(inst.edges, 3, inst.transmission_constant, inst.snapshots,
                          tuple(inst.requests[p] for p in perm))
    assert (featurize(shuffled)[1] == featurize(inst)[1][perm]).all()


def test_default_parameter_count_near_four_million():
    n = count_parameters(build_model(ModelConfig()))
    assert abs(n - 4_000_000) <= 0.15 * 4_000_000


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_h=10, n_heads=4).validate()
    with pytest.raises(ValueError):
        ModelConfig(norm_scope="layer").validate()
    assert ModelConfig.from_dict(SMALL.to_dict()) == SMALL


@settings(max_examples=25)
@given(st.integers(0, 2**31), st.integers(1, 5), st.integers(1, 7), st.sampled_from(["batch", "instance"]))
def test_columns_sum_to_one_and_bounded(seed, q, z, scope):
    cfg = ModelConfig(**{**SMALL.to_dict(), "norm_scope": scope})
    model = build_model(cfg, seed)
    inst = small_instance(seed, n=q + 2, q=q, z=z)
    probs = policy(model, inst).probs
    assert probs.shape == (q, z)
    assert np.abs(probs.sum(axis=0) - 1).max() <= 1e-6
    imp = model.importance(*batch_tensors(model, [inst]))
    assert imp.abs().max() <= cfg.clip_c


@settings(max_examples=20)
@given(st.integers(0, 2**31), st.permutations(range(4)), st.permutations(range(6)))
def test_joint_permutation_equivariance(seed, pe, pr):
    model = build_model(SMALL, seed)
    edges, reqs = batch_tensors(model, [small_instance(seed, n=6, q=4, z=6)])
    base = model(edges, reqs)
    moved = model(edges[:, pe], reqs[:, pr])
    assert torch.allclose(moved, base[:, pe][:, :, pr], atol=1e-9, rtol=0)


def test_identical_edges_give_uniform_columns():
    model = build_model(SMALL, 3)
    edges, reqs = batch_tensors(model, [small_instance(3, n=6, q=4, z=5)])
    same = edges[:, :1].expand(-1, 4, -1).contiguous()
    probs = torch.exp(model(same, reqs))
    assert (probs - 0.25).abs().max() <= 1e-6


def test_deterministic():
    inst = small_instance(9, z=5)
    a = policy(build_model(SMALL, 1), inst).probs
    b = policy(build_model(SMALL, 1), inst).probs
    assert (a == b).all()
    assert not (a == policy(build_model(SMALL, 2), inst).probs).all()


def test_no_requests():
    assert policy(build_model(SMALL), small_instance(0, z=0)).probs.shape == (3, 0)


def test_overflow_detected():
    model = build_model(SMALL)
    with torch.no_grad():
        model.w_px.weight[0, 0] = float("nan")
    with pytest.raises(NumericOverflowError):
        policy(model, small_instance(0))


def test_greedy_decoding():
    assert decode_greedy(PolicyMatrix(np.full((3, 1), 1 / 3))).exec_edge == (0,)
    assert decode_greedy(PolicyMatrix(np.array([[0.1], [0.7], [0.2]]))).exec_edge == (1,)


def test_greedy_invariant_to_exp_scaling():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(4, 6))
    p = np.exp(logits) / np.exp(logits).sum(0)
    scaled = np.exp(logits + 3.0) / np.exp(logits + 3.0).sum(0)
    assert decode_greedy(PolicyMatrix(p)) == decode_greedy(PolicyMatrix(scaled))


def test_sampling_one_hot():
    probs = np.eye(3)[:, [2, 0, 1, 1]]
    inst = light_instance(0, q=3, z=4)
    for n in (1, 50):
        assert decode_sampling(PolicyMatrix(probs), n, inst, seed=4).exec_edge == (2, 0, 1, 1)


def test_sample_frequencies():
    probs = np.array([[0.2, 1.0], [0.5, 0.0], [0.3, 0.0]])
    draws = sample_assignments(probs, 20000, np.random.default_rng(1))
    freq = np.bincount(draws[:, 0], minlength=3) / 20000
    assert freq == pytest.approx([0.2, 0.5, 0.3], abs=0.015)
    assert (draws[:, 1] == 0).all()


@settings(max_examples=15)
@given(st.integers(0, 2**31))
def test_sampling_best_of_and_exact_lower_bound(seed):
    inst = light_instance(seed, q=3, z=6)
    pol = policy(build_model(SMALL, seed), inst)
    one = makespan(inst, decode_sampling(pol, 1, inst, seed))
    many = makespan(inst, decode_sampling(pol, 1000, inst, seed))
    assert many <= one
    assert many >= solve_exact(inst).makespan - 1e-9


def test_zero_adjoint_zero_gradient():
    inst = small_instance(0, z=4)
    grads = backward(build_model(SMALL), inst, np.zeros((3, 4)))
    assert all((g == 0).all() for g in grads.values())


def test_edge_path_gradient_ignores_request_order():
    inst = small_instance(5, z=5)
    model = build_model(SMALL, 5)
    adj = np.random.default_rng(0).normal(size=(3, 5))
    perm = [4, 2, 0, 3, 1]
    shuffled = type(inst)(inst.edges, 3, inst.transmission_constant, inst.snapshots,
                          tuple(inst.requests[p] for p in perm))
    a = backward(model, inst, adj)
    b = backward(model, shuffled, adj[:, perm])
    for name in a:
        if name.startswith(("edge_embed", "edge_layers")):
            assert torch.allclose(a[name], b[name], atol=1e-10, rtol=1e-8), name


def test_backward_matches_finite_differences():
    model = build_model(ModelConfig(**TINY), 2)
    inst = small_instance(2, n=5, q=3, z=4)
    adj = np.random.default_rng(2).normal(size=(3, 4))
    edges, reqs = batch_tensors(model, [inst])
    adj_t = torch.as_tensor(adj)
    numeric = numeric_grads(model, lambda: (torch.exp(model(edges, reqs)[0]) * adj_t).sum())
    errs = relative_errors(backward(model, inst, adj), numeric)
    assert max(errs.values()) <= 1e-4, errs
