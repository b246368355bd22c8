"""Attention-based matching-on-demand scheduler.

Edges and requests are embedded by two independent set encoders (multi-head
self-attention and a feed-forward sublayer, each with a skip connection and batch
normalisation).  A context decoder attends from every edge, concatenated with the
max-pooled edge and request summaries, onto the request embeddings.  The policy is a
per-request softmax over edges of ``C * tanh`` clipped compatibilities.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Literal, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .domain import Assignment, Instance
from .objective import Problem, Variant

REQUEST_FEATURE_DIM = 6


class NumericOverflowError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_h: int = 224
    n_edge_layers: int = 5
    n_request_layers: int = 3
    n_heads: int = 8
    ff_hidden: int = 512
    clip_c: float = 10.0
    phi_degree: int = 1
    norm_scope: Literal["batch", "instance"] = "batch"

    @property
    def edge_feature_dim(self) -> int:
        return 2 + (self.phi_degree + 1) + 1 + 5

    @property
    def request_feature_dim(self) -> int:
        return REQUEST_FEATURE_DIM

    def validate(self) -> None:
        if min(self.d_h, self.n_heads, self.ff_hidden, self.phi_degree + 1) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if self.n_edge_layers < 0 or self.n_request_layers < 0:
            raise ValueError("layer counts must be >= 0")
        if self.d_h % self.n_heads:
            raise ValueError(f"d_h={self.d_h} not divisible by n_heads={self.n_heads}")
        if self.norm_scope not in ("batch", "instance"):
            raise ValueError(f"unknown norm_scope {self.norm_scope!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class PolicyMatrix:
    """``probs[q, z]``: probability that edge q serves request z; columns sum to one."""

    probs: np.ndarray


# -- features ----------------------------------------------------------------------

def featurize(inst: Instance, phi_degree: int = 1) -> tuple[np.ndarray, np.ndarray]:
    Q = inst.region_size
    edge_rows = []
    for e, s in zip(inst.edges[:Q], inst.snapshots):
        if len(e.phi_coeffs) != phi_degree + 1:
            raise ValueError(f"edge {e.id} has {len(e.phi_coeffs)} phi coefficients, model expects {phi_degree + 1}")
        edge_rows.append([*e.coords, *e.phi_coeffs, float(e.replica_count), *s.as_tuple()])
    xy = inst.coords_array()
    req_rows = [
        [*xy[r.source_edge], r.input_size, *xy[r.predicted_edge], r.output_size] for r in inst.requests
    ]
    edges = np.array(edge_rows, dtype=float).reshape(Q, 2 + phi_degree + 1 + 1 + 5)
    reqs = np.array(req_rows, dtype=float).reshape(len(inst.requests), REQUEST_FEATURE_DIM)
    return edges, reqs


# -- model -------------------------------------------------------------------------

class SetBatchNorm(nn.Module):
    """Batch normalisation whose statistics pool every set element of the processed batch.

    With ``scope="instance"`` statistics are taken per instance instead.  No running
    statistics are kept, so inference normalises over whatever is being processed.
    """

    def __init__(self, d: int, scope: str = "batch", eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(d))
        self.bias = nn.Parameter(torch.zeros(d))
        self.scope, self.eps = scope, eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        dims = (0, 1) if self.scope == "batch" else (1,)
        mean = x.mean(dims, keepdim=True)
        var = x.var(dims, unbiased=False, keepdim=True)
        return (x - mean) / torch.sqrt(var + self.eps) * self.weight + self.bias


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention; the output projection equals the summed per-head projections."""

    def __init__(self, d_query_in: int, d: int, n_heads: int):
        super().__init__()
        self.n_heads, self.d_head = n_heads, d // n_heads
        self.w_query = nn.Linear(d_query_in, d, bias=False)
        self.w_key = nn.Linear(d, d, bias=False)
        self.w_value = nn.Linear(d, d, bias=False)
        self.w_out = nn.Linear(d, d, bias=False)

    def forward(self, q_in: torch.Tensor, kv_in: torch.Tensor) -> torch.Tensor:
        B, Sq, _ = q_in.shape
        Sk = kv_in.shape[1]
        M, dh = self.n_heads, self.d_head
        q = self.w_query(q_in).view(B, Sq, M, dh).transpose(1, 2)
        k = self.w_key(kv_in).view(B, Sk, M, dh).transpose(1, 2)
        v = self.w_value(kv_in).view(B, Sk, M, dh).transpose(1, 2)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
        return self.w_out((att @ v).transpose(1, 2).reshape(B, Sq, M * dh))


class EncoderLayer(nn.Module):
    def __init__(self, d: int, n_heads: int, ff_hidden: int, scope: str):
        super().__init__()
        self.mha = MultiHeadAttention(d, d, n_heads)
        self.norm1 = SetBatchNorm(d, scope)
        self.ff = nn.Sequential(nn.Linear(d, ff_hidden), nn.ReLU(), nn.Linear(ff_hidden, d))
        self.norm2 = SetBatchNorm(d, scope)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x + self.mha(x, x))
        return self.norm2(h + self.ff(h))


class CoRaiS(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        d = cfg.d_h
        self.edge_embed = nn.Linear(cfg.edge_feature_dim, d)
        self.request_embed = nn.Linear(cfg.request_feature_dim, d)
        self.edge_layers = nn.ModuleList(
            EncoderLayer(d, cfg.n_heads, cfg.ff_hidden, cfg.norm_scope) for _ in range(cfg.n_edge_layers))
        self.request_layers = nn.ModuleList(
            EncoderLayer(d, cfg.n_heads, cfg.ff_hidden, cfg.norm_scope) for _ in range(cfg.n_request_layers))
        self.context = MultiHeadAttention(3 * d, d, cfg.n_heads)
        self.w_px = nn.Linear(d, d, bias=False)
        self.w_py = nn.Linear(d, d, bias=False)
        self.reset_parameters()

    def reset_parameters(self, generator: Optional[torch.Generator] = None) -> None:
        # Uniform(-1/sqrt(d), 1/sqrt(d)) with d the trailing (input) dimension of each tensor
        with torch.no_grad():
            for p in self.parameters():
                bound = 1.0 / math.sqrt(p.shape[-1])
                p.uniform_(-bound, bound, generator=generator)

    def encode(self, edges: torch.Tensor, requests: torch.Tensor):
        f = self.edge_embed(edges)
        for layer in self.edge_layers:
            f = layer(f)
        h = self.request_embed(requests)
        for layer in self.request_layers:
            h = layer(h)
        return f, h

    def importance(self, edges: torch.Tensor, requests: torch.Tensor) -> torch.Tensor:
        """Clipped compatibilities ``C * tanh(u)`` of shape (B, Q, Z)."""
        B, Q, _ = edges.shape
        f, h = self.encode(edges, requests)
        f_pool = f.max(dim=1, keepdim=True).values.expand(B, Q, -1)
        h_pool = h.max(dim=1, keepdim=True).values.expand(B, Q, -1)
        c = self.context(torch.cat([f_pool, h_pool, f], dim=-1), h)
        u = self.w_px(c) @ self.w_py(h).transpose(-1, -2) / math.sqrt(self.cfg.d_h)
        return self.cfg.clip_c * torch.tanh(u)

    def forward(self, edges: torch.Tensor, requests: torch.Tensor) -> torch.Tensor:
        """Log-probabilities (B, Q, Z) for edge features (B, Q, Fe) and request features (B, Z, 6)."""
        B, Q, _ = edges.shape
        if requests.shape[1] == 0:
            return edges.new_zeros((B, Q, 0))
        logits = self.importance(edges, requests)
        if not torch.isfinite(logits).all():
            raise NumericOverflowError("numeric overflow: non-finite policy logits")
        return torch.log_softmax(logits, dim=1)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_model(cfg: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float64) -> CoRaiS:
    model = CoRaiS(cfg).to(dtype)
    model.reset_parameters(torch.Generator().manual_seed(seed))
    return model


def batch_tensors(model: CoRaiS, instances: Sequence[Instance]) -> tuple[torch.Tensor, torch.Tensor]:
    dtype = next(model.parameters()).dtype
    feats = [featurize(inst, model.cfg.phi_degree) for inst in instances]
    shapes = {(e.shape[0], r.shape[0]) for e, r in feats}
    if len(shapes) != 1:
        raise ValueError(f"instances in a batch must share (Q, Z); got {sorted(shapes)}")
    edges = torch.as_tensor(np.stack([e for e, _ in feats]), dtype=dtype)
    reqs = torch.as_tensor(np.stack([r for _, r in feats]), dtype=dtype)
    return edges, reqs


def log_policy_batch(model: CoRaiS, instances: Sequence[Instance]) -> torch.Tensor:
    return model(*batch_tensors(model, instances))


def policy(model: CoRaiS, inst: Instance) -> PolicyMatrix:
    with torch.no_grad():
        logp = log_policy_batch(model, [inst])[0]
    return PolicyMatrix(torch.exp(logp).cpu().numpy().astype(float))


def backward(model: CoRaiS, inst: Instance, adjoint: np.ndarray) -> dict[str, torch.Tensor]:
    """Gradients of ``sum(adjoint * probs)`` with respect to every parameter."""
    model.zero_grad(set_to_none=True)
    probs = torch.exp(log_policy_batch(model, [inst])[0])
    adj = torch.as_tensor(np.asarray(adjoint, dtype=float), dtype=probs.dtype)
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad((probs * adj).sum(), params, allow_unused=True)
    return {n: (g if g is not None else torch.zeros_like(p)) for n, p, g in zip(names, params, grads)}


# -- decoding ----------------------------------------------------------------------

def decode_greedy(pol: PolicyMatrix) -> Assignment:
    # argmax returns the first maximum, i.e. the smallest edge index on ties
    return Assignment.of(np.argmax(pol.probs, axis=0)) if pol.probs.shape[1] else Assignment(())


def sample_assignments(probs: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` complete assignments (n, Z), each request independently from its column."""
    Q, Z = probs.shape
    cdf = np.cumsum(probs, axis=0)
    u = rng.random((n, Z)) * cdf[-1]
    out = np.empty((n, Z), dtype=np.intp)
    for z in range(Z):
        out[:, z] = np.searchsorted(cdf[:, z], u[:, z], side="right")
    np.minimum(out, Q - 1, out=out)
    return out


def decode_sampling(pol: PolicyMatrix, n: int, inst: Instance, seed: int = 0,
                    variant: Variant = "canonical", prob: Optional[Problem] = None) -> Assignment:
    """Best of ``n`` sampled assignments by makespan; the earliest draw wins ties."""
    if n < 1:
        raise ValueError("n must be >= 1")
    prob = prob or Problem(inst)
    rng = np.random.Generator(np.random.PCG64(seed % 2**64))
    A = sample_assignments(pol.probs, n, rng)
    spans = prob.makespans(A, variant)
    return Assignment.of(A[int(np.argmin(spans))])
