"""S-samples batch REINFORCE with a mean-makespan baseline and an entropy bonus."""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from . import checkpoint
from .domain import Assignment, Instance
from .instancegen import GenConfig, derive_seed, generate
from .neural import (
    CoRaiS,
    ModelConfig,
    PolicyMatrix,
    build_model,
    decode_sampling,
    log_policy_batch,
    policy,
    sample_assignments,
)
from .objective import Problem, Variant

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
_DTYPES = {"float64": torch.float64, "float32": torch.float32}


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    samples_per_instance: int = 64
    lr: float = 1e-5
    c1: float = 10.0
    c2: float = 0.5
    total_batches: int = 40000
    gen: GenConfig = field(default_factory=lambda: GenConfig(10, 5, 50, keep_backlogs=False))
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    eval_every: int = 500
    eval_instances: int = 32
    eval_samples: int = 128
    checkpoint_every: int = 1000
    dtype: str = "float64"
    threads: int = 1
    variant: Variant = "canonical"

    def validate(self) -> None:
        if self.samples_per_instance < 2:
            raise ValueError("samples_per_instance must be >= 2 for a mean baseline")
        if self.batch_size < 1 or self.total_batches < 0:
            raise ValueError("batch_size must be >= 1 and total_batches >= 0")
        if self.lr < 0 or self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("lr must be >= 0 and c1, c2 > 0")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")
        self.gen.validate()
        self.model.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "gen" in d:
            g = dict(d["gen"])
            for k in ("replica_choices", "backlog_count_range", "input_size_range", "output_size_range",
                      "phi_coeff_range"):
                if k in g:
                    g[k] = tuple(g[k])
            d["gen"] = GenConfig(**g)
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)


# -- loss terms --------------------------------------------------------------------

def sample_log_prob(pol: PolicyMatrix | np.ndarray, asg: Assignment, floor: float = LOG_FLOOR) -> float:
    probs = pol.probs if isinstance(pol, PolicyMatrix) else np.asarray(pol)
    picked = probs[np.asarray(asg.exec_edge, dtype=np.intp), np.arange(len(asg.exec_edge))]
    return float(np.log(np.maximum(picked, floor)).sum())


def entropy(pol: PolicyMatrix | np.ndarray) -> float:
    probs = pol.probs if isinstance(pol, PolicyMatrix) else np.asarray(pol)
    logs = np.log(np.where(probs > 0, probs, 1.0))
    return float(-(probs * logs).sum())


def advantages(costs: np.ndarray) -> np.ndarray:
    """Mean-centred costs along the last axis."""
    costs = np.asarray(costs, dtype=float)
    return costs - costs.mean(axis=-1, keepdims=True)


@dataclass
class BatchLoss:
    loss: torch.Tensor
    mean_makespan: float
    mean_entropy: float
    samples: list[np.ndarray]
    makespans: list[np.ndarray]


def batch_loss(
    model: CoRaiS,
    instances: Sequence[Instance],
    S: int,
    seed: int,
    c1: float = 10.0,
    c2: float = 0.5,
    samples: Optional[Sequence[np.ndarray]] = None,
    variant: Variant = "canonical",
) -> BatchLoss:
    """Mean over instances of ``c1 * sum_s log p(pi_s) * A(pi_s) - c2 * H``.

    Costs are makespans (negated rewards) and enter only through the constant
    advantages, so the gradient is the score-function estimator.  Instance g draws its
    S assignments from its own generator seeded by ``derive_seed(seed, g)``; pass
    ``samples`` to reuse fixed draws instead.
    """
    if S < 2:
        raise ValueError("S must be >= 2")
    logp = log_policy_batch(model, instances)  # (B, Q, Z)
    probs_np = torch.exp(logp).detach().cpu().numpy()
    floor = math.log(LOG_FLOOR)
    draws, spans, terms, ents = [], [], [], []
    for g, inst in enumerate(instances):
        if samples is None:
            rng = np.random.Generator(np.random.PCG64(derive_seed(seed, g)))
            A = sample_assignments(probs_np[g], S, rng)
        else:
            A = np.asarray(samples[g], dtype=np.intp)
        L = Problem(inst).makespans(A, variant)
        adv = torch.as_tensor(advantages(L), dtype=logp.dtype)
        idx = torch.as_tensor(A, dtype=torch.long).unsqueeze(0)  # (1, S, Z)
        lp = logp[g].unsqueeze(0).gather(1, idx).clamp_min(floor).sum(dim=-1)[0]  # (S,)
        ent = -(torch.exp(logp[g]) * logp[g]).sum()
        terms.append(c1 * (lp * adv).sum() - c2 * ent)
        draws.append(A)
        spans.append(L)
        ents.append(float(ent.detach()))
    loss = torch.stack(terms).mean()
    return BatchLoss(loss, float(np.mean([s.mean() for s in spans])), float(np.mean(ents)), draws, spans)


# -- checkpoints -------------------------------------------------------------------

def save_checkpoint(path, model: CoRaiS, optimizer: Optional[torch.optim.Optimizer] = None,
                    meta: Optional[dict] = None) -> None:
    tensors = {f"model.{n}": p.detach().cpu().numpy() for n, p in model.named_parameters()}
    meta = dict(meta or {})
    if optimizer is not None:
        name_of = {id(p): n for n, p in model.named_parameters()}
        steps = {}
        for p, st in optimizer.state.items():
            n = name_of[id(p)]
            tensors[f"adam.exp_avg.{n}"] = st["exp_avg"].detach().cpu().numpy()
            tensors[f"adam.exp_avg_sq.{n}"] = st["exp_avg_sq"].detach().cpu().numpy()
            steps[n] = float(st["step"])
        meta["adam_steps"] = steps
    checkpoint.write(path, model.cfg.to_dict(), tensors, meta)


def load_checkpoint(path, optimizer_lr: Optional[float] = None):
    """Return ``(model, optimizer_or_None, meta)``; the optimizer is rebuilt when ``optimizer_lr`` is given."""
    cfg_dict, tensors, meta = checkpoint.read(path)
    cfg = ModelConfig.from_dict(cfg_dict)
    first = tensors[next(k for k in tensors if k.startswith("model."))]
    dtype = torch.float64 if first.dtype == np.float64 else torch.float32
    model = CoRaiS(cfg).to(dtype)
    with torch.no_grad():
        for n, p in model.named_parameters():
            p.copy_(torch.as_tensor(tensors[f"model.{n}"]))
    opt = None
    if optimizer_lr is not None:
        opt = torch.optim.Adam(model.parameters(), lr=optimizer_lr)
        for n, p in model.named_parameters():
            if f"adam.exp_avg.{n}" in tensors:
                opt.state[p] = {
                    "step": torch.tensor(meta["adam_steps"][n]),
                    "exp_avg": torch.as_tensor(tensors[f"adam.exp_avg.{n}"]).clone(),
                    "exp_avg_sq": torch.as_tensor(tensors[f"adam.exp_avg_sq.{n}"]).clone(),
                }
    return model, opt, meta


def load_model(path) -> CoRaiS:
    return load_checkpoint(path)[0]


# -- training loop -----------------------------------------------------------------

class TrainingDiverged(RuntimeError):
    pass


def heldout_set(cfg: TrainConfig) -> list[Instance]:
    return [generate(dataclasses.replace(cfg.gen, seed=derive_seed(cfg.seed, 3, i)))
            for i in range(cfg.eval_instances)]


def evaluate_heldout(model: CoRaiS, instances: Sequence[Instance], n: int, seed: int,
                     variant: Variant = "canonical") -> float:
    spans = []
    for i, inst in enumerate(instances):
        prob = Problem(inst)
        asg = decode_sampling(policy(model, inst), n, inst, derive_seed(seed, 4, i), variant, prob)
        spans.append(float(prob.makespans(np.asarray([asg.exec_edge]), variant)[0]))
    return float(np.mean(spans))


def batch_instances(cfg: TrainConfig, b: int) -> list[Instance]:
    return [generate(dataclasses.replace(cfg.gen, seed=derive_seed(cfg.seed, 1, b, i)))
            for i in range(cfg.batch_size)]


@dataclass
class TrainResult:
    model: CoRaiS
    metrics: list[dict]


METRIC_FIELDS = ["batch", "loss", "entropy", "mean_sampled_makespan", "heldout_makespan", "wall_clock"]


def train(
    cfg: TrainConfig,
    out_dir: Optional[str | Path] = None,
    resume_from: Optional[str | Path] = None,
    stop_after: Optional[int] = None,
    on_metrics: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Run the training loop, writing ``metrics.csv`` and checkpoints under ``out_dir``.

    Batch ``b`` draws its instances and samples from seeds derived from
    ``(cfg.seed, b)``, so resuming from a checkpoint replays the same sequence.
    ``stop_after`` ends the run early after that many batches (used for replay tests).
    """
    cfg.validate()
    torch.set_num_threads(cfg.threads)
    torch.use_deterministic_algorithms(True)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        model, opt, meta = load_checkpoint(resume_from, optimizer_lr=cfg.lr)
        start = int(meta["batch"])
    else:
        model = build_model(cfg.model, seed=derive_seed(cfg.seed, 0), dtype=_DTYPES[cfg.dtype])
        opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        start = 0

    heldout = heldout_set(cfg) if cfg.eval_instances > 0 else []
    metrics: list[dict] = []
    t0 = time.perf_counter()
    csv_fh = writer = None
    if out is not None:
        csv_fh = open(out / "metrics.csv", "a" if resume_from else "w", newline="")
        writer = csv.DictWriter(csv_fh, METRIC_FIELDS)
        if not resume_from:
            writer.writeheader()

    def record(row):
        metrics.append(row)
        if writer is not None:
            writer.writerow(row)
            csv_fh.flush()
        if on_metrics is not None:
            on_metrics(row)

    def save(batch, name):
        if out is not None:
            save_checkpoint(out / name, model, opt, {"batch": batch, "train_config": cfg.to_dict()})

    try:
        if start == 0 and heldout:
            record({"batch": 0, "loss": "", "entropy": "", "mean_sampled_makespan": "",
                    "heldout_makespan": evaluate_heldout(model, heldout, cfg.eval_samples, cfg.seed, cfg.variant),
                    "wall_clock": 0.0})
        save(start, "last.ckpt")
        end = cfg.total_batches if stop_after is None else min(cfg.total_batches, start + stop_after)
        for b in range(start, end):
            insts = batch_instances(cfg, b)
            res = batch_loss(model, insts, cfg.samples_per_instance, derive_seed(cfg.seed, 2, b),
                             cfg.c1, cfg.c2, variant=cfg.variant)
            if not torch.isfinite(res.loss):
                raise TrainingDiverged(f"non-finite loss at batch {b}; last good checkpoint kept")
            opt.zero_grad(set_to_none=True)
            res.loss.backward()
            opt.step()
            done = b + 1
            row = {"batch": done, "loss": float(res.loss.detach()), "entropy": res.mean_entropy,
                   "mean_sampled_makespan": res.mean_makespan, "heldout_makespan": "",
                   "wall_clock": time.perf_counter() - t0}
            if heldout and (done % cfg.eval_every == 0 or done == cfg.total_batches):
                row["heldout_makespan"] = evaluate_heldout(model, heldout, cfg.eval_samples, cfg.seed, cfg.variant)
                log.info("batch %d heldout makespan %.4f", done, row["heldout_makespan"])
            record(row)
            if done % cfg.checkpoint_every == 0 or done == end:
                save(done, "last.ckpt")
                if done % cfg.checkpoint_every == 0:
                    save(done, f"batch_{done:06d}.ckpt")
    finally:
        if csv_fh is not None:
            csv_fh.close()
    return TrainResult(model, metrics)
