"""Named configurations shared by scripts/ and the acceptance suite."""
from __future__ import annotations

import json
import shutil
from pathlib import Path

from . import checkpoint
from .instancegen import GenConfig
from .neural import ModelConfig
from .training import TrainConfig, train

# Narrower and shallower than the default so that 2000 batches train in minutes on one core.
DESK_MODEL = ModelConfig(d_h=64, n_edge_layers=3, n_request_layers=2, n_heads=8, ff_hidden=256)


def desk_learning(seed: int = 1) -> TrainConfig:
    """Small-scale run: 6 edges, 3 in the control region, 20 requests."""
    return TrainConfig(
        batch_size=32, samples_per_instance=16, lr=1e-4, total_batches=2000,
        gen=GenConfig(6, 3, 20, keep_backlogs=False), model=DESK_MODEL, seed=seed,
        eval_every=250, eval_instances=16, eval_samples=128, checkpoint_every=500,
    )


def desk_characteristic(seed: int = 2) -> TrainConfig:
    """Five-edge control region, used by the load-balance / workload / heterogeneity scenarios."""
    return TrainConfig(
        batch_size=32, samples_per_instance=16, lr=1e-4, total_batches=2000,
        gen=GenConfig(10, 5, 50, keep_backlogs=False), model=DESK_MODEL, seed=seed,
        eval_every=250, eval_instances=16, eval_samples=128, checkpoint_every=500,
    )


PRESETS = {"desk-learning": desk_learning, "desk-characteristic": desk_characteristic}


def _normalised(cfg: TrainConfig) -> dict:
    return json.loads(json.dumps(cfg.to_dict()))


def ensure_checkpoint(name: str, root: str | Path, force: bool = False) -> Path:
    """Path to ``root/name/model.ckpt``, training the preset first unless a matching one exists.

    A stored checkpoint is reused only when its recorded training config equals the
    preset, so editing a preset invalidates stale artifacts.
    """
    cfg = PRESETS[name]()
    out = Path(root) / name
    target = out / "model.ckpt"
    if target.exists() and not force:
        _, _, meta = checkpoint.read(target)
        if meta.get("train_config") == _normalised(cfg) and meta.get("batch") == cfg.total_batches:
            return target
    work = out / "run"
    if work.exists():
        shutil.rmtree(work)
    train(cfg, work)
    shutil.copy(work / "last.ckpt", target)
    shutil.copy(work / "metrics.csv", out / "metrics.csv")
    shutil.rmtree(work)
    return target
