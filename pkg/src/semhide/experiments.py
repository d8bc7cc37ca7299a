"""Canonical desk-scale experiment setups shared by the CLI and the test suite."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .data import chunk_video, synthetic_corpus
from .trainer import TrainConfig, Trainer

logger = logging.getLogger(__name__)

TRAIN_SEED_BASE = 0
HELDOUT_SEED_BASE = 100_000
CACHE_ENV = "SEMHIDE_CACHE"


def chunks_from(videos, T=5):
    return np.stack([c for v in videos for c in chunk_video(v, T)])


def smoke_config(**overrides) -> TrainConfig:
    base = dict(
        steps=2000,
        batch_size=4,
        pretrain_steps=1500,
        capacity_ratio_train=0.5,
        snr_db_train=(5.0, 30.0),
        seed=0,
        eval_every=100,
        checkpoint_every=500,
    )
    base.update(overrides)
    return TrainConfig(**base)


def smoke_data(n_train_videos=64, n_heldout_videos=8, resolution=(64, 64), length=21):
    """Training chunks plus held-out (covers, secrets) probe chunks."""
    train = chunks_from(synthetic_corpus(n_train_videos, resolution, length, seed=TRAIN_SEED_BASE))
    held = chunks_from(synthetic_corpus(2 * n_heldout_videos, resolution, length, seed=HELDOUT_SEED_BASE))
    half = held.shape[0] // 2
    return train, (held[:half], held[half:])


def _cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "semhide"))


def smoke_checkpoint(cache_dir=None, config: TrainConfig | None = None):
    """Train (or load from cache) the smoke-test checkpoint.

    Returns ``(checkpoint, run_dir)``; ``run_dir`` holds the loss and eval logs.
    The cache key hashes the full config, so edits retrain.
    """
    config = config or smoke_config()
    key = hashlib.sha256(json.dumps(config.to_dict(), sort_keys=True, default=str).encode()).hexdigest()[:12]
    run_dir = Path(cache_dir or _cache_dir()) / f"smoke-{key}"
    path, done = run_dir / "checkpoint.pt", run_dir / "config.json"
    # config.json is written last, so a crashed run is never mistaken for a finished one
    if path.exists() and done.exists():
        return Checkpoint.load(path), run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    logger.info("training smoke checkpoint into %s", run_dir)
    train, probe = smoke_data()
    trainer = Trainer(config, train, probe=probe, out_dir=run_dir)
    trainer.run()
    trainer.save(run_dir)
    done.write_text(json.dumps(config.to_dict(), indent=2))
    return Checkpoint.load(path), run_dir
