"""Joint optimisation of codec, hider and extractor.

Every per-step random draw (data order, schedule, SNR, latent noise, channel
noise) is derived from ``(seed, step)``, so a resumed run replays exactly the
same stream as an uninterrupted one.

Training runs in two phases: ``pretrain_steps`` of codec-only reconstruction
over the channel (stand-in for a backbone pretrained elsewhere), then
``steps`` of joint training with two learning rates.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import Checkpoint, collect_tensors, _load_part
from .codec import LatentDistribution, VideoCodec, reparameterize
from .errors import CheckpointError, ConfigError, TrainingDivergedError
from .hiding import HidingNetConfig, SecretExtractor, SemanticHider
from .losses import (
    TERMS,
    LossWeights,
    ModelOutputs,
    RandomConvFeatures,
    SampleKind,
    charbonnier,
    combine,
    kl_standard,
    loss_terms,
    perceptual_loss,
)
from .metrics import psnr
from .pipeline import authorized_receive, channel_pass, send
from .scheduler import HidingSchedule, draw_schedule

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr_codec: float = 2e-5
    lr_hiding: float = 4e-4
    pretrain_steps: int = 0
    lr_pretrain: float = 1e-3
    null_clip_rate: float = 0.1
    snr_db_train: tuple = (5.0, 30.0)
    capacity_ratio_train: float = 0.5
    chunk_frames: int = 5
    grad_clip: float = 1.0
    seed: int = 0
    deterministic: bool = True
    eval_every: int = 0
    eval_snr_db: float = 25.0
    checkpoint_every: int = 0
    codec_widths: tuple = (32, 64, 96)
    codec_res_blocks: int = 0
    hiding: HidingNetConfig = field(default_factory=HidingNetConfig)

    def __post_init__(self):
        if isinstance(self.hiding, dict):
            self.hiding = HidingNetConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in self.hiding.items()})
        self.snr_db_train = tuple(self.snr_db_train) if not np.isscalar(self.snr_db_train) else (float(self.snr_db_train),) * 2
        self.codec_widths = tuple(self.codec_widths)
        if self.lr_codec <= 0 or self.lr_hiding <= 0 or self.lr_pretrain <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.steps < 0 or self.pretrain_steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.capacity_ratio_train <= 1.0:
            raise ConfigError("capacity_ratio_train must lie in [0, 1]")
        if self.chunk_frames < 1 or (self.chunk_frames - 1) % 4:
            raise ConfigError(f"chunk_frames {self.chunk_frames} must satisfy T = 1 mod 4")
        lo, hi = self.snr_db_train
        if hi < lo:
            raise ConfigError(f"snr_db_train range {self.snr_db_train} is reversed")
        self.hiding.validate()

    @property
    def total_steps(self) -> int:
        return self.pretrain_steps + self.steps

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hiding"] = asdict(self.hiding)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def _as_dataset(dataset) -> torch.Tensor:
    if isinstance(dataset, torch.Tensor):
        data = dataset.float()
    else:
        data = torch.from_numpy(np.stack([np.asarray(c, dtype=np.float32) for c in dataset]))
    if data.dim() != 5 or data.shape[1] != 3 or data.shape[0] == 0:
        raise ConfigError(f"dataset must be a non-empty stack of (3, T, H, W) chunks, got {tuple(data.shape)}")
    return data.contiguous()


def _stream_index(seed: int, tag: int, position: int, n: int) -> int:
    epoch, offset = divmod(position, n)
    perm = np.random.default_rng([seed, tag, epoch]).permutation(n)
    return int(perm[offset])


def build_models(config: TrainConfig):
    torch.manual_seed(config.seed)
    codec = VideoCodec(config.codec_widths, config.codec_res_blocks)
    hider = SemanticHider(config.hiding)
    extractor = SecretExtractor(config.hiding)
    return codec, hider, extractor


class Trainer:
    """Owns models, optimiser and logs for one run."""

    def __init__(self, config: TrainConfig, dataset, weights: LossWeights | None = None,
                 checkpoint: Checkpoint | None = None, out_dir=None, probe=None, perceptual=None):
        self.config = config
        self.weights = weights or LossWeights()
        self.data = _as_dataset(dataset)
        if self.data.shape[2] != config.chunk_frames:
            raise ConfigError(f"dataset chunks have {self.data.shape[2]} frames, config says {config.chunk_frames}")
        if config.deterministic:
            torch.use_deterministic_algorithms(True)
        self.codec, self.hider, self.extractor = build_models(config)
        self.perceptual = perceptual or RandomConvFeatures()
        self.optimizer = torch.optim.Adam(
            [
                {"params": list(self.codec.parameters()), "lr": config.lr_codec, "name": "codec"},
                {"params": list(self.hider.parameters()) + list(self.extractor.parameters()),
                 "lr": config.lr_hiding, "name": "hiding"},
            ]
        )
        self.step = 0
        self.loss_rows: list[tuple] = []
        self.eval_rows: list[dict] = []
        self.out_dir = Path(out_dir) if out_dir else None
        self.probe = probe
        if checkpoint is not None:
            self._restore(checkpoint)

    # ------------------------------------------------------------------ state

    def _restore(self, ckpt: Checkpoint):
        meta = ckpt.meta
        if tuple(meta.get("codec_widths", ())) != self.config.codec_widths:
            raise CheckpointError("checkpoint codec widths do not match config")
        res = meta.get("resolution")
        if res is not None and list(res) != list(self.data.shape[-2:]):
            raise CheckpointError(f"checkpoint trained at {res}, dataset is {list(self.data.shape[-2:])}")
        _load_part(self.codec, ckpt.tensors, "codec")
        _load_part(self.hider, ckpt.tensors, "hider")
        _load_part(self.extractor, ckpt.tensors, "extractor")
        if ckpt.optimizer is not None:
            self.optimizer.load_state_dict(ckpt.optimizer)
        self.step = ckpt.step

    def checkpoint(self) -> Checkpoint:
        meta = {
            "step": self.step,
            "seed": self.config.seed,
            "latent_channels": 16,
            "chunk_frames": self.config.chunk_frames,
            "resolution": list(self.data.shape[-2:]),
            "codec_widths": list(self.config.codec_widths),
            "codec_res_blocks": self.config.codec_res_blocks,
            "hiding": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.config.hiding).items()},
            "config": self.config.to_dict(),
            "loss_weights": asdict(self.weights),
            "rng": {"scheme": "per-step", "seed": self.config.seed},
            "version": __version__,
        }
        return Checkpoint(
            collect_tensors(codec=self.codec, hider=self.hider, extractor=self.extractor),
            meta,
            self.optimizer.state_dict(),
        )

    # ------------------------------------------------------------------ steps

    def _rngs(self, step):
        rng = np.random.default_rng([self.config.seed, 1, step])
        gen = torch.Generator().manual_seed(int(rng.integers(2**62)))
        return rng, gen

    def _batch(self, step, tag, count):
        n = self.data.shape[0]
        idx = [_stream_index(self.config.seed, tag, step * self.config.batch_size + i, n) for i in range(count)]
        return self.data[idx]

    def _snr(self, rng, b):
        lo, hi = self.config.snr_db_train
        return torch.tensor(rng.uniform(lo, hi, size=b) if hi > lo else np.full(b, lo), dtype=torch.float32)

    def _set_codec_lr(self, lr):
        self.optimizer.param_groups[0]["lr"] = lr

    def _check_finite(self, terms: dict, kind: str):
        for name, value in terms.items():
            v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
            if not math.isfinite(v):
                raise TrainingDivergedError(f"{kind}:{name}", self.step, v)

    def _log(self, kind, terms, total):
        for name in TERMS:
            self.loss_rows.append((self.step, name, float(terms[name].detach()), kind))
        self.loss_rows.append((self.step, "total", float(total.detach()), kind))

    def pretrain_step(self):
        cfg, w = self.config, self.weights
        rng, gen = self._rngs(self.step)
        covers = self._batch(self.step, 7, cfg.batch_size).clone()
        blank = torch.from_numpy(rng.random(cfg.batch_size) < cfg.null_clip_rate)
        covers[blank] = 0.0
        dist = self.codec.encode(covers)
        z = reparameterize(dist, gen)
        rx = channel_pass(z, self._snr(rng, cfg.batch_size), gen)
        rec = self.codec.decode(rx, cfg.chunk_frames)
        terms = dict.fromkeys(TERMS, rec.new_zeros(()))
        terms["cover"] = charbonnier(rec, covers)
        terms["perceptual"] = perceptual_loss(rec, covers, None, None, self.perceptual)
        terms["kl_cover"] = kl_standard(dist)
        total = combine(terms, w)
        self._check_finite({**terms, "total": total}, "pretrain")
        self._log("pretrain", terms, total)
        return total

    def joint_step(self):
        cfg = self.config
        B, T = cfg.batch_size, cfg.chunk_frames
        rng, gen = self._rngs(self.step)
        schedule = draw_schedule(B, cfg.capacity_ratio_train, rng)
        slots = list(schedule.indices)
        free = [i for i in range(B) if i not in schedule.indices]
        covers = self._batch(self.step, 7, B)
        cover_dist = self.codec.encode(covers)
        zc = reparameterize(cover_dist, gen)
        tx = zc
        if slots:
            secrets = self._batch(self.step, 11, schedule.M)
            secret_dist = self.codec.encode(secrets)
            zs = reparameterize(secret_dist, gen)
            pair_dist = LatentDistribution(cover_dist.mean[slots], cover_dist.log_var[slots])
            fused, fused_dist = self.hider.hide_fused_distribution(pair_dist, zs, cover_sample=zc[slots])
            tx = zc.clone()
            tx[slots] = fused
        rx = channel_pass(tx, self._snr(rng, B), gen)
        cover_hat = self.codec.decode(rx, T)
        secret_hat = self.codec.decode(self.extractor(rx), T)

        total = cover_hat.new_zeros(())
        if slots:
            out = ModelOutputs(covers[slots], cover_hat[slots], pair_dist, secret_hat[slots],
                               secrets, secret_dist, fused_dist)
            terms = loss_terms(SampleKind.PAIR, out, self.perceptual)
            part = combine(terms, self.weights)
            self._check_finite({**terms, "total": part}, SampleKind.PAIR.value)
            self._log(SampleKind.PAIR.value, terms, part)
            total = total + part * len(slots) / B
        if free:
            out = ModelOutputs(covers[free], cover_hat[free],
                               LatentDistribution(cover_dist.mean[free], cover_dist.log_var[free]), secret_hat[free])
            terms = loss_terms(SampleKind.SECRET_FREE, out, self.perceptual)
            part = combine(terms, self.weights)
            self._check_finite({**terms, "total": part}, SampleKind.SECRET_FREE.value)
            self._log(SampleKind.SECRET_FREE.value, terms, part)
            total = total + part * len(free) / B
        return total

    def train_step(self):
        cfg = self.config
        pretraining = self.step < cfg.pretrain_steps
        self._set_codec_lr(cfg.lr_pretrain if pretraining else cfg.lr_codec)
        for m in (self.codec, self.hider, self.extractor):
            m.train()
        self.optimizer.zero_grad(set_to_none=True)
        loss = self.pretrain_step() if pretraining else self.joint_step()
        loss.backward()
        params = [p for g in self.optimizer.param_groups for p in g["params"] if p.grad is not None]
        if cfg.grad_clip and params:
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        self.optimizer.step()
        self.step += 1
        return float(loss.detach())

    def run(self, n_steps: int | None = None) -> Checkpoint:
        cfg = self.config
        target = cfg.total_steps if n_steps is None else self.step + n_steps
        t0 = time.time()
        while self.step < target:
            loss = self.train_step()
            if self.step % 50 == 0 or self.step == target:
                logger.info("step %d/%d loss %.5f (%.2fs/step)", self.step, target, loss,
                            (time.time() - t0) / max(1, self.step))
            if cfg.eval_every and self.probe is not None and (self.step % cfg.eval_every == 0 or self.step == target):
                row = {"step": self.step, **evaluate(self.codec, self.hider, self.extractor, *self.probe,
                                                     snr_db=cfg.eval_snr_db, T=cfg.chunk_frames, seed=cfg.seed)}
                self.eval_rows.append(row)
                logger.info("eval %s", {k: round(v, 3) for k, v in row.items()})
            if cfg.checkpoint_every and self.out_dir and self.step % cfg.checkpoint_every == 0:
                self.save(self.out_dir)
        return self.checkpoint()

    # ------------------------------------------------------------------ output

    def write_loss_log(self, path, append=False):
        path = Path(path)
        new = not (append and path.exists())
        with path.open("w" if new else "a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                fh.write(f"# seed={self.config.seed} version={__version__}\n")
                w.writerow(["step", "term", "value", "sample_kind"])
            for step, term, value, kind in self.loss_rows:
                w.writerow([step, term, repr(value), kind])

    def save(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = self.checkpoint().save(out_dir / "checkpoint.pt")
        self.write_loss_log(out_dir / "loss_log.csv")
        if self.eval_rows:
            with (out_dir / "eval_log.csv").open("w", newline="") as fh:
                fh.write(f"# seed={self.config.seed} version={__version__}\n")
                w = csv.DictWriter(fh, fieldnames=list(self.eval_rows[0]))
                w.writeheader()
                w.writerows(self.eval_rows)
        return path


@torch.no_grad()
def evaluate(codec, hider, extractor, covers, secrets, snr_db=25.0, T=5, seed=0) -> dict:
    """Probe metrics at one SNR with fixed channel noise.

    Runs the same covers twice: once with no hiding and once with every chunk
    carrying a secret.
    """
    for m in (codec, hider, extractor):
        m.eval()
    covers, secrets = _as_dataset(covers), _as_dataset(secrets)
    n = covers.shape[0]
    secrets = secrets[:n]
    gen = torch.Generator().manual_seed(seed + 10_007)
    plain = send(codec, hider, covers, None, HidingSchedule(N=n))
    rx_plain = channel_pass(plain.latents, snr_db, gen)
    full = send(codec, hider, covers, secrets, HidingSchedule(N=n, indices=tuple(range(n))))
    gen = torch.Generator().manual_seed(seed + 10_007)
    rx_full = channel_pass(full.latents, snr_db, gen)

    out_plain = authorized_receive(codec, extractor, rx_plain, T)
    out_full = authorized_receive(codec, extractor, rx_full, T)
    mean_psnr = lambda a, b: float(np.mean([psnr(x, y) for x, y in zip(a, b)]))  # noqa: E731
    return {
        "cover_psnr_plain": mean_psnr(out_plain.cover, covers),
        "cover_psnr_hidden": mean_psnr(out_full.cover, covers),
        "secret_psnr": mean_psnr(out_full.secret, secrets),
        "null_mean_abs": float(out_plain.secret.abs().mean()),
        "null_mse_to_zero": float((out_plain.secret**2).mean()),
        "secret_mse_to_zero": float((out_full.secret**2).mean()),
    }


def train(config: TrainConfig, dataset, weights: LossWeights | None = None, out_dir=None, probe=None) -> Checkpoint:
    trainer = Trainer(config, dataset, weights, out_dir=out_dir, probe=probe)
    ckpt = trainer.run()
    if out_dir:
        trainer.save(out_dir)
    return ckpt


def resume(checkpoint: Checkpoint, extra_steps: int, dataset, weights: LossWeights | None = None,
           out_dir=None, probe=None) -> Checkpoint:
    """Continue ``checkpoint`` for ``extra_steps`` more optimiser steps."""
    if extra_steps < 0:
        raise ConfigError("extra_steps must be >= 0")
    if extra_steps == 0:
        return checkpoint.copy()
    config = TrainConfig.from_dict(checkpoint.meta["config"])
    if weights is None and "loss_weights" in checkpoint.meta:
        weights = LossWeights(**checkpoint.meta["loss_weights"])
    trainer = Trainer(config, dataset, weights, checkpoint=checkpoint, out_dir=out_dir, probe=probe)
    ckpt = trainer.run(extra_steps)
    ckpt.meta["config"]["steps"] = max(config.steps, trainer.step - config.pretrain_steps)
    if out_dir:
        trainer.write_loss_log(Path(out_dir) / "loss_log.csv", append=True)
        ckpt.save(Path(out_dir) / "checkpoint.pt")
    return ckpt


def run_manifest(config: TrainConfig, final_metrics: dict | None = None, extra: dict | None = None) -> dict:
    import hashlib

    code_hash = hashlib.sha256(f"semhide-{__version__}".encode()).hexdigest()[:16]
    return {"config": config.to_dict(), "version": __version__, "code_hash": code_hash,
            "final_metrics": final_metrics or {}, **(extra or {})}


def write_manifest(path, manifest: dict):
    Path(path).write_text(json.dumps(manifest, indent=2, default=float))
