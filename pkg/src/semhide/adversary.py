"""Eavesdropper models: a secret-presence detector and FGSM/PGD attacks.

The detector taps the wire, i.e. it sees the power-normalised received
signal reshaped to latent layout. Training labels are per session: every
chunk of a session that used hiding is labelled positive even when the
schedule left it clean, which is where label noise comes from.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import kernels
from .channel import noise_variance, power_normalize_batch
from .errors import ConfigError
from .losses import charbonnier
from .metrics import fvd_lite, psnr, ssim
from .pipeline import send
from .scheduler import HidingSchedule, check_ratio, draw_schedule


# --------------------------------------------------------------------------
# dataset


@dataclass
class DetectorDataset:
    x: torch.Tensor  # (n, 16, T', H', W') observed signals
    labels: np.ndarray  # session-level labels (what the eavesdropper trains on)
    truth: np.ndarray  # whether the chunk really carries a secret (sender log)
    session: np.ndarray

    def __len__(self):
        return int(self.labels.shape[0])

    def subset(self, idx) -> "DetectorDataset":
        idx = np.asarray(idx)
        return DetectorDataset(self.x[torch.from_numpy(idx)], self.labels[idx], self.truth[idx], self.session[idx])

    def label_noise_rate(self) -> float:
        pos = self.labels == 1
        return float(np.mean(~self.truth[pos])) if pos.any() else math.nan


@torch.no_grad()
def observe(codec, hider, covers, secrets, schedule, snr_db, generator) -> torch.Tensor:
    """What a wire tap sees for one session: normalised signal plus AWGN."""
    tx = send(codec, hider, covers, secrets, schedule).latents
    signal, _ = power_normalize_batch(tx)
    if snr_db != math.inf:
        signal = signal + math.sqrt(noise_variance(snr_db)) * torch.randn(signal.shape, generator=generator)
    return signal.reshape(tx.shape)


def build_detector_dataset(codec, hider, r, snr_db, size, pool, session_len=5, seed=0) -> DetectorDataset:
    """``size`` chunks: half from hiding sessions at ratio ``r``, half from clean sessions."""
    if r is None:
        raise ConfigError("capacity ratio r is undefined")
    r = check_ratio(r)
    if size <= 0:
        raise ConfigError("detector dataset size must be > 0")
    pool = pool if isinstance(pool, torch.Tensor) else torch.from_numpy(np.asarray(pool, dtype=np.float32))
    codec.eval()
    hider.eval()
    rng = np.random.default_rng([seed, 31])
    gen = torch.Generator().manual_seed(seed + 31)
    xs, labels, truth, sess = [], [], [], []
    n_sessions = max(2, math.ceil(size / session_len))
    for s in range(n_sessions):
        positive = s % 2 == 0
        covers = pool[rng.choice(len(pool), session_len, replace=False)]
        if positive:
            schedule = draw_schedule(session_len, r, rng)
            secrets = pool[rng.choice(len(pool), max(schedule.M, 1), replace=False)]
        else:
            schedule, secrets = HidingSchedule(N=session_len), None
        xs.append(observe(codec, hider, covers, secrets, schedule, snr_db, gen))
        labels += [int(positive)] * session_len
        truth += [i in schedule.indices for i in range(session_len)]
        sess += [s] * session_len
    x = torch.cat(xs)[:size]
    return DetectorDataset(x, np.array(labels[:size]), np.array(truth[:size]), np.array(sess[:size]))


# --------------------------------------------------------------------------
# detector


@dataclass
class DetectorConfig:
    widths: tuple = (24, 32, 40, 48)
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    train_snr_db: float = 30.0
    capacity_ratio_of_traffic: float = 1.0


class DetectorNet(nn.Module):
    """Four 3-D conv stages, global average pool, linear logit."""

    def __init__(self, cin=16, widths=(24, 32, 40, 48)):
        super().__init__()
        layers = []
        strides = [(1, 1, 1), (1, 2, 2), (1, 1, 1), (1, 2, 2)]
        for w, s in zip(widths, strides):
            layers += [nn.Conv3d(cin, w, 3, stride=s, padding=1), nn.GELU()]
            cin = w
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(cin, 1)

    def forward(self, x):
        return self.head(self.features(x).mean(dim=(2, 3, 4))).squeeze(-1)


class Detector:
    def __init__(self, net: DetectorNet):
        self.net = net.eval()

    @torch.no_grad()
    def score(self, x) -> np.ndarray:
        x = x.x if isinstance(x, DetectorDataset) else x
        out = [torch.sigmoid(self.net(b)) for b in torch.split(x, 256)]
        return torch.cat(out).double().numpy()

    __call__ = score


def stratified_shuffle(labels, strata, rng) -> np.ndarray:
    """Permute ``labels`` so every stratum gets the same share of ones.

    A plain permutation leaves a chance imbalance between strata; on
    separable data the detector picks that up and the control AUC drifts
    from 0.5. Equal shares make the labels exactly independent of ``strata``.
    """
    labels, strata = np.asarray(labels), np.asarray(strata)
    k, n = int(labels.sum()), labels.size
    out = np.zeros_like(labels)
    groups = np.unique(strata)
    quota = np.floor(k * np.array([np.sum(strata == g) for g in groups]) / n).astype(int)
    quota[: k - quota.sum()] += 1
    for g, q in zip(groups, quota):
        idx = np.flatnonzero(strata == g)
        out[rng.choice(idx, size=q, replace=False)] = 1
    return out


def train_detector(dataset: DetectorDataset, config: DetectorConfig = DetectorConfig(), shuffle_labels=False) -> Detector:
    labels = np.asarray(dataset.labels)
    if np.unique(labels).size < 2:
        raise ConfigError("detector training needs both classes")
    rng = np.random.default_rng([config.seed, 5])
    if shuffle_labels:
        labels = stratified_shuffle(labels, labels, rng)
    torch.manual_seed(config.seed)
    net = DetectorNet(dataset.x.shape[1], config.widths)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    y = torch.from_numpy(labels.astype(np.float32))
    n = len(dataset)
    net.train()
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for i in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[i : i + config.batch_size])
            loss = F.binary_cross_entropy_with_logits(net(dataset.x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return Detector(net)


# --------------------------------------------------------------------------
# ROC


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def to_csv(self, path, comment: str | None = None):
        with Path(path).open("w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["threshold", "fpr", "tpr"])
            for t, f, p in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])


def roc_curve(scores, labels) -> RocCurve:
    """Exact ROC by sweeping every distinct score; AUC by the trapezoid rule."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ConfigError("scores and labels differ in length")
    if labels.all() or not labels.any():
        raise ConfigError("ROC needs both classes")
    fpr, tpr, thr = kernels.roc_sweep(scores, labels)
    return RocCurve(thr, fpr, tpr, float(kernels.trapezoid(tpr, fpr)))


def roc(detector, dataset: DetectorDataset, ground_truth=False) -> RocCurve:
    labels = dataset.truth if ground_truth else dataset.labels
    return roc_curve(detector.score(dataset), labels)


# --------------------------------------------------------------------------
# attacks


@dataclass
class AttackConfig:
    method: str = "fgsm"
    epsilon: float = 0.01
    steps: int = 10
    step_size: float | None = None
    cover_penalty_beta: float = 1.0

    def __post_init__(self):
        if self.method not in ("fgsm", "pgd"):
            raise ConfigError(f"unknown attack method {self.method!r}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")
        if self.method == "pgd" and self.steps < 1:
            raise ConfigError("pgd needs steps >= 1")
        if self.step_size is None:
            self.step_size = 2.5 * self.epsilon / max(1, self.steps)


class _Surface:
    """Recovery as a function of the channel-input signal, with frozen noise."""

    def __init__(self, codec, extractor, covers, secrets, scale, noise, latent_shape):
        self.codec, self.extractor = codec, extractor
        self.covers, self.secrets = covers, secrets
        self.scale, self.noise = scale, noise
        self.shape, self.T = latent_shape, covers.shape[2]

    def recover(self, signal):
        rx = ((signal + self.noise) * self.scale[:, None]).reshape(self.shape)
        return self.codec.decode(rx, self.T), self.codec.decode(self.extractor(rx), self.T)

    def objective(self, signal, beta):
        cover_hat, secret_hat = self.recover(signal)
        return charbonnier(secret_hat, self.secrets) - beta * charbonnier(cover_hat, self.covers)

    def grad(self, signal, beta):
        s = signal.detach().requires_grad_(True)
        (g,) = torch.autograd.grad(self.objective(s, beta), s)
        return g


def fgsm(surface: _Surface, x, epsilon, beta):
    g = surface.grad(x, beta)
    return torch.minimum(torch.maximum(x + epsilon * g.sign(), x - epsilon), x + epsilon)


def pgd(surface: _Surface, x, epsilon, steps, step_size, beta, trace=None):
    adv = x
    for _ in range(steps):
        g = surface.grad(adv, beta)
        adv = torch.minimum(torch.maximum(adv + step_size * g.sign(), x - epsilon), x + epsilon)
        if trace is not None:
            trace.append(float((adv - x).abs().max()))
    return adv


def _quality(recon, ref):
    return (
        float(np.mean([psnr(a, b) for a, b in zip(recon, ref)])),
        float(np.mean([ssim(a, b) for a, b in zip(recon, ref)])),
        fvd_lite(recon, ref) if recon.shape[0] >= 2 else math.nan,
    )


def attack(config: AttackConfig, codec, extractor, hider, covers, secrets, snr_db, seed=0, return_signals=False):
    """Perturb the channel input of fully hidden chunks and report metric deltas.

    Deltas are ``clean - attacked`` for PSNR/SSIM and ``attacked - clean`` for
    FVD-lite, so positive numbers mean the attack hurt.
    """
    for m in (codec, extractor, hider):
        m.eval()
        m.requires_grad_(False)
    try:
        covers = torch.as_tensor(np.asarray(covers, dtype=np.float32)) if not isinstance(covers, torch.Tensor) else covers
        secrets = torch.as_tensor(np.asarray(secrets, dtype=np.float32)) if not isinstance(secrets, torch.Tensor) else secrets
        n = covers.shape[0]
        with torch.no_grad():
            tx = send(codec, hider, covers, secrets[:n], HidingSchedule(N=n, indices=tuple(range(n)))).latents
            x, scale = power_normalize_batch(tx)
            gen = torch.Generator().manual_seed(seed + 77)
            sigma = 0.0 if snr_db == math.inf else math.sqrt(noise_variance(snr_db))
            noise = sigma * torch.randn(x.shape, generator=gen)
        surface = _Surface(codec, extractor, covers, secrets[:n], scale, noise, tx.shape)
        beta = config.cover_penalty_beta
        if config.method == "fgsm":
            adv = fgsm(surface, x, config.epsilon, beta)
        else:
            adv = pgd(surface, x, config.epsilon, config.steps, config.step_size, beta)
        with torch.no_grad():
            clean_c, clean_s = surface.recover(x)
            adv_c, adv_s = surface.recover(adv)
        qc0, qc1 = _quality(clean_c, covers), _quality(adv_c, covers)
        qs0, qs1 = _quality(clean_s, secrets[:n]), _quality(adv_s, secrets[:n])
        rows = [
            {"video": "cover", "method": config.method, "d_psnr": qc0[0] - qc1[0], "d_ssim": qc0[1] - qc1[1], "d_fvd": qc1[2] - qc0[2]},
            {"video": "secret", "method": config.method, "d_psnr": qs0[0] - qs1[0], "d_ssim": qs0[1] - qs1[1], "d_fvd": qs1[2] - qs0[2]},
        ]
        if return_signals:
            return rows, x, adv
        return rows
    finally:
        for m in (codec, extractor, hider):
            m.requires_grad_(True)


def write_attack_table(rows, path, comment=None):
    with Path(path).open("w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.DictWriter(fh, fieldnames=["video", "method", "d_psnr", "d_ssim", "d_fvd"])
        w.writeheader()
        for r in sorted(rows, key=lambda r: (r["video"] != "cover", r["method"])):
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})


def auc_summary(curve: RocCurve, r, snr_db, **extra) -> str:
    return json.dumps({"auc": curve.auc, "r": r, "snr_db": snr_db, **extra}, indent=2)
