"""Reconstruction and latent-similarity metrics.

Videos may be numpy arrays or torch tensors shaped ``(3, T, H, W)`` or
``(B, 3, T, H, W)``; everything is evaluated in float64.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import kernels
from .errors import ConfigError, ShapeError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
FVD_SEED = 42
FVD_DIM = 64


def _np(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def _pair(x, y):
    x, y = _np(x), _np(y)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    return x, y


def mse(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.mean((x - y) ** 2))


def psnr(x, y, peak: float = 1.0, cap: float = PSNR_CAP) -> float:
    err = mse(x, y)
    if err == 0.0:
        return cap
    return float(min(cap, 10.0 * math.log10(peak**2 / err)))


def _as_frames(x: np.ndarray) -> np.ndarray:
    if x.ndim == 2:
        return x[None]
    return np.ascontiguousarray(x.reshape(-1, *x.shape[-2:]))


def ssim(x, y, window: int = SSIM_WINDOW, c1: float = SSIM_C1, c2: float = SSIM_C2, sigma: float = SSIM_SIGMA) -> float:
    """Mean SSIM over Gaussian windows, averaged over every 2-D frame (all channels and times)."""
    x, y = _pair(x, y)
    fx, fy = _as_frames(x), _as_frames(y)
    if fx.shape[-1] < window or fx.shape[-2] < window:
        raise ShapeError(f"frame {fx.shape[-2:]} smaller than {window}x{window} window")
    taps = kernels.gaussian_window(window, sigma)
    return float(np.mean(kernels.ssim_frames(fx, fy, taps, c1, c2)))


def cosine_similarity(a, b) -> float:
    a, b = _pair(a, b)
    a, b = a.ravel(), b.ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ConfigError("cosine similarity undefined for a zero vector")
    return float(a @ b / (na * nb))


def wasserstein_1d(a, b) -> float:
    """Exact W1 between the empirical distributions of the flattened values."""
    a, b = _np(a).ravel(), _np(b).ravel()
    if a.size != b.size:
        raise ShapeError(f"element counts differ: {a.size} vs {b.size}")
    if a.size == 0:
        raise ShapeError("empty input")
    return float(kernels.w1_sorted(a, b))


# --------------------------------------------------------------------------
# FVD-lite


class FeatureNet3D(nn.Module):
    """Seeded, untrained 3-D conv net mapping ``(B, 3, T, H, W)`` to ``(B, 64)``."""

    def __init__(self, seed: int = FVD_SEED, dim: int = FVD_DIM):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        spec = [(3, 16, (1, 2, 2)), (16, 32, (2, 2, 2)), (32, 64, (1, 2, 2)), (64, dim, (1, 2, 2))]
        self.convs = nn.ModuleList()
        for cin, cout, stride in spec:
            conv = nn.Conv3d(cin, cout, 3, stride=stride, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / (cin * 27)) ** 0.5)
                conv.bias.zero_()
            self.convs.append(conv)
        self.seed = seed
        self.dim = dim
        self.requires_grad_(False)
        self.eval()

    @torch.no_grad()
    def forward(self, video):
        x = video * 2.0 - 1.0
        for conv in self.convs:
            x = torch.relu(conv(x))
        return x.mean(dim=(2, 3, 4))


_default_net: FeatureNet3D | None = None


def default_feature_net() -> FeatureNet3D:
    global _default_net
    if _default_net is None:
        _default_net = FeatureNet3D()
    return _default_net


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(feats_a, feats_b) -> float:
    """Frechet distance between Gaussian fits of two feature sets ``(n, d)``.

    The trace of the cross term uses ``sqrt(A)^{1/2} B sqrt(A)^{1/2}``, which is
    symmetric PSD and shares the nonzero spectrum of ``A B``.
    """
    fa, fb = _np(feats_a), _np(feats_b)
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise ShapeError("need at least 2 samples per set to estimate a covariance")
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    sa = np.atleast_2d(np.cov(fa, rowvar=False))
    sb = np.atleast_2d(np.cov(fb, rowvar=False))
    root_a = _sqrtm_psd(sa)
    cross = np.linalg.eigvalsh(root_a @ sb @ root_a)
    tr_cross = np.sqrt(np.clip(cross, 0.0, None)).sum()
    return float(np.sum((mu_a - mu_b) ** 2) + np.trace(sa) + np.trace(sb) - 2.0 * tr_cross)


def _video_batch(videos) -> torch.Tensor:
    if isinstance(videos, torch.Tensor):
        v = videos
    else:
        v = torch.from_numpy(np.stack([np.asarray(x, dtype=np.float32) for x in videos]))
    if v.dim() == 4:
        v = v.unsqueeze(0)
    return v.float()


def video_features(videos, net: nn.Module | None = None) -> np.ndarray:
    net = net or default_feature_net()
    return net(_video_batch(videos)).double().numpy()


def fvd_lite(set_a, set_b, feature_net: nn.Module | None = None) -> float:
    return frechet_distance(video_features(set_a, feature_net), video_features(set_b, feature_net))


# --------------------------------------------------------------------------
# reports


def json_safe(obj):
    """Replace non-finite floats with None, recursively; strict JSON has no NaN."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    return obj


@dataclass
class MetricReport:
    cover_psnr: float = math.nan
    cover_ssim: float = math.nan
    cover_mse: float = math.nan
    cover_fvd_lite: float = math.nan
    secret_psnr: float = math.nan
    secret_ssim: float = math.nan
    secret_mse: float = math.nan
    secret_fvd_lite: float = math.nan
    latent_mse: float = math.nan
    latent_cosine: float = math.nan
    latent_wasserstein: float = math.nan

    def provenance(self) -> dict:
        return {
            "psnr_cap_db": PSNR_CAP,
            "ssim_window": SSIM_WINDOW,
            "ssim_sigma": SSIM_SIGMA,
            "fvd_feature_seed": FVD_SEED,
            "fvd_feature_dim": FVD_DIM,
            "kernel_backend": kernels.BACKEND,
        }

    def to_json(self) -> str:
        return json.dumps(json_safe({"metrics": asdict(self), "provenance": self.provenance()}), indent=2)

    def to_csv(self, path=None, comment: str | None = None) -> str:
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf)
        names = [f.name for f in fields(self)]
        w.writerow(names)
        w.writerow([f"{getattr(self, n):.6f}" for n in names])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, text_or_path) -> "MetricReport":
        text = text_or_path
        if isinstance(text_or_path, Path) or (isinstance(text_or_path, str) and "\n" not in text_or_path):
            text = Path(text_or_path).read_text()
        rows = [r for r in csv.reader(line for line in text.splitlines() if not line.startswith("#"))]
        return cls(**{k: float(v) for k, v in zip(rows[0], rows[1])})


def _mean_over(pairs, fn):
    return float(np.mean([fn(a, b) for a, b in pairs]))


def _stream_metrics(pairs, prefix, feature_net):
    pairs = list(pairs)
    out = {
        f"{prefix}_psnr": _mean_over(pairs, psnr),
        f"{prefix}_ssim": _mean_over(pairs, ssim),
        f"{prefix}_mse": _mean_over(pairs, mse),
    }
    if len(pairs) >= 2:
        out[f"{prefix}_fvd_lite"] = fvd_lite([p[0] for p in pairs], [p[1] for p in pairs], feature_net)
    return out


def report(cover_pairs, secret_pairs=None, latent_pairs=None, feature_net=None) -> MetricReport:
    """Aggregate metrics over aligned ``(reconstruction, reference)`` pairs.

    Pixel metrics are averaged per pair; FVD-lite compares the two sets.
    Latent pairs are ``(transmitted, clean_cover)`` latents.
    """
    cover_pairs = list(cover_pairs or [])
    if not cover_pairs:
        raise ConfigError("report needs at least one cover pair")
    vals = _stream_metrics(cover_pairs, "cover", feature_net)
    if secret_pairs:
        vals.update(_stream_metrics(secret_pairs, "secret", feature_net))
    if latent_pairs:
        latent_pairs = list(latent_pairs)
        vals["latent_mse"] = _mean_over(latent_pairs, mse)
        vals["latent_cosine"] = _mean_over(latent_pairs, cosine_similarity)
        vals["latent_wasserstein"] = _mean_over(latent_pairs, wasserstein_1d)
    return MetricReport(**vals)
