"""Power normalisation and a real-valued AWGN channel.

Signals are torch tensors so gradients flow through the channel during
training; numpy inputs are accepted and converted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ChannelError, ShapeError


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float = 25.0
    seed: int = 0

    def __post_init__(self):
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ChannelError(f"invalid snr_db {self.snr_db}")


def noise_variance(snr_db: float) -> float:
    """Noise power for a unit-power signal."""
    if snr_db == math.inf:
        return 0.0
    return 10.0 ** (-snr_db / 10.0)


def _as_tensor(x):
    return torch.as_tensor(x) if not isinstance(x, torch.Tensor) else x


def power_normalize(latent):
    """Flatten and scale to unit mean power; returns ``(signal, scale)``.

    ``scale = sqrt(mean(latent**2))`` and is kept as side information.
    """
    z = _as_tensor(latent).reshape(-1)
    power = z.pow(2).mean()
    if float(power) == 0.0:
        raise ChannelError("cannot normalise an all-zero latent")
    scale = power.sqrt()
    return z / scale, scale


def power_normalize_batch(latents: torch.Tensor):
    """Per-sample normalisation of a (B, ...) batch -> ((B, D) signals, (B,) scales)."""
    z = latents.reshape(latents.shape[0], -1)
    power = z.pow(2).mean(dim=1)
    if bool((power == 0).any()):
        raise ChannelError("cannot normalise an all-zero latent")
    scale = power.sqrt()
    return z / scale[:, None], scale


def awgn(signal: torch.Tensor, snr_db, generator: torch.Generator | None = None) -> torch.Tensor:
    """``y = x + n``, ``n ~ N(0, 10**(-snr/10))``. ``snr_db`` may be a per-row tensor.

    Infinite SNR returns the input object untouched.
    """
    if isinstance(snr_db, torch.Tensor):
        sigma = torch.pow(10.0, -snr_db.to(signal.dtype) / 20.0).reshape(-1, *([1] * (signal.dim() - 1)))
        sigma = torch.where(torch.isinf(snr_db).reshape(sigma.shape), torch.zeros_like(sigma), sigma)
    else:
        if snr_db == math.inf:
            return signal
        sigma = math.sqrt(noise_variance(snr_db))
    noise = torch.randn(signal.shape, generator=generator, dtype=signal.dtype, device=signal.device)
    return signal + sigma * noise


def transmit(signal, config: ChannelConfig):
    """Seeded AWGN transmission of one signal."""
    x = _as_tensor(signal)
    if config.snr_db == math.inf:
        return x
    gen = torch.Generator().manual_seed(int(config.seed))
    return awgn(x, config.snr_db, gen)


def denormalize(signal, scale, shape) -> torch.Tensor:
    """Undo :func:`power_normalize`: reshape to ``shape`` and multiply by ``scale``."""
    x = _as_tensor(signal)
    s = torch.as_tensor(scale, dtype=x.dtype)
    if bool((s <= 0).any()):
        raise ChannelError(f"scale must be positive, got {scale}")
    if x.numel() != math.prod(shape):
        raise ShapeError(f"{x.numel()} elements cannot be reshaped to {tuple(shape)}")
    return x.reshape(tuple(shape)) * s


def empirical_snr_db(clean, received) -> float:
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(received, dtype=np.float64) - clean
    return 10.0 * math.log10(np.mean(clean**2) / np.mean(noise**2))


def dump_trace(path, signal, **meta) -> None:
    """Write ``signal`` as raw float32 plus a JSON sidecar (``<path>.json``)."""
    path = Path(path)
    arr = np.asarray(_as_tensor(signal).detach().cpu(), dtype=np.float32)
    arr.tofile(path)
    sidecar = {"dtype": "float32", "count": int(arr.size), "shape": list(arr.shape), **meta}
    path.with_name(path.name + ".json").write_text(json.dumps(sidecar, indent=2, default=float))


def load_trace(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    arr = np.fromfile(path, dtype=np.float32).reshape(meta["shape"])
    return arr, meta
