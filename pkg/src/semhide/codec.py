"""Small variational video autoencoder with a fixed latent shape contract.

A chunk ``(3, T, H, W)`` with ``T = 4k + 1`` maps to a Gaussian latent of shape
``(16, k + 1, H / 8, W / 8)``. The encoder uses three spatial stride-2 stages
and two causal temporal stride-2 stages; the decoder mirrors it with
nearest-neighbour upsampling and trims the time axis back to ``T``.

All modules accept batched input ``(B, C, T, H, W)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeError

LATENT_CHANNELS = 16
LOGVAR_MIN = -30.0
LOGVAR_MAX = 20.0


def latent_frames(T: int) -> int:
    if T < 1 or (T - 1) % 4:
        raise ShapeError(f"chunk length {T} must satisfy T = 1 mod 4")
    return (T - 1) // 4 + 1


def latent_shape(T: int, H: int, W: int) -> tuple[int, int, int, int]:
    if H % 8 or W % 8:
        raise ShapeError(f"frame size {H}x{W} not divisible by 8")
    return (LATENT_CHANNELS, latent_frames(T), H // 8, W // 8)


@dataclass
class LatentDistribution:
    """Diagonal Gaussian over latents; ``log_var`` is clamped on construction."""

    mean: torch.Tensor
    log_var: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_var.shape:
            raise ShapeError(f"mean {tuple(self.mean.shape)} vs log_var {tuple(self.log_var.shape)}")
        self.log_var = self.log_var.clamp(LOGVAR_MIN, LOGVAR_MAX)

    @property
    def var(self) -> torch.Tensor:
        return self.log_var.exp()

    @property
    def shape(self):
        return self.mean.shape


def reparameterize(dist: LatentDistribution, generator: torch.Generator | None = None) -> torch.Tensor:
    """``mean + exp(log_var / 2) * eps`` with ``eps ~ N(0, I)`` drawn from ``generator``."""
    eps = torch.randn(dist.mean.shape, generator=generator, dtype=dist.mean.dtype, device=dist.mean.device)
    return dist.mean + torch.exp(0.5 * dist.log_var) * eps


class SpatialConv(nn.Module):
    """Per-frame 2-D convolution over a 5-D tensor."""

    def __init__(self, cin, cout, kernel=3, stride=1):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2)

    def forward(self, x):
        b, c, t, h, w = x.shape
        y = self.conv(x.transpose(1, 2).reshape(b * t, c, h, w))
        return y.reshape(b, t, *y.shape[1:]).transpose(1, 2)


class CausalTemporalConv(nn.Module):
    """Kernel-3 convolution along time with two frames of front padding.

    With ``stride=2`` this maps ``2m + 1`` frames to ``m + 1``.
    """

    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv = nn.Conv3d(cin, cout, (3, 1, 1), stride=(stride, 1, 1))

    def forward(self, x):
        x = torch.cat([x[:, :, :1]] * 2 + [x], dim=2)  # replicate first frame
        return self.conv(x)


def _upsample_space(x):
    b, c, t, h, w = x.shape
    return F.interpolate(x, size=(t, 2 * h, 2 * w), mode="nearest")


def _upsample_time(x):
    # m + 1 frames -> 2m + 1 frames (repeat, drop the leading duplicate)
    return x.repeat_interleave(2, dim=2)[:, :, 1:]


class ResBlock(nn.Module):
    """Two per-frame 3x3 convolutions with a skip."""

    def __init__(self, c):
        super().__init__()
        self.a = SpatialConv(c, c)
        self.b = SpatialConv(c, c)

    def forward(self, x):
        return x + self.b(F.silu(self.a(F.silu(x))))


class Encoder(nn.Module):
    def __init__(self, widths=(32, 64, 96), res_blocks=0):
        super().__init__()
        c1, c2, c3 = widths
        self.stem = SpatialConv(3, c1)
        self.down1 = SpatialConv(c1, c1, stride=2)
        self.tdown1 = CausalTemporalConv(c1, c2, stride=2)
        self.down2 = SpatialConv(c2, c2, stride=2)
        self.tdown2 = CausalTemporalConv(c2, c3, stride=2)
        self.down3 = SpatialConv(c3, c3, stride=2)
        self.mix = SpatialConv(c3, c3)
        self.mid = nn.Sequential(*[ResBlock(c2) for _ in range(res_blocks)])
        self.low = nn.Sequential(*[ResBlock(c3) for _ in range(res_blocks)])
        self.head = nn.Conv3d(c3, 2 * LATENT_CHANNELS, 1)

    def forward(self, x):
        x = F.silu(self.stem(x * 2.0 - 1.0))
        x = F.silu(self.down1(x))
        x = F.silu(self.tdown1(x))
        x = self.mid(F.silu(self.down2(x)))
        x = F.silu(self.tdown2(x))
        x = F.silu(self.down3(x))
        x = self.low(x + F.silu(self.mix(x)))
        return self.head(x)


class Decoder(nn.Module):
    def __init__(self, widths=(32, 64, 96), res_blocks=0):
        super().__init__()
        c1, c2, c3 = widths
        self.stem = nn.Conv3d(LATENT_CHANNELS, c3, 1)
        self.mix = SpatialConv(c3, c3)
        self.up3 = SpatialConv(c3, c3)
        self.tup2 = CausalTemporalConv(c3, c2)
        self.up2 = SpatialConv(c2, c2)
        self.low = nn.Sequential(*[ResBlock(c3) for _ in range(res_blocks)])
        self.mid = nn.Sequential(*[ResBlock(c2) for _ in range(res_blocks)])
        self.tup1 = CausalTemporalConv(c2, c1)
        self.up1 = SpatialConv(c1, c1)
        self.out = SpatialConv(c1, 3)

    def forward(self, z):
        x = F.silu(self.stem(z))
        x = self.low(x + F.silu(self.mix(x)))
        x = F.silu(self.up3(_upsample_space(x)))
        x = F.silu(self.tup2(_upsample_time(x)))
        x = self.mid(F.silu(self.up2(_upsample_space(x))))
        x = F.silu(self.tup1(_upsample_time(x)))
        x = F.silu(self.up1(_upsample_space(x)))
        return torch.sigmoid(self.out(x))


class VideoCodec(nn.Module):
    """Encoder/decoder pair. Any backbone honouring ``latent_shape`` can replace it."""

    def __init__(self, widths=(32, 64, 96), res_blocks=0):
        super().__init__()
        self.widths = tuple(widths)
        self.res_blocks = res_blocks
        self.encoder = Encoder(widths, res_blocks)
        self.decoder = Decoder(widths, res_blocks)
        # default init shrinks activations ~10x over the stack; fan-in scaling keeps them O(1)
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Conv3d)):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                nn.init.zeros_(m.bias)

    def encode(self, chunk: torch.Tensor) -> LatentDistribution:
        """``(B, 3, T, H, W)`` or ``(3, T, H, W)`` -> latent distribution."""
        single = chunk.dim() == 4
        if single:
            chunk = chunk.unsqueeze(0)
        if chunk.dim() != 5 or chunk.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, T, H, W), got {tuple(chunk.shape)}")
        _, _, t, h, w = chunk.shape
        latent_shape(t, h, w)
        stats = self.encoder(chunk)
        mean, log_var = stats.chunk(2, dim=1)
        if single:
            mean, log_var = mean[0], log_var[0]
        return LatentDistribution(mean, log_var)

    def decode(self, sample: torch.Tensor, T: int) -> torch.Tensor:
        single = sample.dim() == 4
        if single:
            sample = sample.unsqueeze(0)
        if sample.dim() != 5 or sample.shape[1] != LATENT_CHANNELS:
            raise ShapeError(f"expected (B, 16, T', H', W'), got {tuple(sample.shape)}")
        if sample.shape[2] != latent_frames(T):
            raise ShapeError(f"latent has {sample.shape[2]} frames but T={T} needs {latent_frames(T)}")
        out = self.decoder(sample)
        assert out.shape[2] == T
        return out[0] if single else out

    def forward(self, chunk, generator=None):
        dist = self.encode(chunk)
        return self.decode(reparameterize(dist, generator), chunk.shape[-3]), dist
