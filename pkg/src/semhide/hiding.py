"""Latent hiding network and the mirrored secret extractor.

Both operate on latents shaped ``(B, 16, T', H', W')``. Each of the ``depth``
stages runs three parallel 2-D convolutions (kernels 3/5/7), RMS-normalises
each branch, sums them, then applies multi-head self-attention along the T'
axis independently at every spatial site. Stages are residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .codec import LATENT_CHANNELS, LOGVAR_MAX, LOGVAR_MIN, LatentDistribution, SpatialConv
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class HidingNetConfig:
    latent_dim: int = 96
    depth: int = 4
    spatial_kernels: tuple = (3, 5, 7)
    attention_heads: int = 8

    def validate(self):
        if any(k % 2 == 0 for k in self.spatial_kernels):
            raise ConfigError(f"kernels must be odd: {self.spatial_kernels}")
        if self.latent_dim % self.attention_heads:
            raise ConfigError("latent_dim must be divisible by attention_heads")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")


class ChannelRMSNorm(nn.Module):
    """RMSNorm over the channel axis of a (B, C, ...) tensor."""

    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.norm = nn.RMSNorm(channels, eps=eps)

    def forward(self, x):
        return self.norm(x.movedim(1, -1)).movedim(-1, 1)


class TemporalAttention(nn.Module):
    """Self-attention over T' with one token sequence per spatial site."""

    def __init__(self, dim, heads):
        super().__init__()
        self.norm = ChannelRMSNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)

    def forward(self, x):
        b, c, t, h, w = x.shape
        seq = self.norm(x).permute(0, 3, 4, 2, 1).reshape(b * h * w, t, c)
        out, _ = self.attn(seq, seq, seq, need_weights=False)
        return out.reshape(b, h, w, t, c).permute(0, 4, 3, 1, 2)


class HidingStage(nn.Module):
    def __init__(self, dim, kernels, heads):
        super().__init__()
        self.branches = nn.ModuleList(SpatialConv(dim, dim, k) for k in kernels)
        self.norms = nn.ModuleList(ChannelRMSNorm(dim) for _ in kernels)
        self.attn = TemporalAttention(dim, heads)

    def forward(self, x):
        y = sum(n(conv(x)) for conv, n in zip(self.branches, self.norms))
        x = x + F.silu(y)
        return x + self.attn(x)


class _Trunk(nn.Module):
    def __init__(self, cin, cfg: HidingNetConfig):
        super().__init__()
        cfg.validate()
        self.proj_in = nn.Conv3d(cin, cfg.latent_dim, 1)
        self.stages = nn.ModuleList(
            HidingStage(cfg.latent_dim, cfg.spatial_kernels, cfg.attention_heads) for _ in range(cfg.depth)
        )

    def forward(self, x):
        x = self.proj_in(x)
        for stage in self.stages:
            x = stage(x)
        return x


def _check_latent(z, name):
    if z.dim() != 5 or z.shape[1] != LATENT_CHANNELS:
        raise ShapeError(f"{name}: expected (B, 16, T', H', W'), got {tuple(z.shape)}")


def _batched(z):
    return (z.unsqueeze(0), True) if z.dim() == 4 else (z, False)


class SemanticHider(nn.Module):
    """Fuses a secret latent into a cover latent without changing its shape.

    The fused latent is ``cover + delta`` where ``delta`` is the channel
    projection of the trunk output. The same projection is the mean shift of
    the fused Gaussian; a second 1x1 head predicts its log-variance offset.
    """

    def __init__(self, cfg: HidingNetConfig = HidingNetConfig()):
        super().__init__()
        self.cfg = cfg
        self.trunk = _Trunk(2 * LATENT_CHANNELS, cfg)
        self.proj_out = nn.Conv3d(cfg.latent_dim, LATENT_CHANNELS, 1)
        self.logvar_head = nn.Conv3d(cfg.latent_dim, LATENT_CHANNELS, 1)
        nn.init.zeros_(self.logvar_head.weight)
        nn.init.zeros_(self.logvar_head.bias)

    def _delta(self, cover, secret):
        if cover.shape != secret.shape:
            raise ShapeError(f"cover {tuple(cover.shape)} and secret {tuple(secret.shape)} differ")
        _check_latent(cover, "cover")
        h = self.trunk(torch.cat([cover, secret], dim=1))
        return self.proj_out(h), h

    def forward(self, cover: torch.Tensor, secret: torch.Tensor) -> torch.Tensor:
        cover, single = _batched(cover)
        secret, _ = _batched(secret)
        delta, _ = self._delta(cover, secret)
        fused = cover + delta
        return fused[0] if single else fused

    hide = forward

    def hide_fused_distribution(self, cover_dist: LatentDistribution, secret: torch.Tensor, cover_sample=None):
        """Return ``(fused_sample, fused_distribution)``.

        ``cover_sample`` defaults to the cover mean.
        """
        cover = cover_dist.mean if cover_sample is None else cover_sample
        if cover_dist.mean.shape != cover.shape:
            raise ShapeError("cover sample and distribution shapes differ")
        cover, single = _batched(cover)
        secret, _ = _batched(secret)
        mu_c, lv_c = _batched(cover_dist.mean)[0], _batched(cover_dist.log_var)[0]
        delta, h = self._delta(cover, secret)
        lv_f = (lv_c + self.logvar_head(h)).clamp(LOGVAR_MIN, LOGVAR_MAX)
        fused = cover + delta
        dist = LatentDistribution(mu_c + delta, lv_f)
        if single:
            return fused[0], LatentDistribution(dist.mean[0], dist.log_var[0])
        return fused, dist


class SecretExtractor(nn.Module):
    """Recovers a secret latent (or a null placeholder) from a received latent."""

    def __init__(self, cfg: HidingNetConfig = HidingNetConfig()):
        super().__init__()
        self.cfg = cfg
        self.trunk = _Trunk(LATENT_CHANNELS, cfg)
        self.proj_out = nn.Conv3d(cfg.latent_dim, LATENT_CHANNELS, 1)

    def forward(self, received: torch.Tensor) -> torch.Tensor:
        received, single = _batched(received)
        _check_latent(received, "received")
        out = self.proj_out(self.trunk(received))
        return out[0] if single else out

    extract = forward


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
