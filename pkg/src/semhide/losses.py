"""Training objective: seven weighted terms and the per-sample-kind dispatch.

The two KL terms follow the printed forms literally, i.e. without the usual
factor 1/2. ``kl_standard`` is therefore twice the textbook Gaussian KL.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Callable, Optional

import torch
from torch import nn

from .codec import LatentDistribution
from .errors import ConfigError, ShapeError

CHARB_EPS = 1e-3
TERMS = ("cover", "secret", "perceptual", "kl_cover", "kl_secret", "embedding", "null")


class SampleKind(str, Enum):
    PAIR = "cover_secret_pair"
    SECRET_FREE = "secret_free"


@dataclass
class LossWeights:
    cover: float = 1.0
    secret: float = 1.0
    perceptual: float = 0.1
    kl_cover: float = 1e-6
    kl_secret: float = 1e-6
    embedding: float = 1e-2
    null: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ConfigError(f"loss weight {k} must be >= 0, got {v}")

    @classmethod
    def zeros(cls):
        return cls(**{k: 0.0 for k in TERMS})


def _same_shape(x, y):
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")


def charbonnier(x: torch.Tensor, y: torch.Tensor, epsilon: float = CHARB_EPS) -> torch.Tensor:
    _same_shape(x, y)
    if epsilon <= 0:
        raise ConfigError("epsilon must be > 0")
    return torch.sqrt((x - y) ** 2 + epsilon**2).mean()


def null_loss(pred_secret: torch.Tensor, epsilon: float = CHARB_EPS) -> torch.Tensor:
    return charbonnier(pred_secret, torch.zeros_like(pred_secret), epsilon)


def kl_standard(dist: LatentDistribution) -> torch.Tensor:
    """mean(mu^2 + sigma^2 - log sigma^2 - 1)."""
    return (dist.mean**2 + dist.log_var.exp() - dist.log_var - 1.0).mean()


def embedding_constraint(fused: LatentDistribution, cover: LatentDistribution) -> torch.Tensor:
    """mean(log(sf^2/sc^2) + (sc^2 + (mf - mc)^2) / sf^2 - 1)."""
    _same_shape(fused.mean, cover.mean)
    num = cover.log_var.exp() + (fused.mean - cover.mean) ** 2
    return (fused.log_var - cover.log_var + num * torch.exp(-fused.log_var) - 1.0).mean()


# --------------------------------------------------------------------------
# perceptual features


class RandomConvFeatures(nn.Module):
    """Frozen, seeded stack of strided 3x3 convolutions applied per frame.

    ``forward`` takes frames ``(N, 3, H, W)`` and returns flattened features
    from every stage concatenated, shape ``(N, F)``.
    """

    def __init__(self, widths=(16, 32, 64, 64, 64), seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers, cin = [], 3
        for cout in widths:
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / (cin * 9)) ** 0.5)
                conv.bias.zero_()
            layers.append(conv)
            cin = cout
        self.layers = nn.ModuleList(layers)
        self.seed = seed
        self.widths = tuple(widths)
        self.requires_grad_(False)

    def forward(self, frames):
        feats = []
        x = frames * 2.0 - 1.0
        for conv in self.layers:
            x = torch.relu(conv(x))
            feats.append(x.flatten(1))
        return torch.cat(feats, dim=1)


def _frames(video):
    # (B, 3, T, H, W) or (3, T, H, W) -> (B*T, 3, H, W)
    if video.dim() == 4:
        video = video.unsqueeze(0)
    b, c, t, h, w = video.shape
    return video.transpose(1, 2).reshape(b * t, c, h, w)


def feature_distance(pred, target, extractor: Callable) -> torch.Tensor:
    """(1/M)||phi(pred) - phi(target)||^2, computed per frame and averaged."""
    _same_shape(pred, target)
    fp = extractor(_frames(pred))
    ft = extractor(_frames(target))
    return ((fp - ft) ** 2).mean()


def perceptual_loss(pred_cover, cover, pred_secret, secret, extractor: Callable) -> torch.Tensor:
    """Cover branch plus secret branch; pass ``None`` secrets to drop that branch."""
    loss = feature_distance(pred_cover, cover, extractor)
    if pred_secret is not None:
        loss = loss + feature_distance(pred_secret, secret, extractor)
    return loss


# --------------------------------------------------------------------------
# total


@dataclass
class ModelOutputs:
    """Everything the objective needs for one group of same-kind samples."""

    cover: torch.Tensor
    cover_hat: torch.Tensor
    cover_dist: LatentDistribution
    secret_hat: torch.Tensor  # extractor path, decoded
    secret: Optional[torch.Tensor] = None
    secret_dist: Optional[LatentDistribution] = None
    fused_dist: Optional[LatentDistribution] = None


@dataclass
class TrainingSample:
    kind: SampleKind
    cover: torch.Tensor
    secret: Optional[torch.Tensor] = None

    def __post_init__(self):
        self.kind = SampleKind(self.kind)
        if (self.secret is not None) != (self.kind is SampleKind.PAIR):
            raise ConfigError("secret must be present iff kind is cover_secret_pair")


def loss_terms(kind, out: ModelOutputs, extractor: Callable, epsilon: float = CHARB_EPS) -> dict:
    """Raw (unweighted) terms; excluded terms are exact zeros."""
    kind = SampleKind(kind)
    zero = out.cover_hat.new_zeros(())
    terms = dict.fromkeys(TERMS, zero)
    terms["cover"] = charbonnier(out.cover_hat, out.cover, epsilon)
    terms["kl_cover"] = kl_standard(out.cover_dist)
    if kind is SampleKind.PAIR:
        if out.secret is None or out.secret_dist is None or out.fused_dist is None:
            raise ConfigError("pair outputs need secret, secret_dist and fused_dist")
        terms["secret"] = charbonnier(out.secret_hat, out.secret, epsilon)
        terms["perceptual"] = perceptual_loss(out.cover_hat, out.cover, out.secret_hat, out.secret, extractor)
        terms["kl_secret"] = kl_standard(out.secret_dist)
        terms["embedding"] = embedding_constraint(out.fused_dist, out.cover_dist)
    else:
        if out.secret is not None or out.fused_dist is not None:
            raise ConfigError("secret-free outputs must not carry secret tensors")
        terms["perceptual"] = perceptual_loss(out.cover_hat, out.cover, None, None, extractor)
        terms["null"] = null_loss(out.secret_hat, epsilon)
    return terms


def combine(terms: dict, weights: LossWeights) -> torch.Tensor:
    w = asdict(weights)
    return sum(w[k] * terms[k] for k in TERMS)


def total_loss(kind, out: ModelOutputs, weights: LossWeights, extractor: Callable, epsilon: float = CHARB_EPS):
    """Returns ``(total, breakdown)`` where ``breakdown`` maps term name -> raw value."""
    terms = loss_terms(kind, out, extractor, epsilon)
    return combine(terms, weights), terms
