"""Sender, channel pass and the two receiver types.

The regular receiver only ever sees the codec; the authorised receiver also
holds the extractor. Neither receives the hiding schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .channel import awgn, power_normalize_batch
from .codec import VideoCodec, reparameterize
from .scheduler import HidingSchedule

NULL_THRESHOLD = 0.05


def to_batch(chunks) -> torch.Tensor:
    if isinstance(chunks, torch.Tensor):
        return chunks
    return torch.from_numpy(np.stack([np.asarray(c, dtype=np.float32) for c in chunks]))


@dataclass
class Transmission:
    """Sender-side record. ``clean`` are the cover latents before hiding."""

    latents: torch.Tensor
    clean: torch.Tensor
    schedule: HidingSchedule


def encode_latents(codec: VideoCodec, chunks: torch.Tensor, generator=None, sample=False):
    dist = codec.encode(chunks)
    return (reparameterize(dist, generator) if sample else dist.mean), dist


def send(codec, hider, covers, secrets, schedule: HidingSchedule, generator=None, sample=False) -> Transmission:
    """Encode covers (and secrets) and hide secret ``j`` into slot ``schedule.assignment[j]``."""
    covers = to_batch(covers)
    clean, _ = encode_latents(codec, covers, generator, sample)
    if schedule.M == 0:
        return Transmission(clean, clean, schedule)
    secrets = to_batch(secrets)[: schedule.M]
    zs, _ = encode_latents(codec, secrets, generator, sample)
    slots = list(schedule.assignment)
    fused = hider(clean[slots], zs)
    rows = list(clean.unbind(0))
    for j, slot in enumerate(slots):
        rows[slot] = fused[j]
    return Transmission(torch.stack(rows), clean, schedule)


def channel_pass(latents: torch.Tensor, snr_db, generator=None, return_signal=False):
    """Per-chunk power normalisation, AWGN, and denormalisation with noiseless side info."""
    signal, scale = power_normalize_batch(latents)
    if not isinstance(snr_db, torch.Tensor) and snr_db == math.inf:
        rx = signal
    else:
        rx = awgn(signal, snr_db, generator)
    received = rx.reshape(latents.shape) * scale.reshape(-1, *([1] * (latents.dim() - 1)))
    if return_signal:
        return received, signal, rx, scale
    return received


def regular_receive(codec: VideoCodec, received: torch.Tensor, T: int) -> torch.Tensor:
    return codec.decode(received, T)


@dataclass
class AuthorizedOutput:
    cover: torch.Tensor
    secret: torch.Tensor  # decoded extractor output for every chunk
    carries_secret: torch.Tensor  # bool per chunk, judged from the decoded output


def authorized_receive(codec, extractor, received, T, null_threshold=NULL_THRESHOLD) -> AuthorizedOutput:
    cover = codec.decode(received, T)
    secret = codec.decode(extractor(received), T)
    flags = secret.abs().flatten(1).mean(dim=1) >= null_threshold
    return AuthorizedOutput(cover, secret, flags)


def reassemble_secret(out: AuthorizedOutput) -> torch.Tensor:
    """Concatenate detected secret chunks in stream order -> (3, M*T, H, W)."""
    picked = out.secret[out.carries_secret]
    if picked.shape[0] == 0:
        return out.secret.new_zeros((3, 0, *out.secret.shape[-2:]))
    return torch.cat(list(picked.unbind(0)), dim=1)


@dataclass
class VideoTransmission:
    regular_cover: np.ndarray  # (3, N*T, H, W)
    authorized_cover: np.ndarray
    secret: np.ndarray  # detected secret chunks in order, (3, M*T, H, W)
    schedule: HidingSchedule
    report: object
    extractor_chunks: torch.Tensor
    null_mse_to_zero: float


@torch.no_grad()
def transmit_video(codec, hider, extractor, cover_video, secret_video=None, snr_db=25.0, r=0.5,
                   T=5, seed=0, truncate_secret=False) -> VideoTransmission:
    """Send one cover video (optionally carrying a secret) and decode it at both receivers."""
    import logging

    from .data import chunk_video
    from .metrics import report as metric_report
    from .scheduler import check_ratio, draw_schedule, hidden_count, required_hidden

    log = logging.getLogger(__name__)
    for m in (codec, hider, extractor):
        m.eval()
    covers = to_batch(chunk_video(np.asarray(cover_video), T))
    N = covers.shape[0]
    rng = np.random.default_rng([seed, 3])
    secrets = None
    r = check_ratio(r)
    if secret_video is not None and hidden_count(N, r) == 0:
        log.warning("capacity ratio %s leaves no hiding slots; secret not transmitted", r)
        secret_video = None
    if secret_video is not None:
        secrets = to_batch(chunk_video(np.asarray(secret_video), T))
        M = hidden_count(N, r)
        if truncate_secret:
            secrets = secrets[:M]
        required_hidden(secrets.shape[0], N, r)
        schedule = draw_schedule(N, secrets.shape[0] / N, rng)
    else:
        schedule = HidingSchedule(N=N)
    tx = send(codec, hider, covers, secrets, schedule)
    gen = torch.Generator().manual_seed(seed)
    received = channel_pass(tx.latents, snr_db, gen)

    regular = regular_receive(codec, received, T)
    auth = authorized_receive(codec, extractor, received, T)
    slots = list(schedule.assignment)
    secret_pairs = [(auth.secret[s], secrets[j]) for j, s in enumerate(slots)] if slots else None
    latent_pairs = [(tx.latents[s], tx.clean[s]) for s in slots] if slots else None
    rep = metric_report(list(zip(regular, covers)), secret_pairs, latent_pairs)
    null_rows = [i for i in range(N) if i not in schedule.indices]
    null_mse = float((auth.secret[null_rows] ** 2).mean()) if null_rows else math.nan
    if secret_video is None:
        log.info("secret-free transmission: extractor output MSE to zero = %.3g", null_mse)
    return VideoTransmission(
        regular_cover=torch.cat(list(regular.unbind(0)), dim=1).numpy(),
        authorized_cover=torch.cat(list(auth.cover.unbind(0)), dim=1).numpy(),
        secret=reassemble_secret(auth).numpy(),
        schedule=schedule,
        report=rep,
        extractor_chunks=auth.secret,
        null_mse_to_zero=null_mse,
    )
