"""Randomised selection of the cover chunks that carry secret latents.

Indices are 0-based. The schedule is sender-side state only: receivers never
see it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .codec import latent_shape
from .errors import ConfigError, ScheduleError


@dataclass(frozen=True)
class HidingSchedule:
    N: int
    indices: tuple = ()
    # assignment[j] = cover slot carrying secret chunk j
    assignment: tuple = field(default=None)

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if self.assignment is None:
            object.__setattr__(self, "assignment", idx)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ScheduleError(f"indices must be strictly increasing: {idx}")
        if idx and (idx[0] < 0 or idx[-1] >= self.N):
            raise ScheduleError(f"indices {idx} out of range for N={self.N}")
        if sorted(self.assignment) != list(idx):
            raise ScheduleError("assignment must be a bijection onto the selected indices")

    @property
    def M(self) -> int:
        return len(self.indices)

    def secret_for_slot(self) -> dict:
        """Inverse assignment: cover slot -> secret chunk index."""
        return {slot: j for j, slot in enumerate(self.assignment)}

    def to_json(self) -> str:
        return json.dumps({"N": self.N, "M": self.M, "indices": list(self.indices), "assignment": list(self.assignment)})

    @classmethod
    def from_json(cls, text: str) -> "HidingSchedule":
        d = json.loads(text)
        return cls(N=d["N"], indices=tuple(d["indices"]), assignment=tuple(d["assignment"]))


def check_ratio(r: float) -> float:
    if r is None or not (0.0 <= float(r) <= 1.0):
        raise ConfigError(f"capacity ratio must lie in [0, 1], got {r}")
    return float(r)


def hidden_count(N: int, r: float) -> int:
    """``round(r * N)`` with halves rounded up."""
    return min(N, int(math.floor(check_ratio(r) * N + 0.5 + 1e-9)))


def draw_schedule(N: int, r: float, rng: np.random.Generator) -> HidingSchedule:
    """Pick a uniformly random ``M``-subset of ``range(N)``; secrets fill it in ascending order."""
    if N < 1:
        raise ScheduleError("N must be >= 1")
    M = hidden_count(N, r)
    if M == 0:
        return HidingSchedule(N=N)
    if M == N:
        return HidingSchedule(N=N, indices=tuple(range(N)))
    idx = np.sort(rng.choice(N, size=M, replace=False))
    return HidingSchedule(N=N, indices=tuple(int(i) for i in idx))


def base_compression_ratio(T: int, H: int, W: int) -> float:
    """Latent elements over pixel elements for one chunk, ``T' / (12 T)``."""
    c, t, h, w = latent_shape(T, H, W)
    return (c * t * h * w) / (3 * T * H * W)


def compression_ratio(T: int, H: int, W: int, r: float) -> float:
    """Per delivered video: one transmission carries the cover plus ``r`` secrets per chunk."""
    return base_compression_ratio(T, H, W) / (1.0 + check_ratio(r))


def apply_schedule(cover_latents, secret_latents, schedule: HidingSchedule, hider):
    """Hide ``secret_latents[j]`` into ``cover_latents[assignment[j]]``; others pass through.

    Untouched positions are returned as the very same objects.
    """
    if len(cover_latents) != schedule.N:
        raise ScheduleError(f"schedule is for {schedule.N} chunks, got {len(cover_latents)}")
    if len(secret_latents) < schedule.M:
        raise ScheduleError(f"schedule needs {schedule.M} secret chunks, got {len(secret_latents)}")
    out = list(cover_latents)
    for j, slot in enumerate(schedule.assignment):
        out[slot] = hider(cover_latents[slot], secret_latents[j])
    return out


def required_hidden(n_secret_chunks: int, N: int, r: float) -> int:
    """Raise unless ``N`` cover chunks at ratio ``r`` can carry every secret chunk."""
    M = hidden_count(N, r)
    if n_secret_chunks > M:
        raise ScheduleError(
            f"secret has {n_secret_chunks} chunks but only M={M} slots at r={r} (N={N}); "
            f"need r >= {n_secret_chunks / N:.3f}"
        )
    return M

