"""Synthetic scene generation, frame-directory ingestion and chunking.

Videos are float32 numpy arrays laid out ``(3, T, H, W)`` with values in
``[0, 1]``.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, IngestionError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_CHUNK = 5
FRAME_PATTERN = "%06d.png"
MANIFEST = "manifest.json"


@dataclass(frozen=True)
class SyntheticSceneConfig:
    num_shapes: int = 3
    shape_kinds: tuple = ("rectangle", "circle")
    velocity_range: tuple = (0.5, 3.0)
    resolution: tuple = (64, 64)
    length: int = 21
    seed: int = 0

    def validate(self) -> None:
        h, w = self.resolution
        if h % 8 or w % 8 or h <= 0 or w <= 0:
            raise ConfigError(f"resolution {self.resolution} must be positive multiples of 8")
        lo, hi = self.velocity_range
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad velocity_range {self.velocity_range}")
        if self.num_shapes < 0:
            raise ConfigError("num_shapes must be >= 0")
        if self.length < 1:
            raise ConfigError("length must be >= 1")
        bad = set(self.shape_kinds) - {"rectangle", "circle"}
        if bad or not self.shape_kinds:
            raise ConfigError(f"unknown shape kinds {sorted(bad)}")


def validate_video(video: np.ndarray, min_frames: int = 5) -> None:
    """Check the VideoTensor invariants; raises on violation."""
    if video.ndim != 4 or video.shape[0] != 3:
        raise ShapeError(f"expected (3, T, H, W), got {video.shape}")
    _, t, h, w = video.shape
    if h % 8 or w % 8:
        raise ConfigError(f"frame size {h}x{w} not divisible by 8")
    if t < min_frames:
        raise ShapeError(f"video has {t} frames, need at least {min_frames}")
    if not np.all(np.isfinite(video)) or video.min() < 0.0 or video.max() > 1.0:
        raise ShapeError("pixel values must lie in [0, 1]")


def validate_chunk(chunk: np.ndarray) -> None:
    if chunk.ndim != 4 or chunk.shape[0] != 3:
        raise ShapeError(f"expected (3, T, H, W), got {chunk.shape}")
    if (chunk.shape[1] - 1) % 4:
        raise ShapeError(f"chunk length {chunk.shape[1]} is not 1 mod 4")
    if chunk.min() < 0.0 or chunk.max() > 1.0:
        raise ShapeError("pixel values must lie in [0, 1]")


def _background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, h), np.linspace(0.0, 1.0, w), indexing="ij")
    c0 = rng.uniform(0.15, 0.85, size=3)
    gx = rng.uniform(-0.3, 0.3, size=3)
    gy = rng.uniform(-0.3, 0.3, size=3)
    bg = c0[:, None, None] + gx[:, None, None] * (xx - 0.5) + gy[:, None, None] * (yy - 0.5)
    return np.clip(bg, 0.0, 1.0)


def generate_synthetic(config: SyntheticSceneConfig) -> np.ndarray:
    """Render bouncing rectangles/circles over a smooth gradient background.

    The output is a pure function of ``config``.
    """
    config.validate()
    h, w = config.resolution
    rng = np.random.default_rng(config.seed)
    bg = _background(rng, h, w)

    shapes = []
    for _ in range(config.num_shapes):
        kind = config.shape_kinds[rng.integers(len(config.shape_kinds))]
        size = rng.uniform(0.1, 0.3) * min(h, w)
        pos = np.array([rng.uniform(size, h - size), rng.uniform(size, w - size)])
        speed = rng.uniform(*config.velocity_range)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        vel = speed * np.array([np.sin(angle), np.cos(angle)])
        color = rng.uniform(0.0, 1.0, size=3)
        shapes.append([kind, size, pos, vel, color])

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    video = np.empty((3, config.length, h, w), dtype=np.float32)
    for t in range(config.length):
        frame = bg.copy()
        for s in shapes:
            kind, size, pos, vel, color = s
            if kind == "circle":
                mask = (yy - pos[0]) ** 2 + (xx - pos[1]) ** 2 <= (size / 2) ** 2
            else:
                mask = (np.abs(yy - pos[0]) <= size / 2) & (np.abs(xx - pos[1]) <= size / 2)
            frame[:, mask] = color[:, None]
            # advance and bounce off the borders
            nxt = pos + vel
            for ax, lim in ((0, h), (1, w)):
                if nxt[ax] < size / 2 or nxt[ax] > lim - size / 2:
                    vel[ax] = -vel[ax]
                    nxt[ax] = pos[ax] + vel[ax]
            s[2] = nxt
        video[:, t] = frame
    return video


def chunk_video(video: np.ndarray, T: int = DEFAULT_CHUNK) -> list[np.ndarray]:
    """Split into ``floor(T_total / T)`` consecutive chunks; the tail is dropped."""
    if T < 1 or (T - 1) % 4:
        raise ConfigError(f"chunk length {T} must satisfy T = 1 mod 4")
    total = video.shape[1]
    if total < T:
        raise ShapeError("video shorter than one chunk")
    n = total // T
    if total % T:
        logger.debug("dropping %d trailing frames", total - n * T)
    return [np.ascontiguousarray(video[:, i * T : (i + 1) * T]) for i in range(n)]


def unchunk(chunks) -> np.ndarray:
    return np.concatenate(list(chunks), axis=1)


# --------------------------------------------------------------------------
# frame directories


def write_frames(video: np.ndarray, directory, frame_rate: float = 25.0) -> Path:
    directory = Path(directory)
    (directory / "frames").mkdir(parents=True, exist_ok=True)
    t, h, w = video.shape[1:]
    u8 = np.round(np.clip(video, 0.0, 1.0) * 255.0).astype(np.uint8)
    for i in range(t):
        Image.fromarray(np.moveaxis(u8[:, i], 0, -1)).save(directory / "frames" / (FRAME_PATTERN % i))
    manifest = {
        "frame_count": int(t),
        "resolution": [int(h), int(w)],
        "frames": list(range(t)),
        "frame_rate": frame_rate,
        "resize": None,
    }
    tmp = directory / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2))
    os.replace(tmp, directory / MANIFEST)
    return directory


def _decode(path: Path, resize):
    with Image.open(path) as im:
        im = im.convert("RGB")
        if resize is not None:
            im = im.resize((resize[1], resize[0]), Image.BILINEAR)
        return np.asarray(im, dtype=np.float32) / 255.0


def load_frames(directory, manifest=None, workers: int = 4) -> np.ndarray:
    """Load ``frames/%06d.png`` listed in ``manifest.json`` as a (3, T, H, W) array.

    ``manifest`` may be a dict or a path; defaults to ``<directory>/manifest.json``.
    """
    directory = Path(directory)
    if manifest is None:
        manifest = directory / MANIFEST
    if not isinstance(manifest, dict):
        mpath = Path(manifest)
        if not mpath.exists():
            raise IngestionError(f"no manifest at {mpath}")
        manifest = json.loads(mpath.read_text())

    indices = manifest.get("frames")
    if indices is None:
        indices = list(range(int(manifest.get("frame_count", 0))))
    if not indices:
        raise IngestionError(f"no frames listed for {directory}")
    seen = set()
    for i in indices:
        if i in seen:
            raise IngestionError(f"duplicate frame index {i} in manifest")
        seen.add(i)
    ordered = sorted(indices)
    for a, b in zip(ordered, ordered[1:]):
        if b != a + 1:
            raise IngestionError(f"missing frame index: gap between {a} and {b}")
    if "frame_count" in manifest and int(manifest["frame_count"]) != len(ordered):
        raise IngestionError(
            f"manifest frame_count={manifest['frame_count']} but {len(ordered)} frames listed"
        )
    paths = [directory / "frames" / (FRAME_PATTERN % i) for i in ordered]
    for i, p in zip(ordered, paths):
        if not p.exists():
            raise IngestionError(f"missing frame index {i}: {p} not found")

    resize = manifest.get("resize")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        frames = list(pool.map(lambda p: _decode(p, resize), paths))
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise IngestionError(f"inconsistent frame sizes {sorted(shapes)}")
    h, w, _ = frames[0].shape
    if h % 8 or w % 8:
        raise ConfigError(f"frame size {h}x{w} not divisible by 8 and no resize requested")
    return np.ascontiguousarray(np.stack(frames, axis=0).transpose(3, 0, 1, 2))


def synthetic_corpus(n_videos: int, resolution=(64, 64), length: int = 21, seed: int = 0, **kw):
    """``n_videos`` scenes with consecutive seeds starting at ``seed``."""
    return [
        generate_synthetic(SyntheticSceneConfig(resolution=tuple(resolution), length=length, seed=seed + i, **kw))
        for i in range(n_videos)
    ]
