"""Checkpoint container: named tensors, a metadata record and optimiser state.

Layout (``torch.save`` of a plain dict)::

    {"format": "semhide-checkpoint", "version": 1,
     "tensors": {"codec.*": ..., "hider.*": ..., "extractor.*": ...},
     "meta": {...}, "optimizer": state_dict | None}

Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import copy
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import torch

from .codec import VideoCodec
from .errors import CheckpointError
from .hiding import HidingNetConfig, SecretExtractor, SemanticHider

FORMAT = "semhide-checkpoint"
VERSION = 1
PARTS = ("codec", "hider", "extractor")


@dataclass
class Checkpoint:
    tensors: dict
    meta: dict
    optimizer: dict | None = None

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {"format": FORMAT, "version": VERSION, "tensors": self.tensors, "meta": self.meta, "optimizer": self.optimizer}
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        os.close(fd)
        try:
            torch.save(payload, tmp)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"checkpoint not found: {path}")
        try:
            payload = torch.load(path, map_location="cpu", weights_only=False)
        except Exception as exc:  # noqa: BLE001 - surface any unpickling failure uniformly
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if not isinstance(payload, dict) or payload.get("format") != FORMAT:
            raise CheckpointError(f"{path} is not a {FORMAT} file")
        return cls(payload["tensors"], payload["meta"], payload.get("optimizer"))

    def copy(self) -> "Checkpoint":
        return Checkpoint(
            {k: v.clone() for k, v in self.tensors.items()},
            copy.deepcopy(self.meta),
            copy.deepcopy(self.optimizer),
        )


def collect_tensors(**modules) -> dict:
    out = {}
    for prefix, module in modules.items():
        for name, t in module.state_dict().items():
            out[f"{prefix}.{name}"] = t.detach().clone()
    return out


def _load_part(module: torch.nn.Module, tensors: dict, prefix: str):
    want = module.state_dict()
    got = {k[len(prefix) + 1 :]: v for k, v in tensors.items() if k.startswith(prefix + ".")}
    missing = sorted(set(want) - set(got))
    unexpected = sorted(set(got) - set(want))
    if missing:
        raise CheckpointError(f"missing tensor {prefix}.{missing[0]}" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
    if unexpected:
        raise CheckpointError(f"unexpected tensor {prefix}.{unexpected[0]}")
    for k, v in got.items():
        if v.shape != want[k].shape:
            raise CheckpointError(f"tensor {prefix}.{k} has shape {tuple(v.shape)}, expected {tuple(want[k].shape)}")
    module.load_state_dict(got)
    return module


def build_codec(ckpt: Checkpoint) -> VideoCodec:
    codec = VideoCodec(widths=tuple(ckpt.meta.get("codec_widths", (32, 64, 96))),
                       res_blocks=int(ckpt.meta.get("codec_res_blocks", 0)))
    return _load_part(codec, ckpt.tensors, "codec").eval()


def build_hiding(ckpt: Checkpoint, part: str):
    cfg = HidingNetConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in ckpt.meta.get("hiding", {}).items()})
    module = SemanticHider(cfg) if part == "hider" else SecretExtractor(cfg)
    return _load_part(module, ckpt.tensors, part).eval()


def strip(ckpt: Checkpoint, part: str) -> Checkpoint:
    """Copy of ``ckpt`` with every ``<part>.*`` tensor removed."""
    c = ckpt.copy()
    c.tensors = {k: v for k, v in c.tensors.items() if not k.startswith(part + ".")}
    return c
