"""Checkpoints: one archive of named arrays plus a JSON manifest.

Loading matches parameters by name; entries that are missing or change
shape are reported and left at their fresh initialization, so checkpoints
from an earlier stage load into a model with extra modules.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .model import VideoCodec

MODEL_REVISION = 1
_MANIFEST_KEY = "__manifest__"


@dataclass
class LoadReport:
    loaded: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    unexpected: list[str] = field(default_factory=list)
    mismatched: list[str] = field(default_factory=list)


def checkpoint_name(stage: int, lmbda: int) -> str:
    return f"stage{stage}_lambda{lmbda}.ckpt"


def save_checkpoint(path, model: VideoCodec, lmbda: int, stage: int, **extra) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "revision": MODEL_REVISION,
        "lambda": int(lmbda),
        "stage": int(stage),
        "config": model.cfg.to_dict(),
        **extra,
    }
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    arrays[_MANIFEST_KEY] = np.frombuffer(json.dumps(manifest).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path.write_bytes(buf.getvalue())
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as npz:
        arrays = {k: npz[k] for k in npz.files}
    manifest = json.loads(arrays.pop(_MANIFEST_KEY).tobytes().decode())
    return manifest, arrays


def load_state_by_name(model: torch.nn.Module, arrays: dict[str, np.ndarray]) -> LoadReport:
    report = LoadReport()
    own = model.state_dict()
    update = {}
    for name, tensor in own.items():
        if name not in arrays:
            report.missing.append(name)
        elif tuple(arrays[name].shape) != tuple(tensor.shape):
            report.mismatched.append(name)
        else:
            update[name] = torch.from_numpy(np.array(arrays[name])).to(tensor.dtype)
            report.loaded.append(name)
    report.unexpected = [k for k in arrays if k not in own]
    model.load_state_dict(update, strict=False)
    return report


def load_checkpoint(path, cfg: ModelConfig | None = None) -> tuple[VideoCodec, dict]:
    """Build a model from a checkpoint. ``cfg`` overrides the stored config
    (used when a later stage adds modules)."""
    manifest, arrays = read_checkpoint(path)
    model = VideoCodec(cfg or ModelConfig.from_dict(manifest.get("config", {})))
    manifest["load_report"] = load_state_by_name(model, arrays)
    return model, manifest
