"""Model and training configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class ModelConfig:
    latent_ch: int = 128
    hyper_latent_ch: int = 64
    hidden: int = 64
    grid_channels: tuple[int, int, int] = (32, 64, 96)
    sigma_dim: int = 64
    flow_hidden: tuple[int, int, int] = (48, 64, 48)
    extrapolator_width: int = 32
    multiscale: bool = True
    feature_mod: bool = True
    quadtree: bool = True
    # layers modulated when feature_mod is on: features, grid, grid_last, inter
    mod_targets: tuple[str, ...] = ("features", "grid", "inter")
    # ablation: code P-frames against an all-zero condition
    zero_condition: bool = False

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        """Narrow widths for quick experiments and tests."""
        base = dict(
            latent_ch=32,
            hyper_latent_ch=16,
            hidden=24,
            grid_channels=(8, 12, 16),
            sigma_dim=16,
            flow_hidden=(12, 16, 12),
            extrapolator_width=8,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in known}
        if isinstance(kw.get("mod_targets"), str):
            kw["mod_targets"] = tuple(t for t in kw["mod_targets"].replace(",", " ").split() if t)
        return cls(**kw)


@dataclass
class TrainConfig:
    stage: int = 1
    lambdas: tuple[int, ...] = (2048, 1024, 512, 256)
    steps: int = 500
    lr: float = 1e-4
    lr_end: float = 1e-5
    clip_len: int = 5
    batch_size: int = 1
    crop: int = 64
    epa: bool = True
    round_based: bool = True
    # None: use the stage's default
    modulated: bool | None = None
    feature_mod: bool | None = None
    reg_weight: float = 0.01
    grad_clip: float = 1.0
    seed: int = 0
    log_every: int = 1

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Parse a ``key = value`` (or ``key: value``) config file."""
        kw = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else ":"
            if sep not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split(sep, 1))
            key = key.replace("-", "_")
            if key == "lambda":
                key = "lambdas"
            if key not in types:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            kw[key] = _parse_value(value, types[key])
        return cls(**kw)


def _parse_value(value: str, typ: str):
    if "tuple" in typ:
        return tuple(int(v) for v in value.replace(",", " ").split())
    if "bool" in typ:
        v = value.lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"bad boolean {value!r}")
    if typ == "int":
        return int(value)
    if typ == "float":
        return float(value)
    return value
