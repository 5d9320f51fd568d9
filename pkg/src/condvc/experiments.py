"""Small synthetic training runs used to check the direction of RD effects."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .model import VideoCodec
from .synthetic import translating_dataset
from .training import ClipSampler, train_steps


def toy_model_config(**overrides) -> ModelConfig:
    """The narrowest configuration that still has every P-frame path."""
    base = dict(multiscale=False, feature_mod=False, quadtree=False, latent_ch=16, hyper_latent_ch=8, hidden=16)
    base.update(overrides)
    return ModelConfig.toy(**base)


def ema(values, decay: float = 0.98) -> np.ndarray:
    out = np.empty(len(values))
    acc = float(values[0])
    for i, v in enumerate(values):
        acc = decay * acc + (1 - decay) * float(v)
        out[i] = acc
    return out


@dataclass
class ToyRun:
    seed: int
    zero_condition: bool
    losses: np.ndarray
    # P-frame part of each step's loss (the only part the ablation changes)
    p_losses: np.ndarray

    @property
    def ema(self) -> np.ndarray:
        return ema(self.losses)

    def final_loss(self, window: int = 200) -> float:
        return float(np.mean(self.losses[-window:]))

    def final_p_loss(self, window: int = 200) -> float:
        return float(np.mean(self.p_losses[-window:]))


def toy_run(
    seed: int,
    steps: int = 1500,
    zero_condition: bool = False,
    lmbda: float = 2048,
    size: int = 32,
    n_seq: int = 16,
    n_frames: int = 6,
    clip_len: int = 2,
    smooth: float = 8.0,
    **model_overrides,
) -> ToyRun:
    """Train a narrow model on translating textures; both arms of a
    comparison share the initialization and the clip order for a seed."""
    data = translating_dataset(n_seq, n_frames, size, seed=seed, smooth=smooth)
    torch.manual_seed(seed)
    model = VideoCodec(toy_model_config(zero_condition=zero_condition, **model_overrides))
    tcfg = TrainConfig(crop=size, seed=seed, lr=1e-3, lr_end=1e-4)
    sampler = ClipSampler(data, size, seed=seed)
    p_losses = []

    def on_step(step, bd):
        p_losses.append(sum(float(f.total.detach()) for f in bd.frames if f.t >= 2))

    losses = train_steps(model, sampler, lmbda, tcfg, steps, clip_len=clip_len, on_step=on_step)
    return ToyRun(seed, zero_condition, np.asarray(losses), np.asarray(p_losses))
