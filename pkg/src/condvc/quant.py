"""Latent quantization for training and coding."""

from __future__ import annotations

from enum import Enum

import torch


class QuantMode(str, Enum):
    NOISE = "additive-noise"
    ROUND_STE = "round-ste"


class _RoundSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return torch.round(x)

    @staticmethod
    def backward(ctx, grad):
        return grad


def ste_round(x: torch.Tensor) -> torch.Tensor:
    """Round in the forward pass, identity gradient in the backward pass."""
    return _RoundSTE.apply(x)


def uniform_noise(x: torch.Tensor) -> torch.Tensor:
    return x + torch.empty_like(x).uniform_(-0.5, 0.5)


def quantize(y: torch.Tensor, mode: QuantMode | str, training: bool, mean: torch.Tensor | None = None) -> torch.Tensor:
    """Quantize a latent where it feeds a subsequent transform.

    At test time this is mean-centred rounding. During training, noise mode
    returns ``y + u`` and round-ste mode returns the rounded value with a
    straight-through gradient. The noisy sample used for rate estimation in
    round-ste mode comes from :func:`uniform_noise` instead.
    """
    mode = QuantMode(mode)
    if training and mode is QuantMode.NOISE:
        return uniform_noise(y)
    if mean is None:
        return ste_round(y) if training else torch.round(y)
    if training:
        return ste_round(y - mean) + mean
    return torch.round(y - mean) + mean
