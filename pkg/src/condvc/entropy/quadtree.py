"""Quadtree spatial-channel context model.

The latent's channels are split into four equal chunks and each 2x2 patch
carries position labels l = 2*(y % 2) + (x % 2). Element (chunk c, label l)
is coded in step s = (c + l) % 4, so every step touches all four chunks and
all four positions exactly once. Step s is predicted from the hyperprior
(and optional temporal) context plus everything decoded in steps < s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..quant import QuantMode, quantize, uniform_noise
from .models import gaussian_bits, gaussian_cdf_tables, scale_from_raw
from .rangecoder import RangeDecoder, RangeEncoder, decode_values, encode_values

NUM_STEPS = 4


@dataclass
class QuadtreeGroups:
    """Step index (0..3) for every element of a C x h x w latent."""

    steps: torch.Tensor

    @property
    def shape(self):
        return tuple(self.steps.shape)

    def mask(self, s: int) -> torch.Tensor:
        return self.steps == s

    def decoded_before(self, s: int) -> torch.Tensor:
        return self.steps < s


def step_map(c: int, h: int, w: int) -> torch.Tensor:
    if c % 4:
        raise ValueError(f"channel count {c} is not divisible by 4")
    if h % 2 or w % 2:
        raise ValueError(f"spatial size {h}x{w} must be even (pad first)")
    chunk = (torch.arange(c) // (c // 4)).view(c, 1, 1)
    label = (2 * (torch.arange(h) % 2)).view(1, h, 1) + (torch.arange(w) % 2).view(1, 1, w)
    return (chunk + label) % NUM_STEPS


def quadtree_partition(y: torch.Tensor) -> tuple[QuadtreeGroups, list[torch.Tensor]]:
    """Split a C x h x w latent into its four step groups (flattened values)."""
    groups = QuadtreeGroups(step_map(*y.shape[-3:]))
    return groups, [y[..., groups.mask(s)] for s in range(NUM_STEPS)]


def quadtree_merge(groups: QuadtreeGroups, parts: list[torch.Tensor]) -> torch.Tensor:
    lead = parts[0].shape[:-1]
    out = parts[0].new_zeros(*lead, *groups.shape)
    for s, part in enumerate(parts):
        out[..., groups.mask(s)] = part
    return out


def pad_even(y: torch.Tensor) -> torch.Tensor:
    h, w = y.shape[-2:]
    return F.pad(y, (0, w % 2, 0, h % 2))


class QuadtreeEntropyModel(nn.Module):
    """Mean-scale Gaussian conditional with optional 4-step context.

    With ``use_context=False`` (or all context nets zeroed) every step uses
    the hyperprior-only parameters.
    """

    def __init__(self, latent_ch: int, hyper_ch: int, temporal_ch: int = 0, hidden: int = 128, use_context: bool = True):
        super().__init__()
        self.latent_ch = latent_ch
        self.temporal_ch = temporal_ch
        self.use_context = use_context
        self.param_net = nn.Sequential(
            nn.Conv2d(hyper_ch + temporal_ch, hidden, 1), nn.LeakyReLU(0.1),
            nn.Conv2d(hidden, hidden, 1), nn.LeakyReLU(0.1),
            nn.Conv2d(hidden, 2 * latent_ch, 1),
        )
        self.context_nets = nn.ModuleList()
        for _ in range(NUM_STEPS - 1):
            net = nn.Sequential(
                nn.Conv2d(3 * latent_ch, hidden, 3, padding=1), nn.LeakyReLU(0.1),
                nn.Conv2d(hidden, hidden, 3, padding=1), nn.LeakyReLU(0.1),
                nn.Conv2d(hidden, 2 * latent_ch, 1),
            )
            nn.init.zeros_(net[-1].weight)
            nn.init.zeros_(net[-1].bias)
            self.context_nets.append(net)

    def base_params(self, hyper_ctx: torch.Tensor, temporal_ctx: torch.Tensor | None = None):
        if self.temporal_ch:
            if temporal_ctx is None:
                temporal_ctx = hyper_ctx.new_zeros(hyper_ctx.shape[0], self.temporal_ch, *hyper_ctx.shape[-2:])
            hyper_ctx = torch.cat([hyper_ctx, temporal_ctx], dim=1)
        mu, raw = self.param_net(hyper_ctx).chunk(2, dim=1)
        return mu, raw

    def step_params(self, s: int, y_ctx: torch.Tensor, base) -> tuple[torch.Tensor, torch.Tensor]:
        """(mu, sigma) for step ``s``; ``y_ctx`` must be zero outside steps < s."""
        mu, raw = base
        if s > 0 and self.use_context:
            dmu, draw = self.context_nets[s - 1](torch.cat([y_ctx, mu, raw], dim=1)).chunk(2, dim=1)
            mu, raw = mu + dmu, raw + draw
        return mu, scale_from_raw(raw)

    def forward(
        self,
        y: torch.Tensor,
        hyper_ctx: torch.Tensor,
        temporal_ctx: torch.Tensor | None = None,
        mode: QuantMode | str = QuantMode.ROUND_STE,
        encoder: RangeEncoder | None = None,
    ):
        """Quantize ``y`` step by step and measure its rate.

        Returns (per-element bits, quantized latent). When an encoder is
        given the integer symbols are also written to it, in step order.
        """
        h, w = y.shape[-2:]
        y = pad_even(y)
        hyper_ctx = pad_even(hyper_ctx)
        if temporal_ctx is not None:
            temporal_ctx = pad_even(temporal_ctx)
        mode = QuantMode(mode)
        groups = QuadtreeGroups(step_map(*y.shape[-3:]).to(y.device))
        base = self.base_params(hyper_ctx, temporal_ctx)
        y_hat = torch.zeros_like(y)
        bits = torch.zeros_like(y)
        for s in range(NUM_STEPS):
            y_ctx = torch.where(groups.decoded_before(s), y_hat, torch.zeros_like(y_hat))
            mu, sigma = self.step_params(s, y_ctx, base)
            mask = groups.mask(s).expand_as(y)
            q = quantize(y, mode, self.training, mean=mu)
            if self.training and mode is QuantMode.ROUND_STE:
                rate_in = uniform_noise(y)
            else:
                rate_in = q
            bits = torch.where(mask, gaussian_bits(rate_in, mu, sigma), bits)
            y_hat = torch.where(mask, q, y_hat)
            if encoder is not None:
                sym = torch.round(y - mu)[mask].to(torch.int64).tolist()
                encode_values(encoder, sym, gaussian_cdf_tables(sigma[mask].detach().double().numpy()))
        return bits[..., :h, :w], y_hat[..., :h, :w]

    @torch.no_grad()
    def decode(
        self,
        decoder: RangeDecoder,
        hyper_ctx: torch.Tensor,
        temporal_ctx: torch.Tensor | None = None,
    ) -> torch.Tensor:
        h, w = hyper_ctx.shape[-2:]
        hyper_ctx = pad_even(hyper_ctx)
        if temporal_ctx is not None:
            temporal_ctx = pad_even(temporal_ctx)
        n = hyper_ctx.shape[0]
        shape = (n, self.latent_ch, *hyper_ctx.shape[-2:])
        groups = QuadtreeGroups(step_map(*shape[1:]).to(hyper_ctx.device))
        base = self.base_params(hyper_ctx, temporal_ctx)
        y_hat = hyper_ctx.new_zeros(shape)
        for s in range(NUM_STEPS):
            y_ctx = torch.where(groups.decoded_before(s), y_hat, torch.zeros_like(y_hat))
            mu, sigma = self.step_params(s, y_ctx, base)
            mask = groups.mask(s).expand(shape)
            sym = decode_values(decoder, gaussian_cdf_tables(sigma[mask].double().numpy()))
            vals = torch.tensor(sym, dtype=y_hat.dtype, device=y_hat.device)
            y_hat = torch.where(mask, torch.zeros_like(y_hat).masked_scatter(mask, vals) + mu, y_hat)
        return y_hat[..., :h, :w]


def quadtree_code(model: QuadtreeEntropyModel, y, hyper_ctx, temporal_ctx=None, coder: RangeEncoder | None = None):
    """Total estimated bits and the quantized latent (test-time rounding)."""
    bits, y_hat = model(y, hyper_ctx, temporal_ctx, QuantMode.ROUND_STE, encoder=coder)
    return bits.sum(), y_hat
