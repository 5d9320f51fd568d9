"""Conditional augmented-normalizing-flow codec and the plain hyperprior
autoencoder used for I-frames and the first P-frame's motion.

The conditional codec stacks additive autoencoding couplings over the pair
(x, z) with z starting at zero:

    z <- z + analysis_k(x, cond)
    x <- x - synthesis_k(z, cond)

so the transform is invertible by construction. The decoder does not have
the final x, and substitutes ``cond`` for it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .entropy.hyperprior import EntropyResult, HyperpriorEntropy
from .layers import Modulation, act, conv, deconv, zero_
from .quant import QuantMode

LATENT_STRIDE = 16


@dataclass
class LatentBlock:
    data: torch.Tensor
    kind: str  # "main" or "hyper"
    bits: torch.Tensor


@dataclass
class CodecOutput:
    reconstruction: torch.Tensor
    latents: list[LatentBlock]
    rate_bits: torch.Tensor
    payload: bytes | None = None
    x2: torch.Tensor | None = None
    cond: torch.Tensor | None = None

    @property
    def y_hat(self) -> torch.Tensor:
        return self.latents[0].data


def _output_from(recon: torch.Tensor, ent: EntropyResult, **extra) -> CodecOutput:
    by, bz = ent.bits_y.sum(), ent.bits_z.sum()
    latents = [LatentBlock(ent.y_hat, "main", by), LatentBlock(ent.z_hat, "hyper", bz)]
    return CodecOutput(recon, latents, by + bz, payload=ent.payload, **extra)


class CouplingAnalysis(nn.Module):
    def __init__(self, signal_ch: int, latent_ch: int, hidden: int, site: str | None = None):
        super().__init__()
        self.first = conv(2 * signal_ch, hidden, site=site)
        self.body = nn.Sequential(
            act(), conv(hidden, hidden),
            act(), conv(hidden, hidden),
            act(), zero_(conv(hidden, latent_ch)),
        )

    def forward(self, x, cond, mod: Modulation | None = None):
        return self.body(self.first(torch.cat([x, cond], dim=1), mod))


class CouplingSynthesis(nn.Module):
    def __init__(self, signal_ch: int, latent_ch: int, hidden: int, site: str | None = None):
        super().__init__()
        self.first = deconv(latent_ch, hidden, site=site)
        self.up = nn.Sequential(
            act(), deconv(hidden, hidden),
            act(), deconv(hidden, hidden),
            act(), deconv(hidden, hidden),
            act(),
        )
        self.fuse = nn.Sequential(
            conv(hidden + signal_ch, hidden, 3, 1), act(),
            zero_(conv(hidden, signal_ch, 3, 1)),
        )

    def forward(self, z, cond, mod: Modulation | None = None):
        h = self.up(self.first(z, mod))
        return self.fuse(torch.cat([h, cond], dim=1))


class CANFCodec(nn.Module):
    """Conditional codec for a signal given a same-shape condition."""

    def __init__(
        self,
        signal_ch: int,
        latent_ch: int = 128,
        hyper_latent_ch: int = 64,
        hidden: int = 64,
        steps: int = 2,
        temporal_ch: int = 0,
        use_context: bool = True,
        site_prefix: str | None = None,
    ):
        super().__init__()
        self.signal_ch = signal_ch
        site = (lambda kind, k: f"{site_prefix}_{kind}{k}") if site_prefix else (lambda kind, k: None)
        self.analyses = nn.ModuleList(
            CouplingAnalysis(signal_ch, latent_ch, hidden, site("a", k)) for k in range(steps)
        )
        self.syntheses = nn.ModuleList(
            CouplingSynthesis(signal_ch, latent_ch, hidden, site("s", k)) for k in range(steps)
        )
        self.entropy = HyperpriorEntropy(latent_ch, hyper_latent_ch, hidden, temporal_ch, use_context)

    def _check(self, x, cond):
        if x.shape != cond.shape:
            raise ValueError(f"signal {tuple(x.shape)} and condition {tuple(cond.shape)} differ")
        if x.shape[1] != self.signal_ch:
            raise ValueError(f"expected {self.signal_ch} channels, got {x.shape[1]}")

    def canf_forward(self, x, cond, mod: Modulation | None = None):
        """Returns (y2, z2, x2): the main latent, its hyper-latent and the
        residual signal left in the x slot."""
        self._check(x, cond)
        n, _, h, w = x.shape
        z = x.new_zeros(n, self.analyses[0].body[-1].out_channels, h // LATENT_STRIDE, w // LATENT_STRIDE)
        for a, s in zip(self.analyses, self.syntheses):
            z = z + a(x, cond, mod)
            x = x - s(z, cond, mod)
        return z, self.entropy.hyper_a(z), x

    def canf_inverse(self, y2, cond, mod: Modulation | None = None, x2=None):
        """Run the couplings backwards. ``x2`` defaults to the condition, as at
        the decoder."""
        expected = (cond.shape[-2] // LATENT_STRIDE, cond.shape[-1] // LATENT_STRIDE)
        if tuple(y2.shape[-2:]) != expected:
            raise ValueError(f"latent size {tuple(y2.shape[-2:])} does not match condition (expected {expected})")
        x = cond if x2 is None else x2
        z = y2
        for k in reversed(range(len(self.analyses))):
            x = x + self.syntheses[k](z, cond, mod)
            if k > 0:
                z = z - self.analyses[k](x, cond, mod)
        return x

    def forward(
        self,
        x,
        cond,
        mode: QuantMode | str = QuantMode.ROUND_STE,
        temporal_ctx=None,
        mod: Modulation | None = None,
        code: bool = False,
    ) -> CodecOutput:
        y2, _, x2 = self.canf_forward(x, cond, mod)
        ent = self.entropy(y2, temporal_ctx, mode, code=code)
        recon = self.canf_inverse(ent.y_hat, cond, mod)
        return _output_from(recon, ent, x2=x2, cond=cond)

    @torch.no_grad()
    def decode(self, payload: bytes, cond, temporal_ctx=None, mod: Modulation | None = None) -> CodecOutput:
        hw = (cond.shape[-2] // LATENT_STRIDE, cond.shape[-1] // LATENT_STRIDE)
        y_hat, z_hat = self.entropy.decode(payload, hw, temporal_ctx, n=cond.shape[0])
        recon = self.canf_inverse(y_hat, cond, mod)
        zero = torch.zeros(())
        return CodecOutput(recon, [LatentBlock(y_hat, "main", zero), LatentBlock(z_hat, "hyper", zero)], zero, payload)


class HyperpriorCodec(nn.Module):
    """Plain analysis/synthesis autoencoder with a mean-scale hyperprior."""

    def __init__(self, signal_ch: int, latent_ch: int = 128, hyper_latent_ch: int = 64, hidden: int = 64):
        super().__init__()
        self.signal_ch = signal_ch
        self.g_a = nn.Sequential(
            conv(signal_ch, hidden), act(),
            conv(hidden, hidden), act(),
            conv(hidden, hidden), act(),
            conv(hidden, latent_ch),
        )
        self.g_s = nn.Sequential(
            deconv(latent_ch, hidden), act(),
            deconv(hidden, hidden), act(),
            deconv(hidden, hidden), act(),
            deconv(hidden, signal_ch),
        )
        self.entropy = HyperpriorEntropy(latent_ch, hyper_latent_ch, hidden, use_context=False)

    def forward(self, x, mode: QuantMode | str = QuantMode.ROUND_STE, code: bool = False) -> CodecOutput:
        if x.shape[1] != self.signal_ch:
            raise ValueError(f"expected {self.signal_ch} channels, got {x.shape[1]}")
        y = self.g_a(x)
        ent = self.entropy(y, None, mode, code=code)
        return _output_from(self.g_s(ent.y_hat), ent)

    @torch.no_grad()
    def decode(self, payload: bytes, size: tuple[int, int], n: int = 1) -> CodecOutput:
        hw = (size[0] // LATENT_STRIDE, size[1] // LATENT_STRIDE)
        y_hat, z_hat = self.entropy.decode(payload, hw, None, n=n)
        zero = torch.zeros(())
        return CodecOutput(self.g_s(y_hat), [LatentBlock(y_hat, "main", zero), LatentBlock(z_hat, "hyper", zero)], zero, payload)
