"""Shared convolution helpers and modulation-aware convolutions."""

from __future__ import annotations

import torch
import torch.nn as nn

# site name -> (alpha, beta), each N x C
Modulation = dict[str, tuple[torch.Tensor, torch.Tensor]]


def modulate(x: torch.Tensor, alpha: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Channel-wise affine: out[:, c] = alpha[:, c] * x[:, c] + beta[:, c]."""
    if alpha.shape[-1] != x.shape[1] or beta.shape[-1] != x.shape[1]:
        raise ValueError(f"modulation length {alpha.shape[-1]} does not match {x.shape[1]} channels")
    if alpha.dim() == 1:
        alpha, beta = alpha.unsqueeze(0), beta.unsqueeze(0)
    return alpha[:, :, None, None] * x + beta[:, :, None, None]


class _ModulatedMixin:
    site: str | None

    def _apply_mod(self, out: torch.Tensor, mod: Modulation | None) -> torch.Tensor:
        if mod is None or self.site is None or self.site not in mod:
            return out
        alpha, beta = mod[self.site]
        return modulate(out, alpha, beta)


class ModConv2d(nn.Conv2d, _ModulatedMixin):
    """Conv2d whose output can be modulated by a named (alpha, beta) pair."""

    def __init__(self, *args, site: str | None = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.site = site

    def forward(self, x, mod: Modulation | None = None):
        return self._apply_mod(super().forward(x), mod)


class ModConvTranspose2d(nn.ConvTranspose2d, _ModulatedMixin):
    def __init__(self, *args, site: str | None = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.site = site

    def forward(self, x, mod: Modulation | None = None):
        return self._apply_mod(super().forward(x), mod)


def conv(cin: int, cout: int, k: int = 5, stride: int = 2, site: str | None = None) -> ModConv2d:
    return ModConv2d(cin, cout, k, stride=stride, padding=k // 2, site=site)


def deconv(cin: int, cout: int, k: int = 5, stride: int = 2, site: str | None = None) -> ModConvTranspose2d:
    return ModConvTranspose2d(cin, cout, k, stride=stride, padding=k // 2, output_padding=stride - 1, site=site)


def act() -> nn.Module:
    return nn.LeakyReLU(0.1)


def zero_(layer: nn.Module) -> nn.Module:
    nn.init.zeros_(layer.weight)
    if layer.bias is not None:
        nn.init.zeros_(layer.bias)
    return layer


def modulation_sites(module: nn.Module) -> dict[str, int]:
    """Registered modulation sites under ``module`` and their channel counts."""
    sites = {}
    for m in module.modules():
        site = getattr(m, "site", None)
        if site is not None:
            sites[site] = m.out_channels
    return sites
