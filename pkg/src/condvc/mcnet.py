"""Multi-scale motion compensation (feature pyramid + GridNet) and the
flow-driven feature-map modulator."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .flow import rescale_flow, warp
from .layers import Modulation, ModConv2d, act, modulate, modulation_sites

GRID_CHANNELS = (32, 64, 96)
SIGMA_DIM = 64


@dataclass
class FeaturePyramid:
    levels: list[torch.Tensor]

    def __len__(self):
        return len(self.levels)


class _Level(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int, site: str | None):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.act = act()
        self.conv2 = ModConv2d(cout, cout, 3, padding=1, site=site)

    def forward(self, x, mod: Modulation | None = None):
        return self.conv2(self.act(self.conv1(x)), mod)


class FeatureExtractor(nn.Module):
    """Three-level pyramid (strides 1, 2, 4). With ``site_prefix`` the last
    convolution of every level is a modulation site."""

    def __init__(self, channels: tuple[int, int, int] = GRID_CHANNELS, site_prefix: str | None = None):
        super().__init__()
        cins = (3, channels[0], channels[1])
        self.levels = nn.ModuleList(
            _Level(cin, c, 1 if i == 0 else 2, f"{site_prefix}_l{i}" if site_prefix else None)
            for i, (cin, c) in enumerate(zip(cins, channels))
        )

    def forward(self, ref: torch.Tensor, mod: Modulation | None = None) -> FeaturePyramid:
        feats, x = [], ref
        for level in self.levels:
            x = level(x, mod)
            feats.append(x)
        return FeaturePyramid(feats)


def extract_pyramid(net: FeatureExtractor, ref: torch.Tensor) -> FeaturePyramid:
    return net(ref)


def warp_and_concat(pyr: FeaturePyramid, ref: torch.Tensor, f_hat: torch.Tensor) -> list[torch.Tensor]:
    """Per level: (warped features || unwarped features). The frame itself is
    appended to level 0 the same way."""
    if f_hat.shape[-2:] != ref.shape[-2:]:
        raise ValueError("flow must be at full frame resolution")
    out = []
    for level, feat in enumerate(pyr.levels):
        flow = rescale_flow(f_hat, 2.0 ** -level)
        if flow.shape[-2:] != feat.shape[-2:]:
            raise ValueError(f"level {level}: feature size {tuple(feat.shape[-2:])} vs flow {tuple(flow.shape[-2:])}")
        out.append(torch.cat([warp(feat, flow), feat], dim=1))
    out[0] = torch.cat([out[0], warp(ref, f_hat), ref], dim=1)
    return out


class GridBlock(nn.Module):
    """Residual lateral unit; its first convolution is a modulation site."""

    def __init__(self, ch: int, site: str | None):
        super().__init__()
        self.act1 = act()
        self.conv1 = ModConv2d(ch, ch, 3, padding=1, site=site)
        self.act2 = act()
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x, mod: Modulation | None = None):
        return x + self.conv2(self.act2(self.conv1(self.act1(x), mod)))


class _Down(nn.Sequential):
    def __init__(self, cin, cout):
        super().__init__(act(), nn.Conv2d(cin, cout, 3, stride=2, padding=1), act(), nn.Conv2d(cout, cout, 3, padding=1))


class _Up(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.body = nn.Sequential(act(), nn.Conv2d(cin, cout, 3, padding=1), act(), nn.Conv2d(cout, cout, 3, padding=1))

    def forward(self, x):
        return self.body(F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False))


class GridNet(nn.Module):
    """3 rows x 6 columns; columns 0-2 push information down the scales,
    columns 3-5 bring it back up. No normalization layers."""

    COLUMNS = 6

    def __init__(
        self,
        in_channels: tuple[int, int, int],
        channels: tuple[int, int, int] = GRID_CHANNELS,
        site_prefix: str | None = "grid",
        modulate_out: bool = False,
    ):
        """``site_prefix`` names the lateral-block sites (None: unmodulated);
        ``modulate_out`` makes the output convolution a site instead."""
        super().__init__()
        self.rows = len(channels)
        half = self.COLUMNS // 2
        self.inputs = nn.ModuleList(nn.Conv2d(cin, c, 3, padding=1) for cin, c in zip(in_channels, channels))
        self.lateral = nn.ModuleDict()
        self.down = nn.ModuleDict()
        self.up = nn.ModuleDict()
        for r, c in enumerate(channels):
            for col in range(1, self.COLUMNS):
                self.lateral[f"{r}_{col}"] = GridBlock(c, f"{site_prefix}_r{r}c{col}" if site_prefix else None)
        for r in range(1, self.rows):
            for col in range(half):
                self.down[f"{r}_{col}"] = _Down(channels[r - 1], channels[r])
        for r in range(self.rows - 1):
            for col in range(half, self.COLUMNS):
                self.up[f"{r}_{col}"] = _Up(channels[r + 1], channels[r])
        self.out_act = act()
        self.out = ModConv2d(channels[0], 3, 3, padding=1, site="grid_out" if modulate_out else None)

    def forward(self, inputs: list[torch.Tensor], mod: Modulation | None = None) -> torch.Tensor:
        if len(inputs) != self.rows:
            raise ValueError(f"GridNet expects {self.rows} input rows")
        half = self.COLUMNS // 2
        nodes = [self.inputs[r](x) for r, x in enumerate(inputs)]
        for r in range(1, self.rows):
            nodes[r] = nodes[r] + self.down[f"{r}_0"](nodes[r - 1])
        for col in range(1, half):
            for r in range(self.rows):
                v = self.lateral[f"{r}_{col}"](nodes[r], mod)
                if r > 0:
                    v = v + self.down[f"{r}_{col}"](nodes[r - 1])
                nodes[r] = v
        for col in range(half, self.COLUMNS):
            for r in reversed(range(self.rows)):
                v = self.lateral[f"{r}_{col}"](nodes[r], mod)
                if r < self.rows - 1:
                    v = v + self.up[f"{r}_{col}"](nodes[r + 1])
                nodes[r] = v
        return self.out(self.out_act(nodes[0]), mod)


class MultiScaleMCNet(nn.Module):
    """Builds the condition x_c from the previous reconstruction and the
    decoded flow. Predicts a residual on top of the warped frame."""

    # where modulation can be applied
    TARGETS = ("features", "grid", "grid_last")

    def __init__(self, channels: tuple[int, int, int] = GRID_CHANNELS, targets: tuple[str, ...] = ()):
        super().__init__()
        unknown = set(targets) - set(self.TARGETS) - {"inter"}
        if unknown:
            raise ValueError(f"unknown modulation targets {sorted(unknown)}")
        self.features = FeatureExtractor(channels, "feat" if "features" in targets else None)
        in_ch = (2 * channels[0] + 6, 2 * channels[1], 2 * channels[2])
        self.grid = GridNet(in_ch, channels, "grid" if "grid" in targets else None, "grid_last" in targets)

    def forward(self, ref, f_hat, mod: Modulation | None = None):
        inputs = warp_and_concat(self.features(ref, mod), ref, f_hat)
        return warp(ref, f_hat) + self.grid(inputs, mod)


class SimpleMCNet(nn.Module):
    """Single-scale refinement of the warped frame (ablation without the
    multi-scale network)."""

    def __init__(self, width: int = 32):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(6, width, 3, padding=1), act(),
            nn.Conv2d(width, width, 3, padding=1), act(),
            nn.Conv2d(width, 3, 3, padding=1),
        )

    def forward(self, ref, f_hat, mod: Modulation | None = None):
        warped = warp(ref, f_hat)
        return warped + self.body(torch.cat([warped, ref], dim=1))


def gridnet_fuse(net: GridNet, inputs, mod: Modulation | None = None) -> torch.Tensor:
    return net(inputs, mod)


class SigmaExtractor(nn.Module):
    """Conv stack over a flow map followed by a global spatial mean."""

    def __init__(self, dim: int = SIGMA_DIM, width: int = 32, kernel: int = 3):
        super().__init__()
        p = kernel // 2
        self.body = nn.Sequential(
            nn.Conv2d(2, width, kernel, padding=p), act(),
            nn.Conv2d(width, dim, kernel, padding=p), act(),
            nn.Conv2d(dim, dim, 1),
        )

    def forward(self, flow_to_first: torch.Tensor | None) -> torch.Tensor:
        if flow_to_first is None:
            raise ValueError("propagated flow is empty")
        return self.body(flow_to_first).mean(dim=(2, 3))


class Modulator(nn.Module):
    """Maps the propagated flow to per-site (alpha, beta) channel vectors."""

    def __init__(self, sites: dict[str, int], dim: int = SIGMA_DIM, width: int = 32):
        super().__init__()
        self.sites = dict(sites)
        self.sigma = SigmaExtractor(dim, width)
        self.alpha = nn.ModuleDict()
        self.beta = nn.ModuleDict()
        for name, ch in self.sites.items():
            self.alpha[name] = nn.Linear(dim, ch)
            self.beta[name] = nn.Linear(dim, ch)
            nn.init.zeros_(self.alpha[name].weight)
            nn.init.ones_(self.alpha[name].bias)
            nn.init.zeros_(self.beta[name].weight)
            nn.init.zeros_(self.beta[name].bias)

    def make_alpha_beta(self, sigma: torch.Tensor, site: str) -> tuple[torch.Tensor, torch.Tensor]:
        if site not in self.alpha:
            raise KeyError(f"unknown modulation site {site!r}")
        return self.alpha[site](sigma), self.beta[site](sigma)

    def forward(self, flow_to_first: torch.Tensor) -> Modulation:
        sigma = self.sigma(flow_to_first)
        return {name: self.make_alpha_beta(sigma, name) for name in self.sites}


def extract_sigma(mod: Modulator, flow_to_first) -> torch.Tensor:
    return mod.sigma(flow_to_first)


def make_alpha_beta(mod: Modulator, sigma, layer_id: str):
    return mod.make_alpha_beta(sigma, layer_id)


__all__ = [
    "FeatureExtractor", "FeaturePyramid", "GridNet", "GridBlock", "Modulator", "MultiScaleMCNet",
    "SigmaExtractor", "SimpleMCNet", "extract_pyramid", "extract_sigma", "gridnet_fuse",
    "make_alpha_beta", "modulate", "modulation_sites", "warp_and_concat",
]
