"""Optical flow: bilinear backward warping, flow rescaling, estimation,
extrapolation and the temporally propagated flow state.

Flow tensors are N x 2 x H x W in pixels; channel 0 is the horizontal
displacement dx, channel 1 the vertical displacement dy.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

FLO_MAGIC = b"PIEH"


def _check_flow(src: torch.Tensor, flow: torch.Tensor) -> None:
    if flow.dim() != 4 or flow.shape[1] != 2:
        raise ValueError(f"flow must be N x 2 x H x W, got {tuple(flow.shape)}")
    if src.shape[0] != flow.shape[0] or src.shape[-2:] != flow.shape[-2:]:
        raise ValueError(f"shape mismatch: src {tuple(src.shape)} vs flow {tuple(flow.shape)}")


def warp(src: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Backward-warp ``src`` so that out(y, x) samples src at (y + dy, x + dx).

    Sampling positions are clamped to the image border. Zero flow returns
    ``src`` exactly since every bilinear weight is then 0 or 1.
    """
    _check_flow(src, flow)
    n, c, h, w = src.shape
    ys = torch.arange(h, dtype=flow.dtype, device=flow.device).view(1, h, 1)
    xs = torch.arange(w, dtype=flow.dtype, device=flow.device).view(1, 1, w)
    sx = (xs + flow[:, 0]).clamp(0, w - 1)
    sy = (ys + flow[:, 1]).clamp(0, h - 1)
    x0 = sx.floor()
    y0 = sy.floor()
    wx = (sx - x0).unsqueeze(1)
    wy = (sy - y0).unsqueeze(1)
    x0i = x0.long()
    y0i = y0.long()
    x1i = (x0i + 1).clamp(max=w - 1)
    y1i = (y0i + 1).clamp(max=h - 1)

    flat = src.reshape(n, c, h * w)

    def tap(yi, xi):
        idx = (yi * w + xi).reshape(n, 1, h * w).expand(n, c, h * w)
        return flat.gather(2, idx).reshape(n, c, h, w)

    top = (1 - wx) * tap(y0i, x0i) + wx * tap(y0i, x1i)
    bottom = (1 - wx) * tap(y1i, x0i) + wx * tap(y1i, x1i)
    return (1 - wy) * top + wy * bottom


def rescale_flow(flow: torch.Tensor, scale: float) -> torch.Tensor:
    """Resize a flow field spatially and scale its displacements to match."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    if scale == 1:
        return flow
    h, w = flow.shape[-2:]
    th, tw = h * scale, w * scale
    if abs(th - round(th)) > 1e-9 or abs(tw - round(tw)) > 1e-9:
        raise ValueError(f"scale {scale} gives non-integer size {th}x{tw}")
    out = F.interpolate(flow, size=(int(round(th)), int(round(tw))), mode="bilinear", align_corners=False)
    return out * scale


def _conv(cin, cout, k=3, stride=1):
    return nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2)


class FlowEstimator(nn.Module):
    """Coarse-to-fine pyramid flow network.

    Each level refines the upsampled coarser flow with a residual predicted
    from the current frame, the warped reference and the flow itself.
    """

    def __init__(self, levels: int = 3, hidden: tuple[int, int, int] = (48, 64, 48)):
        super().__init__()
        self.levels = levels
        a, b, c = hidden
        self.nets = nn.ModuleList()
        for _ in range(levels):
            net = nn.Sequential(
                _conv(8, a), nn.LeakyReLU(0.1),
                _conv(a, b), nn.LeakyReLU(0.1),
                _conv(b, c), nn.LeakyReLU(0.1),
                _conv(c, 2),
            )
            nn.init.zeros_(net[-1].weight)
            nn.init.zeros_(net[-1].bias)
            self.nets.append(net)

    def forward(self, cur: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
        if cur.shape != ref.shape:
            raise ValueError(f"shape mismatch: {tuple(cur.shape)} vs {tuple(ref.shape)}")
        curs, refs = [cur], [ref]
        for _ in range(self.levels - 1):
            curs.append(F.avg_pool2d(curs[-1], 2))
            refs.append(F.avg_pool2d(refs[-1], 2))
        flow = None
        for level in reversed(range(self.levels)):
            c, r = curs[level], refs[level]
            if flow is None:
                flow = c.new_zeros(c.shape[0], 2, *c.shape[-2:])
            else:
                flow = rescale_flow(flow, 2)
            warped = warp(r, flow)
            flow = flow + self.nets[level](torch.cat([c, warped, flow], dim=1))
        return flow


def estimate_flow(net: FlowEstimator, cur: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
    return net(cur, ref)


class FlowExtrapolator(nn.Module):
    """Small U-shaped network predicting the next flow from three decoded
    frames and the two most recent decoded flows."""

    def __init__(self, width: int = 32):
        super().__init__()
        w = width
        act = lambda: nn.LeakyReLU(0.1)
        self.enc1 = nn.Sequential(_conv(13, w), act(), _conv(w, w), act())
        self.enc2 = nn.Sequential(_conv(w, 2 * w, stride=2), act(), _conv(2 * w, 2 * w), act())
        self.enc3 = nn.Sequential(_conv(2 * w, 2 * w, stride=2), act(), _conv(2 * w, 2 * w), act())
        self.dec2 = nn.Sequential(_conv(4 * w, 2 * w), act())
        self.dec1 = nn.Sequential(_conv(3 * w, w), act())
        self.out = _conv(w, 2)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, refs: list[torch.Tensor], flows: list[torch.Tensor]) -> torch.Tensor:
        if len(refs) != 3 or len(flows) != 2:
            raise ValueError("extrapolation takes 3 frames and 2 flows")
        size = refs[0].shape[-2:]
        if any(t.shape[-2:] != size for t in (*refs, *flows)):
            raise ValueError("all extrapolation inputs must share spatial size")
        x = torch.cat([*refs, *flows], dim=1)
        e1 = self.enc1(x)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        d2 = self.dec2(torch.cat([F.interpolate(e3, scale_factor=2, mode="nearest"), e2], dim=1))
        d1 = self.dec1(torch.cat([F.interpolate(d2, scale_factor=2, mode="nearest"), e1], dim=1))
        return self.out(d1)


def extrapolate_flow(net: FlowExtrapolator, refs, flows) -> torch.Tensor:
    return net(list(refs), list(flows))


@dataclass
class PropagatedFlowState:
    """Accumulated flow from the current frame back to the GOP's I-frame."""

    flow_to_first: torch.Tensor | None = None
    t: int = 1

    @property
    def empty(self) -> bool:
        return self.flow_to_first is None

    def reset(self) -> None:
        self.flow_to_first = None
        self.t = 1

    def detached(self) -> "PropagatedFlowState":
        f = None if self.flow_to_first is None else self.flow_to_first.detach()
        return PropagatedFlowState(f, self.t)


def update_propagated_flow(state: PropagatedFlowState, f_hat: torch.Tensor, t: int) -> PropagatedFlowState:
    if t < 2:
        raise ValueError("propagated flow starts at the first P-frame (t=2)")
    if t == 2:
        return PropagatedFlowState(f_hat, t)
    if state.flow_to_first is None:
        raise ValueError(f"propagated flow state is empty at t={t}")
    return PropagatedFlowState(warp(state.flow_to_first, f_hat) + f_hat, t)


def write_flo(path, flow) -> None:
    """Write an H x W x 2 flow as a raw float dump (PIEH, width, height, data)."""
    arr = flow
    if isinstance(arr, torch.Tensor):
        arr = arr.detach().cpu().numpy()
        if arr.ndim == 4:
            arr = arr[0]
        arr = arr.transpose(1, 2, 0)
    arr = np.asarray(arr, dtype="<f4")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLO_MAGIC)
        fh.write(struct.pack("<ii", w, h))
        fh.write(arr.tobytes(order="C"))


def read_flo(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FLO_MAGIC:
        raise ValueError(f"{path}: bad flow magic")
    w, h = struct.unpack("<ii", raw[4:12])
    data = np.frombuffer(raw, dtype="<f4", offset=12)
    if data.size != w * h * 2:
        raise ValueError(f"{path}: truncated flow data")
    return data.reshape(h, w, 2).copy()
