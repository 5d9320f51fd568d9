"""Model size, multiply-accumulates per pixel and reference-buffer size."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .model import FLOW_DEPTH, FRAME_DEPTH, ReferenceState, VideoCodec
from .quant import QuantMode


@dataclass
class ComplexityReport:
    params_m: float
    kmacs_per_pixel: float
    buffer_frfm: int
    resolution: tuple[int, int]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        return d


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def _layer_macs(m: nn.Module, inp: torch.Tensor, out: torch.Tensor) -> int:
    if isinstance(m, nn.Conv2d):
        k = m.kernel_size[0] * m.kernel_size[1] * (m.in_channels // m.groups)
        return out.numel() * k
    if isinstance(m, nn.ConvTranspose2d):
        k = m.kernel_size[0] * m.kernel_size[1] * (m.out_channels // m.groups)
        return inp.numel() * k
    if isinstance(m, nn.Linear):
        return out.numel() * m.in_features
    return 0


class MacCounter:
    """Context manager that sums conv/deconv/linear MACs over forward calls."""

    def __init__(self, module: nn.Module):
        self.module = module
        self.macs = 0
        self._handles = []

    def __enter__(self) -> "MacCounter":
        def hook(m, inputs, output):
            self.macs += _layer_macs(m, inputs[0], output)

        for m in self.module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                self._handles.append(m.register_forward_hook(hook))
        return self

    def __exit__(self, *exc) -> None:
        for h in self._handles:
            h.remove()
        self._handles.clear()


def buffer_capacity(model: VideoCodec) -> int:
    """Declared reference buffer in full-resolution single-channel maps:
    three RGB frames, two flows, plus the propagated flow when modulation
    consumes it."""
    n = FRAME_DEPTH * 3 + FLOW_DEPTH * 2
    if model.modulator is not None:
        n += 2
    return n


@torch.no_grad()
def pframe_macs(model: VideoCodec, resolution: tuple[int, int] = (64, 64)) -> int:
    """MACs to encode one steady-state P-frame (t=3, full motion path)."""
    h, w = resolution
    model.eval()
    g = torch.Generator().manual_seed(0)
    xs = [torch.rand(1, 3, h, w, generator=g) for _ in range(3)]
    state = ReferenceState().after_intra(model.code_iframe(xs[0], QuantMode.ROUND_STE).reconstruction)
    state = model.code_pframe(xs[1], state, QuantMode.ROUND_STE).state
    with MacCounter(model) as mc:
        model.code_pframe(xs[2], state, QuantMode.ROUND_STE)
    return mc.macs


def complexity_report(model: nn.Module, resolution: tuple[int, int] = (64, 64), example=None) -> ComplexityReport:
    """Parameters (millions), KMACs per pixel at ``resolution`` and buffer size.

    For a full codec the MACs are those of a P-frame; for any other module
    they come from one forward pass on ``example`` (zero without one).
    """
    h, w = resolution
    params = count_params(model)
    if isinstance(model, VideoCodec):
        macs, buf = pframe_macs(model, resolution), buffer_capacity(model)
    else:
        macs, buf = 0, 0
        if example is not None:
            with torch.no_grad(), MacCounter(model) as mc:
                model(example)
            macs = mc.macs
    return ComplexityReport(params / 1e6, macs / (h * w) / 1e3, buf, (h, w))
