"""The full P-frame codec: every network in the coding loop, and the
per-GOP reference state it reads and updates."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import torch
import torch.nn as nn

from .codec import CANFCodec, CodecOutput, HyperpriorCodec
from .config import ModelConfig
from .flow import FlowEstimator, FlowExtrapolator, PropagatedFlowState, update_propagated_flow
from .layers import Modulation, modulation_sites
from .mcnet import Modulator, MultiScaleMCNet, SimpleMCNet
from .quant import QuantMode

FRAME_DEPTH = 3
FLOW_DEPTH = 2

# parameter-name prefixes of the trainable groups
GROUPS = {
    "iframe": ("iframe.",),
    "flow": ("flow_net.", "extrapolator."),
    "motion": ("intra_motion.", "motion."),
    "mcnet": ("mcnet.",),
    "inter": ("inter.",),
    "modulation": ("modulator.",),
    "entropy_context": ("motion.entropy.gaussian.context_nets.", "inter.entropy.gaussian.context_nets."),
}


def clamp_pixels(x: torch.Tensor) -> torch.Tensor:
    """Clip to [0, 1] in the forward pass only; the gradient passes through
    unchanged so a saturated output can still recover."""
    return x.detach().clamp(0, 1) + (x - x.detach())


@dataclass
class ReferenceState:
    """Decoded references of the current GOP, most recent first."""

    frames: list[torch.Tensor] = field(default_factory=list)
    flows: list[torch.Tensor] = field(default_factory=list)
    prop: PropagatedFlowState = field(default_factory=PropagatedFlowState)
    t: int = 0

    @property
    def depth(self) -> tuple[int, int]:
        return len(self.frames), len(self.flows)

    def reset(self) -> None:
        self.frames, self.flows = [], []
        self.prop = PropagatedFlowState()
        self.t = 0

    def detached(self) -> "ReferenceState":
        return ReferenceState(
            [f.detach() for f in self.frames],
            [f.detach() for f in self.flows],
            self.prop.detached(),
            self.t,
        )

    def after_intra(self, recon: torch.Tensor) -> "ReferenceState":
        return ReferenceState([recon], [], PropagatedFlowState(), 1)

    def after_inter(self, recon, f_hat, prop) -> "ReferenceState":
        return ReferenceState(
            ([recon] + self.frames)[:FRAME_DEPTH],
            ([f_hat] + self.flows)[:FLOW_DEPTH],
            prop,
            self.t + 1,
        )

    def buffer_maps(self) -> int:
        """Buffered full-resolution single-channel maps."""
        n = sum(f.shape[1] for f in self.frames) + sum(f.shape[1] for f in self.flows)
        if self.prop.flow_to_first is not None:
            n += self.prop.flow_to_first.shape[1]
        return n


@dataclass
class PFrameResult:
    reconstruction: torch.Tensor
    motion: CodecOutput
    inter: CodecOutput
    flow: torch.Tensor
    f_hat: torch.Tensor
    x_c: torch.Tensor
    mod: Modulation | None
    state: ReferenceState

    @property
    def rate_bits(self) -> torch.Tensor:
        return self.motion.rate_bits + self.inter.rate_bits


class VideoCodec(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        lat, hyp, hid = cfg.latent_ch, cfg.hyper_latent_ch, cfg.hidden
        self.iframe = HyperpriorCodec(3, lat, hyp, hid)
        self.flow_net = FlowEstimator(hidden=cfg.flow_hidden)
        self.extrapolator = FlowExtrapolator(cfg.extrapolator_width)
        self.intra_motion = HyperpriorCodec(2, lat, hyp, hid)
        self.motion = CANFCodec(2, lat, hyp, hid, use_context=cfg.quadtree)
        targets = tuple(cfg.mod_targets) if cfg.feature_mod else ()
        if cfg.multiscale:
            self.mcnet = MultiScaleMCNet(cfg.grid_channels, targets)
        else:
            self.mcnet = SimpleMCNet(cfg.grid_channels[0])
        self.inter = CANFCodec(
            3, lat, hyp, hid,
            temporal_ch=lat,
            use_context=cfg.quadtree,
            site_prefix="inter" if "inter" in targets else None,
        )
        if targets:
            sites = {**modulation_sites(self.mcnet), **modulation_sites(self.inter)}
            self.modulator = Modulator(sites, cfg.sigma_dim)
        else:
            self.modulator = None

    # -- helpers -------------------------------------------------------

    def parameter_groups(self) -> dict[str, list[str]]:
        names = [n for n, _ in self.named_parameters()]
        return {g: [n for n in names if n.startswith(prefixes)] for g, prefixes in GROUPS.items()}

    def modulation(self, prop: PropagatedFlowState) -> Modulation | None:
        if self.modulator is None:
            return None
        return self.modulator(prop.flow_to_first)

    def extrapolate(self, state: ReferenceState) -> torch.Tensor:
        """Extrapolated flow used as the motion condition (t >= 3).

        Missing references at t=3 are filled by repeating the I-frame and
        with zero flow.
        """
        frames = list(state.frames)
        while len(frames) < FRAME_DEPTH:
            frames.append(frames[-1])
        flows = list(state.flows)
        while len(flows) < FLOW_DEPTH:
            flows.append(torch.zeros_like(flows[0]))
        return self.extrapolator(frames, flows)

    # -- coding --------------------------------------------------------

    def code_iframe(self, x, mode=QuantMode.ROUND_STE, code: bool = False) -> CodecOutput:
        out = self.iframe(x, mode, code=code)
        out.reconstruction = clamp_pixels(out.reconstruction)
        return out

    def decode_iframe(self, payload: bytes, size) -> CodecOutput:
        out = self.iframe.decode(payload, size)
        out.reconstruction = clamp_pixels(out.reconstruction)
        return out

    def predict_pframe(self, x, state: ReferenceState, mode=QuantMode.ROUND_STE, code: bool = False):
        """Motion coding and motion compensation only.

        Returns (flow, motion output, propagated state, modulation, x_c).
        """
        t = state.t + 1
        if t < 2 or not state.frames:
            raise ValueError("P-frame coding needs a decoded reference")
        ref = state.frames[0]
        flow = self.flow_net(x, ref)
        if t == 2:
            motion = self.intra_motion(flow, mode, code=code)
        else:
            motion = self.motion(flow, self.extrapolate(state), mode, code=code)
        prop, mod, x_c = self._condition(state, t, motion.reconstruction)
        return flow, motion, prop, mod, x_c

    def code_pframe(self, x, state: ReferenceState, mode=QuantMode.ROUND_STE, code: bool = False) -> PFrameResult:
        flow, motion, prop, mod, x_c = self.predict_pframe(x, state, mode, code)
        f_hat = motion.reconstruction
        inter = self.inter(x, x_c, mode, temporal_ctx=motion.y_hat, mod=mod, code=code)
        recon = clamp_pixels(inter.reconstruction)
        inter.reconstruction = recon
        return PFrameResult(recon, motion, inter, flow, f_hat, x_c, mod, state.after_inter(recon, f_hat, prop))

    @torch.no_grad()
    def decode_pframe(self, motion_payload: bytes, inter_payload: bytes, state: ReferenceState) -> PFrameResult:
        t = state.t + 1
        ref = state.frames[0]
        if t == 2:
            motion = self.intra_motion.decode(motion_payload, ref.shape[-2:], n=ref.shape[0])
        else:
            motion = self.motion.decode(motion_payload, self.extrapolate(state))
        f_hat = motion.reconstruction
        prop, mod, x_c = self._condition(state, t, f_hat)
        inter = self.inter.decode(inter_payload, x_c, temporal_ctx=motion.y_hat, mod=mod)
        recon = clamp_pixels(inter.reconstruction)
        inter.reconstruction = recon
        return PFrameResult(recon, motion, inter, None, f_hat, x_c, mod, state.after_inter(recon, f_hat, prop))

    def _condition(self, state: ReferenceState, t: int, f_hat):
        prop = update_propagated_flow(state.prop, f_hat, t)
        mod = self.modulation(prop)
        x_c = self.mcnet(state.frames[0], f_hat, mod)
        if self.cfg.zero_condition:
            x_c = torch.zeros_like(x_c)
        return prop, mod, x_c
