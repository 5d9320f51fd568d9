"""GOP-level encoding and decoding.

The encoder runs the same closed loop as the decoder: every reference it
buffers is the decoded reconstruction, so both sides hold bit-identical
state after each frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import torch

from .entropy.bitstream import LAMBDAS, Bitstream, BitstreamError, ChunkType
from .frames import CODEC_STRIDE, Frame, pad_tensor
from .metrics import bpp as bits_per_pixel
from .metrics import fmt_db, psnr_rgb
from .model import ReferenceState, VideoCodec
from .quant import QuantMode


@dataclass
class FramePoint:
    """Per-frame rate and quality (the per-frame profile schema)."""

    index: int
    kind: str
    bits: float
    est_bits: float
    bpp: float
    psnr: float

    def to_dict(self) -> dict:
        return {
            "frame": self.index,
            "type": self.kind,
            "bits": self.bits,
            "est_bits": self.est_bits,
            "bpp": self.bpp,
            "psnr": fmt_db(self.psnr),
        }


@dataclass
class CodingSession:
    """Decoder-side state of one stream: references, flow state, GOP position."""

    gop: int
    lambda_index: int
    height: int = 0
    width: int = 0
    state: ReferenceState = field(default_factory=ReferenceState)
    position: int = 0  # frames coded so far in the current GOP

    def __post_init__(self):
        if self.gop < 1:
            raise ValueError("GOP size must be >= 1")
        if not 0 <= self.lambda_index < len(LAMBDAS):
            raise ValueError(f"lambda index must be in [0, {len(LAMBDAS)})")

    @property
    def next_is_intra(self) -> bool:
        return self.position % self.gop == 0

    def check_size(self, h: int, w: int) -> None:
        if self.height == 0:
            self.height, self.width = h, w
        elif (h, w) != (self.height, self.width):
            raise ValueError(f"frame size changed mid-sequence: {h}x{w} vs {self.height}x{self.width}")

    def advance(self, state: ReferenceState) -> None:
        self.state = state
        self.position = (self.position + 1) % self.gop
        if self.position == 0:
            self.state = ReferenceState()


@dataclass
class EncodeResult:
    bitstream: Bitstream | None
    points: list[FramePoint]
    reconstructions: list[Frame]

    @property
    def total_bits(self) -> float:
        return sum(p.bits for p in self.points)


def lambda_index(lmbda: int) -> int:
    try:
        return LAMBDAS.index(int(lmbda))
    except ValueError:
        raise ValueError(f"lambda must be one of {LAMBDAS}, got {lmbda}") from None


def _check_model_lambda(model: VideoCodec, lam_idx: int, model_lambda: int | None) -> None:
    if model_lambda is not None and int(model_lambda) != LAMBDAS[lam_idx]:
        raise ValueError(f"checkpoint was trained for lambda={model_lambda}, stream asks for {LAMBDAS[lam_idx]}")


@torch.no_grad()
def encode_gop(
    model: VideoCodec,
    frames: Sequence[Frame],
    gop: int,
    lam_idx: int,
    arithmetic: bool = True,
    model_lambda: int | None = None,
) -> EncodeResult:
    """Code a sequence with an I-frame every ``gop`` frames.

    With ``arithmetic`` off no bitstream is produced and the reported bits
    are the model's rate estimate; reconstructions are identical either way.
    """
    if not frames:
        raise ValueError("no frames to encode")
    _check_model_lambda(model, lam_idx, model_lambda)
    model.eval()
    h, w = frames[0].shape
    session = CodingSession(gop, lam_idx)
    bs = Bitstream(w, h, gop, lam_idx) if arithmetic else None
    points, recons = [], []
    for i, frame in enumerate(frames):
        session.check_size(*frame.shape)
        x = pad_tensor(frame.to_tensor(), CODEC_STRIDE)
        if session.next_is_intra:
            out = model.code_iframe(x, QuantMode.ROUND_STE, code=arithmetic)
            recon, est = out.reconstruction, float(out.rate_bits)
            if bs is not None:
                bs.add(ChunkType.INTRA, out.payload)
                bits = 8.0 * len(out.payload)
            state, kind = session.state.after_intra(recon), "I"
        else:
            res = model.code_pframe(x, session.state, QuantMode.ROUND_STE, code=arithmetic)
            recon, est = res.reconstruction, float(res.rate_bits)
            if bs is not None:
                bs.add(ChunkType.MOTION, res.motion.payload)
                bs.add(ChunkType.INTER, res.inter.payload)
                bits = 8.0 * (len(res.motion.payload) + len(res.inter.payload))
            state, kind = res.state, "P"
        if bs is None:
            bits = est
        session.advance(state)
        rec = Frame.from_tensor(recon, h, w).cropped()
        recons.append(rec)
        points.append(FramePoint(i, kind, bits, est, bits_per_pixel(bits, h, w), psnr_rgb(frame.cropped(), rec)))
    return EncodeResult(bs, points, recons)


@torch.no_grad()
def decode_gop(bitstream: Bitstream | bytes, model: VideoCodec, model_lambda: int | None = None) -> list[Frame]:
    """Rebuild the reconstructions from a bitstream."""
    bs = bitstream if isinstance(bitstream, Bitstream) else Bitstream.from_bytes(bitstream)
    if not bs.chunks:
        raise BitstreamError("no frames")
    _check_model_lambda(model, bs.lambda_index, model_lambda)
    model.eval()
    h, w = bs.height, bs.width
    ph, pw = math.ceil(h / CODEC_STRIDE) * CODEC_STRIDE, math.ceil(w / CODEC_STRIDE) * CODEC_STRIDE
    session = CodingSession(bs.gop, bs.lambda_index)
    out, i = [], 0
    chunks = bs.chunks
    while i < len(chunks):
        kind, payload = chunks[i]
        if session.next_is_intra:
            if kind != ChunkType.INTRA:
                raise BitstreamError(f"expected an intra chunk at frame {len(out)}, got {kind.name}")
            recon = model.decode_iframe(payload, (ph, pw)).reconstruction
            state = session.state.after_intra(recon)
            i += 1
        else:
            if kind != ChunkType.MOTION or i + 1 >= len(chunks) or chunks[i + 1][0] != ChunkType.INTER:
                raise BitstreamError(f"expected motion + inter chunks at frame {len(out)}")
            res = model.decode_pframe(payload, chunks[i + 1][1], session.state)
            recon, state = res.reconstruction, res.state
            i += 2
        session.advance(state)
        out.append(Frame.from_tensor(recon, h, w).cropped())
    return out
