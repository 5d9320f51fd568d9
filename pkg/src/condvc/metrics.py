"""PSNR-RGB, bits per pixel and Bjontegaard delta rate."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .frames import Frame

BD_METHOD_NOTE = (
    "BD-rate: log10(bpp) fitted as a monotone piecewise-cubic Hermite function of PSNR, "
    "integrated over the common PSNR interval."
)


def psnr_rgb(orig, recon, max_val: float = 1.0) -> float:
    """10 log10(MAX^2 / MSE) with the MSE taken jointly over all channels.

    Accepts Frames (cropped to their original size) or arrays. Returns
    ``math.inf`` for identical inputs.
    """
    a = orig.cropped().data if isinstance(orig, Frame) else np.asarray(orig)
    b = recon.cropped().data if isinstance(recon, Frame) else np.asarray(recon)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    return psnr_from_mse(mse, max_val)


def psnr_from_mse(mse: float, max_val: float = 1.0) -> float:
    if mse < 0:
        raise ValueError("negative MSE")
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def bpp(bits: float, h: int, w: int) -> float:
    if h <= 0 or w <= 0:
        raise ValueError(f"zero area ({h}x{w})")
    return float(bits) / (h * w)


def aggregate_bpp(items: Iterable[tuple[float, int, int]]) -> float:
    """Total bits over total pixels for (bits, h, w) frames."""
    bits = pixels = 0
    for b, h, w in items:
        if h <= 0 or w <= 0:
            raise ValueError(f"zero area ({h}x{w})")
        bits += b
        pixels += h * w
    if pixels == 0:
        raise ValueError("zero area")
    return bits / pixels


def fmt_db(v: float) -> str | float:
    """JSON/CSV-safe PSNR: infinity becomes the string "inf"."""
    return "inf" if math.isinf(v) else v


def parse_db(v) -> float:
    return math.inf if v == "inf" else float(v)


@dataclass
class RDCurve:
    bpp: np.ndarray
    psnr: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.bpp = np.asarray(self.bpp, dtype=np.float64)
        self.psnr = np.asarray(self.psnr, dtype=np.float64)
        if self.bpp.shape != self.psnr.shape or self.bpp.ndim != 1:
            raise ValueError("bpp and psnr must be 1-D and of equal length")
        if len(self.bpp) < 2:
            raise ValueError("an RD curve needs at least 2 points")
        order = np.argsort(self.bpp)
        self.bpp, self.psnr = self.bpp[order], self.psnr[order]
        if np.any(np.diff(self.bpp) <= 0):
            raise ValueError("bpp values must be strictly increasing")
        if not np.all(np.isfinite(self.psnr)) or np.any(self.bpp <= 0):
            raise ValueError("RD points need positive bpp and finite PSNR")

    @classmethod
    def from_points(cls, points: Sequence[tuple[float, float]], label: str = "") -> "RDCurve":
        b, p = zip(*points)
        return cls(np.array(b), np.array(p), label)

    def __len__(self) -> int:
        return len(self.bpp)


def _log_rate_fn(curve: RDCurve) -> PchipInterpolator:
    order = np.argsort(curve.psnr)
    psnr, lr = curve.psnr[order], np.log10(curve.bpp[order])
    if np.any(np.diff(psnr) <= 0):
        raise ValueError("PSNR values must be distinct")
    return PchipInterpolator(psnr, lr)


def bd_rate(anchor: RDCurve, test: RDCurve) -> float:
    """Average bitrate difference (percent) of ``test`` against ``anchor``
    at equal PSNR; negative means savings."""
    for c in (anchor, test):
        if len(c) < 4:
            raise ValueError(f"BD-rate needs at least 4 points per curve, got {len(c)}")
    lo = max(anchor.psnr.min(), test.psnr.min())
    hi = min(anchor.psnr.max(), test.psnr.max())
    if hi <= lo:
        raise ValueError("RD curves have no PSNR overlap")
    fa, fb = _log_rate_fn(anchor), _log_rate_fn(test)
    ia = fa.integrate(lo, hi)
    ib = fb.integrate(lo, hi)
    return float(100.0 * (10.0 ** ((ib - ia) / (hi - lo)) - 1.0))

