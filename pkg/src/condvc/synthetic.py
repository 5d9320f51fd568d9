"""Synthetic translating-texture sequences for desk-scale training."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .frames import Frame


def texture(size: int, rng: np.random.Generator, smooth: float = 2.0) -> np.ndarray:
    """Smooth random RGB texture in [0, 1], periodic in both axes."""
    noise = rng.random((size, size, 3))
    tex = ndimage.gaussian_filter(noise, sigma=(smooth, smooth, 0), mode="wrap")
    lo, hi = tex.min(axis=(0, 1)), tex.max(axis=(0, 1))
    return ((tex - lo) / np.maximum(hi - lo, 1e-8)).astype(np.float32)


def translating_sequence(
    size: int,
    n_frames: int,
    rng: np.random.Generator,
    max_speed: float = 2.0,
    smooth: float = 2.0,
) -> list[Frame]:
    """A texture moving at a constant random velocity (wrap-around)."""
    tex = texture(size, rng, smooth)
    v = rng.uniform(-max_speed, max_speed, size=2)
    frames = []
    for t in range(n_frames):
        shifted = ndimage.shift(tex, (t * v[1], t * v[0], 0), order=1, mode="grid-wrap")
        frames.append(Frame(np.clip(shifted, 0.0, 1.0)))
    return frames


def translating_dataset(n_seq: int, n_frames: int, size: int, seed: int = 0, **kw) -> list[list[Frame]]:
    rng = np.random.default_rng(seed)
    return [translating_sequence(size, n_frames, rng, **kw) for _ in range(n_seq)]
