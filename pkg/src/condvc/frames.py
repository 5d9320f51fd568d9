"""Frame ingestion, stride padding and clip windowing."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from PIL import Image

CODEC_STRIDE = 64

IMAGE_SUFFIXES = (".png", ".ppm", ".pnm", ".bmp")


@dataclass
class Frame:
    """An RGB frame with values in [0, 1], stored H x W x 3.

    ``orig_h``/``orig_w`` keep the pre-padding size so decoded output can be
    cropped back.
    """

    data: np.ndarray
    orig_h: int = -1
    orig_w: int = -1

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"expected H x W x 3 data, got {self.data.shape}")
        if self.orig_h < 0:
            self.orig_h = self.data.shape[0]
        if self.orig_w < 0:
            self.orig_w = self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    def to_tensor(self) -> torch.Tensor:
        """1 x 3 x H x W float32 tensor."""
        return torch.from_numpy(np.ascontiguousarray(self.data.transpose(2, 0, 1))).unsqueeze(0)

    @classmethod
    def from_tensor(cls, x: torch.Tensor, orig_h: int = -1, orig_w: int = -1) -> "Frame":
        if x.dim() == 4:
            x = x[0]
        return cls(x.detach().cpu().numpy().transpose(1, 2, 0), orig_h, orig_w)

    def cropped(self) -> "Frame":
        return Frame(self.data[: self.orig_h, : self.orig_w], self.orig_h, self.orig_w)

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.round(self.cropped().data * 255.0), 0, 255).astype(np.uint8)


@dataclass
class Clip:
    frames: list[Frame] = field(default_factory=list)

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("a clip needs at least 2 frames")
        shape = self.frames[0].shape
        if any(f.shape != shape for f in self.frames):
            raise ValueError("all frames in a clip must share dimensions")

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def to_tensors(self) -> list[torch.Tensor]:
        return [f.to_tensor() for f in self.frames]


def load_frame(path, width: int | None = None, height: int | None = None) -> Frame:
    """Load an 8-bit RGB image, or a raw RGB24 plane when width/height are given."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if width is not None or height is not None:
        if width is None or height is None:
            raise ValueError("raw RGB24 input needs both width and height")
        buf = np.fromfile(path, dtype=np.uint8)
        if buf.size != width * height * 3:
            raise ValueError(f"{path}: expected {width * height * 3} bytes, found {buf.size}")
        arr = buf.reshape(height, width, 3)
    else:
        with Image.open(path) as im:
            if im.mode in ("RGB", "RGBA", "L", "P"):
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
            else:
                raise ValueError(f"{path}: unsupported image mode {im.mode!r} (8-bit RGB only)")
    return Frame(arr.astype(np.float32) / 255.0)


def load_raw_sequence(path, width: int, height: int) -> list[Frame]:
    """Split a raw RGB24 file holding several concatenated frames."""
    buf = np.fromfile(path, dtype=np.uint8)
    size = width * height * 3
    if buf.size == 0 or buf.size % size:
        raise ValueError(f"{path}: size {buf.size} is not a multiple of {size}")
    planes = buf.reshape(-1, height, width, 3)
    return [Frame(p.astype(np.float32) / 255.0) for p in planes]


def load_sequence(path, width: int | None = None, height: int | None = None) -> list[Frame]:
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise FileNotFoundError(f"no image frames in {path}")
        return [load_frame(p) for p in files]
    if width is None or height is None:
        return [load_frame(path)]
    return load_raw_sequence(path, width, height)


def save_frame(frame: Frame, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(frame.to_uint8()).save(path)


def pad_to_stride(f: Frame, stride: int = CODEC_STRIDE) -> Frame:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h, w = f.shape
    ph = -(-h // stride) * stride
    pw = -(-w // stride) * stride
    if (ph, pw) == (h, w):
        return Frame(f.data.copy(), f.orig_h, f.orig_w)
    data = np.pad(f.data, ((0, ph - h), (0, pw - w), (0, 0)), mode="edge")
    return Frame(data, f.orig_h, f.orig_w)


def pad_tensor(x: torch.Tensor, stride: int = CODEC_STRIDE) -> torch.Tensor:
    """Edge-replicate an N x C x H x W tensor up to multiples of ``stride``."""
    h, w = x.shape[-2:]
    ph = -(-h // stride) * stride - h
    pw = -(-w // stride) * stride - w
    if ph == 0 and pw == 0:
        return x
    return torch.nn.functional.pad(x, (0, pw, 0, ph), mode="replicate")


def window_clips(
    frames: Sequence[Frame],
    clip_len: int,
    crop: int,
    stride: int | None = None,
    flip_prob: float = 0.5,
    rng: np.random.Generator | None = None,
) -> Iterator[Clip]:
    """Yield clips of consecutive frames sharing one random crop and flip."""
    if clip_len not in (2, 5, 7):
        raise ValueError("clip_len must be 2, 5 or 7")
    if len(frames) < clip_len:
        raise ValueError(f"sequence of {len(frames)} frames is shorter than clip_len={clip_len}")
    h, w = frames[0].shape
    if crop > min(h, w):
        raise ValueError(f"crop {crop} exceeds frame size {h}x{w}")
    rng = rng if rng is not None else np.random.default_rng()
    stride = stride or clip_len
    for start in range(0, len(frames) - clip_len + 1, stride):
        top = int(rng.integers(0, h - crop + 1))
        left = int(rng.integers(0, w - crop + 1))
        flip = bool(rng.random() < flip_prob)
        out = []
        for f in frames[start : start + clip_len]:
            patch = f.data[top : top + crop, left : left + crop]
            if flip:
                patch = patch[:, ::-1]
            out.append(Frame(np.ascontiguousarray(patch)))
        yield Clip(out)
