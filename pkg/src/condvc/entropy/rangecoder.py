"""Carry-less 32-bit range coder (Subbotin style) with 16-bit frequency tables.

Symbol tables are cumulative-frequency rows ``cdf`` of length A + 1 with
``cdf[0] == 0`` and ``cdf[-1] == PRECISION_TOTAL``. The coding alphabet used
by the latent models is ``[ESC_LOW, -RADIUS .. RADIUS, ESC_HIGH]``; values
outside the core range are sent as an escape symbol followed by an
Exp-Golomb coded overflow in bypass bits.
"""

from __future__ import annotations

from bisect import bisect_right
from typing import Iterable, Sequence

import numpy as np

PRECISION_BITS = 16
PRECISION_TOTAL = 1 << PRECISION_BITS
RADIUS = 64
ALPHABET = 2 * RADIUS + 3  # core values plus one escape bucket per tail

_MASK = 0xFFFFFFFF
_TOP = 1 << 24
_BOT = 1 << 16


class CoderError(RuntimeError):
    """Raised on a malformed table, desynchronised or truncated stream."""


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK
        self.out = bytearray()
        self._finished = False

    def encode(self, cum: int, freq: int, total: int) -> None:
        if freq <= 0:
            raise CoderError("zero-width symbol interval")
        r = self.range // total
        self.low += cum * r
        self.range = r * freq
        self._normalize()

    def _normalize(self) -> None:
        while True:
            if (self.low ^ (self.low + self.range)) >= _TOP:
                if self.range >= _BOT:
                    break
                self.range = (-self.low) & (_BOT - 1)
            self.out.append(self.low >> 24)
            self.low = (self.low << 8) & _MASK
            self.range = (self.range << 8) & _MASK

    def encode_bit(self, bit: int) -> None:
        self.encode(bit, 1, 2)

    def finish(self) -> bytes:
        if not self._finished:
            for _ in range(4):
                self.out.append(self.low >> 24)
                self.low = (self.low << 8) & _MASK
            self._finished = True
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0
        self.low = 0
        self.range = _MASK
        self.code = 0
        self._r = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self.pos >= len(self.data):
            raise CoderError("truncated range-coded stream")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def get_freq(self, total: int) -> int:
        self._r = self.range // total
        v = (self.code - self.low) // self._r
        if v < 0 or v >= total:
            raise CoderError("decoded value outside the model support")
        return v

    def update(self, cum: int, freq: int) -> None:
        if freq <= 0:
            raise CoderError("zero-width symbol interval")
        self.low += cum * self._r
        self.range = self._r * freq
        while True:
            if (self.low ^ (self.low + self.range)) >= _TOP:
                if self.range >= _BOT:
                    break
                self.range = (-self.low) & (_BOT - 1)
            self.code = ((self.code << 8) | self._next_byte()) & _MASK
            self.low = (self.low << 8) & _MASK
            self.range = (self.range << 8) & _MASK

    def decode(self, cdf: Sequence[int]) -> int:
        total = cdf[-1]
        f = self.get_freq(total)
        idx = bisect_right(cdf, f) - 1
        self.update(cdf[idx], cdf[idx + 1] - cdf[idx])
        return idx

    def decode_bit(self) -> int:
        bit = self.get_freq(2)
        self.update(bit, 1)
        return bit


def range_encode(symbols: Iterable[int], cdfs) -> bytes:
    """Encode alphabet indices, one cdf row per symbol (or one shared row)."""
    enc = RangeEncoder()
    shared = _is_single_row(cdfs)
    for i, s in enumerate(symbols):
        cdf = cdfs if shared else cdfs[i]
        lo, hi = int(cdf[s]), int(cdf[s + 1])
        enc.encode(lo, hi - lo, int(cdf[-1]))
    return enc.finish()


def range_decode(data: bytes, cdfs, count: int) -> list[int]:
    dec = RangeDecoder(data)
    shared = _is_single_row(cdfs)
    if shared:
        row = [int(v) for v in cdfs]
        return [dec.decode(row) for _ in range(count)]
    return [dec.decode([int(v) for v in cdfs[i]]) for i in range(count)]


def _is_single_row(cdfs) -> bool:
    return isinstance(cdfs, (list, tuple, np.ndarray)) and len(cdfs) > 0 and np.ndim(cdfs[0]) == 0


def pmf_to_cdf(pmf: np.ndarray) -> np.ndarray:
    """Quantize rows of probabilities to strictly increasing 16-bit cdf rows.

    Every bucket gets at least one count; the rounding remainder goes to the
    most probable bucket.
    """
    pmf = np.clip(np.asarray(pmf, dtype=np.float64), 0.0, None)
    pmf = pmf / pmf.sum(axis=1, keepdims=True)
    n, a = pmf.shape
    freq = 1 + np.floor(pmf * (PRECISION_TOTAL - a)).astype(np.int64)
    rem = PRECISION_TOTAL - freq.sum(axis=1)
    freq[np.arange(n), pmf.argmax(axis=1)] += rem
    cdf = np.zeros((n, a + 1), dtype=np.int64)
    np.cumsum(freq, axis=1, out=cdf[:, 1:])
    return cdf


def value_to_index(v: int) -> tuple[int, int | None]:
    """Map a signed value to (alphabet index, escape overflow or None)."""
    if v < -RADIUS:
        return 0, -v - RADIUS - 1
    if v > RADIUS:
        return ALPHABET - 1, v - RADIUS - 1
    return v + RADIUS + 1, None


def _put_golomb(enc: RangeEncoder, m: int) -> None:
    v = m + 1
    nbits = v.bit_length()
    for _ in range(nbits - 1):
        enc.encode_bit(0)
    for i in reversed(range(nbits)):
        enc.encode_bit((v >> i) & 1)


def _get_golomb(dec: RangeDecoder) -> int:
    zeros = 0
    while dec.decode_bit() == 0:
        zeros += 1
        if zeros > 40:
            raise CoderError("escape overflow is out of range")
    v = 1
    for _ in range(zeros):
        v = (v << 1) | dec.decode_bit()
    return v - 1


def encode_values(enc: RangeEncoder, values: Sequence[int], cdfs: np.ndarray) -> None:
    """Encode signed integer values with per-value cdf rows over the escape alphabet."""
    for v, cdf in zip(values, cdfs.tolist()):
        idx, extra = value_to_index(int(v))
        enc.encode(cdf[idx], cdf[idx + 1] - cdf[idx], PRECISION_TOTAL)
        if extra is not None:
            _put_golomb(enc, extra)


def decode_values(dec: RangeDecoder, cdfs: np.ndarray) -> list[int]:
    out = []
    for cdf in cdfs.tolist():
        idx = dec.decode(cdf)
        if idx == 0:
            out.append(-RADIUS - 1 - _get_golomb(dec))
        elif idx == ALPHABET - 1:
            out.append(RADIUS + 1 + _get_golomb(dec))
        else:
            out.append(idx - RADIUS - 1)
    return out
