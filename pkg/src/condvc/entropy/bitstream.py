"""Self-delimiting container for coded GOPs.

Layout (little-endian): ``b"CVPP"``, u8 version, u16 width, u16 height
(pre-padding), u8 GOP size, u8 lambda index; then per chunk: u8 chunk type,
u32 payload length, payload bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

MAGIC = b"CVPP"
# Bumped whenever the quadtree step rotation or any coding constant changes.
VERSION = 1
LAMBDAS = (256, 512, 1024, 2048)

_HEADER = struct.Struct("<4sBHHBB")
_CHUNK = struct.Struct("<BI")


class BitstreamError(ValueError):
    pass


class ChunkType(IntEnum):
    INTRA = 0
    MOTION = 1
    INTER = 2


@dataclass
class Bitstream:
    width: int
    height: int
    gop: int
    lambda_index: int
    chunks: list[tuple[ChunkType, bytes]] = field(default_factory=list)
    version: int = VERSION

    @property
    def lmbda(self) -> int:
        return LAMBDAS[self.lambda_index]

    def add(self, kind: ChunkType, payload: bytes) -> None:
        self.chunks.append((ChunkType(kind), bytes(payload)))

    def to_bytes(self) -> bytes:
        out = bytearray(_HEADER.pack(MAGIC, self.version, self.width, self.height, self.gop, self.lambda_index))
        for kind, payload in self.chunks:
            out += _CHUNK.pack(int(kind), len(payload))
            out += payload
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) == 0:
            raise BitstreamError("no frames: empty bitstream")
        if len(data) < _HEADER.size:
            raise BitstreamError("truncated header")
        magic, version, width, height, gop, lam = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise BitstreamError(f"bad magic {magic!r}")
        if version != VERSION:
            raise BitstreamError(f"unsupported bitstream version {version} (decoder is {VERSION})")
        if lam >= len(LAMBDAS):
            raise BitstreamError(f"bad lambda index {lam}")
        bs = cls(width, height, gop, lam, version=version)
        pos = _HEADER.size
        while pos < len(data):
            if pos + _CHUNK.size > len(data):
                raise BitstreamError("truncated chunk header")
            kind, length = _CHUNK.unpack_from(data, pos)
            pos += _CHUNK.size
            if pos + length > len(data):
                raise BitstreamError(f"truncated payload: need {length} bytes, {len(data) - pos} left")
            try:
                bs.add(ChunkType(kind), data[pos : pos + length])
            except ValueError as e:
                raise BitstreamError(f"unknown chunk type {kind}") from e
            pos += length
        if not bs.chunks:
            raise BitstreamError("no frames")
        return bs


def pack_streams(*streams: bytes) -> bytes:
    """Concatenate sub-streams, each prefixed with its u32 length."""
    out = bytearray()
    for s in streams:
        out += struct.pack("<I", len(s)) + s
    return bytes(out)


def unpack_streams(payload: bytes, count: int) -> list[bytes]:
    out, pos = [], 0
    for _ in range(count):
        if pos + 4 > len(payload):
            raise BitstreamError("truncated sub-stream header")
        (n,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        if pos + n > len(payload):
            raise BitstreamError("truncated sub-stream")
        out.append(payload[pos : pos + n])
        pos += n
    return out
