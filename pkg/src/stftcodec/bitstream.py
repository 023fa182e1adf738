"""SPST container: a fixed header followed by fixed-width bit-packed RVQ codes.

Layout (little-endian)::

    magic "SPST" | version u8 | sample_rate u32 | audio_channels u8 | window_len u16
    | hop u16 | embedding_rate u16 | r u8 | vocab_bits u8 | frame_count u32 | model_id 16 bytes

The payload holds ``frame_count * r`` codes, frame-major then level-major,
each written MSB-first in ``vocab_bits`` bits; the last byte is zero-padded.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rvq import CodeFrame

MAGIC = b"SPST"
VERSION = 1
_HEADER = struct.Struct("<4sBIBHHHBBI16s")
HEADER_BYTES = _HEADER.size


class StreamError(ValueError):
    """Base class for malformed streams."""


class StreamFormatError(StreamError):
    """Bad magic, unknown version or an inconsistent header field."""


class StreamLengthError(StreamError):
    """Payload shorter than the header promises."""


class TrailingDataError(StreamError):
    """Bytes left over after the last frame."""


class DepthMismatchError(StreamError):
    """A frame whose depth differs from the header's r."""


@dataclass(frozen=True)
class StreamHeader:
    sample_rate: int
    audio_channels: int
    window_len: int
    hop: int
    embedding_rate: int
    r: int
    vocab_bits: int
    frame_count: int
    model_id: bytes = bytes(16)
    version: int = VERSION

    def pack(self) -> bytes:
        if len(self.model_id) != 16:
            raise StreamFormatError(f"model_id must be 16 bytes, got {len(self.model_id)}")
        if not 1 <= self.vocab_bits <= 32:
            raise StreamFormatError(f"vocab_bits {self.vocab_bits} outside [1, 32]")
        try:
            return _HEADER.pack(MAGIC, self.version, self.sample_rate, self.audio_channels, self.window_len,
                                self.hop, self.embedding_rate, self.r, self.vocab_bits, self.frame_count,
                                self.model_id)
        except struct.error as exc:
            raise StreamFormatError(f"header field out of range: {exc}") from exc

    @property
    def payload_bits(self) -> int:
        return self.frame_count * self.r * self.vocab_bits

    @property
    def payload_bytes(self) -> int:
        return (self.payload_bits + 7) // 8

    @property
    def bitrate(self) -> float:
        return self.r * self.vocab_bits * self.embedding_rate

    def with_frames(self, frame_count: int) -> "StreamHeader":
        return StreamHeader(self.sample_rate, self.audio_channels, self.window_len, self.hop,
                            self.embedding_rate, self.r, self.vocab_bits, frame_count, self.model_id, self.version)


def parse_header(data: bytes) -> StreamHeader:
    if len(data) < HEADER_BYTES:
        if data[:4] != MAGIC[:len(data[:4])]:
            raise StreamFormatError(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}")
        raise StreamLengthError(f"header truncated: {len(data)} of {HEADER_BYTES} bytes")
    magic, version, sr, ch, win, hop, rate, r, vb, frames, model_id = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise StreamFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise StreamFormatError(f"unsupported stream version {version}")
    if not 1 <= vb <= 32:
        raise StreamFormatError(f"vocab_bits {vb} outside [1, 32]")
    return StreamHeader(sr, ch, win, hop, rate, r, vb, frames, model_id, version)


def pack_codes(codes: np.ndarray, bits: int) -> bytes:
    """MSB-first fixed-width packing of non-negative integers."""
    codes = np.asarray(codes, dtype=np.uint64).ravel()
    if codes.size == 0:
        return b""
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint64)
    bitmat = ((codes[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bitmat.ravel()).tobytes()


def unpack_codes(payload: bytes, bits: int, count: int) -> np.ndarray:
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    flat = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=count * bits)
    weights = np.uint64(1) << np.arange(bits - 1, -1, -1, dtype=np.uint64)
    return (flat.reshape(count, bits).astype(np.uint64) @ weights).astype(np.int64)


def write_stream(header: StreamHeader, frames: Sequence[CodeFrame]) -> bytes:
    """Header plus packed payload; ``header.frame_count`` is taken from ``frames``."""
    header = header.with_frames(len(frames))
    for i, fr in enumerate(frames):
        if fr.depth != header.r:
            raise DepthMismatchError(f"frame {i} has depth {fr.depth}, header r = {header.r}")
    codes = np.array([fr.codes for fr in frames], dtype=np.int64).reshape(len(frames), header.r)
    if codes.size and (codes.min() < 0 or codes.max() >= 1 << header.vocab_bits):
        raise StreamFormatError(f"codes must lie in [0, {1 << header.vocab_bits})")
    return header.pack() + pack_codes(codes, header.vocab_bits)


def read_stream(data: bytes, allow_partial: bool = False) -> tuple[StreamHeader, list[CodeFrame]]:
    """Inverse of :func:`write_stream`.

    With ``allow_partial``, a payload cut short on a frame boundary decodes to
    its complete frames instead of raising.
    """
    header = parse_header(data)
    payload = data[HEADER_BYTES:]
    frame_bits = header.r * header.vocab_bits
    have_bits = 8 * len(payload)
    if have_bits < header.payload_bits:
        if not allow_partial:
            raise StreamLengthError(f"payload truncated: expected {header.payload_bits} bits, "
                                    f"got {have_bits} bits")
        n = have_bits // frame_bits if frame_bits else header.frame_count
        header = header.with_frames(n)
    elif len(payload) > header.payload_bytes:
        raise TrailingDataError(f"{len(payload) - header.payload_bytes} trailing bytes after "
                                f"{header.frame_count} frames")
    codes = unpack_codes(payload, header.vocab_bits, header.frame_count * header.r)
    codes = codes.reshape(header.frame_count, header.r)
    return header, [CodeFrame(tuple(int(c) for c in row)) for row in codes]


def frames_to_array(frames: Sequence[CodeFrame], r: int) -> np.ndarray:
    return np.array([f.codes for f in frames], dtype=np.int64).reshape(len(frames), r)


def array_to_frames(codes: np.ndarray) -> list[CodeFrame]:
    return [CodeFrame(tuple(int(c) for c in row)) for row in np.asarray(codes)]
