"""RIFF/WAV reading and writing (16-bit PCM and 32-bit float)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile


class WavFormatError(ValueError):
    """Unreadable or unsupported WAV data."""


def read_wav(path: str | Path) -> tuple[int, np.ndarray]:
    """Return ``(sample_rate, audio)`` with audio as float64 [channels, n] in [-1, 1)."""
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, EOFError, OSError) as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if data.dtype == np.int16:
        audio = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        audio = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        audio = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype.kind == "f":
        audio = data.astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported sample type {data.dtype}")
    audio = audio[:, None] if audio.ndim == 1 else audio
    return int(rate), np.ascontiguousarray(audio.T)


def write_wav(path: str | Path, sample_rate: int, audio: np.ndarray, fmt: str = "float32") -> None:
    """Write [channels, n] audio as ``pcm16`` or ``float32``."""
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim == 1:
        audio = audio[None]
    if fmt == "pcm16":
        data = np.clip(np.round(audio * 32768.0), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = audio.astype(np.float32)
    else:
        raise WavFormatError(f"unknown WAV format {fmt!r}")
    wavfile.write(str(path), int(sample_rate), np.ascontiguousarray(data.T))
