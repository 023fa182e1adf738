"""Deterministic music-like test signals: note sequences, chords, percussive noise."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .wav import write_wav


def _note(f0: float, n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / sr
    vib = 1.0 + 0.004 * np.sin(2 * np.pi * rng.uniform(4, 6) * t)
    out = np.zeros(n)
    for h in range(1, 7):
        if f0 * h >= 0.45 * sr:
            break
        out += rng.uniform(0.3, 1.0) / h * np.sin(2 * np.pi * f0 * h * np.cumsum(vib) / sr + rng.uniform(0, 2 * np.pi))
    attack = min(n, int(0.01 * sr))
    env = np.exp(-t * rng.uniform(1.5, 5.0))
    env[:attack] *= np.linspace(0, 1, attack)
    return out * env


def music_clip(seconds: float, sample_rate: int, seed: int, channels: int = 1) -> np.ndarray:
    """[channels, n] clip at roughly -12 dBFS peak-normalized to 0.5."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sample_rate))
    root = 110.0 * 2 ** (rng.integers(0, 12) / 12)
    scale = np.array([0, 2, 4, 5, 7, 9, 11, 12, 14, 16])
    out = np.zeros((channels, n))
    beat = int(sample_rate * rng.uniform(0.18, 0.3))
    pos = 0
    while pos < n:
        length = min(n - pos, beat * int(rng.integers(1, 4)))
        for _ in range(int(rng.integers(1, 3))):
            f0 = root * 2 ** (rng.choice(scale) / 12) * (2 if rng.random() < 0.3 else 1)
            tone = _note(f0, length, sample_rate, rng)
            pan = rng.uniform(0.3, 1.0, size=channels)
            out[:, pos:pos + length] += pan[:, None] * tone
        if rng.random() < 0.5:
            hit = min(n - pos, int(0.05 * sample_rate))
            burst = rng.standard_normal(hit) * np.exp(-np.arange(hit) / (0.008 * sample_rate))
            out[:, pos:pos + hit] += 0.4 * burst
        pos += length
    out += 1e-3 * rng.standard_normal(out.shape)
    return 0.5 * out / np.max(np.abs(out))


def write_corpus(directory: str | Path, n_clips: int = 10, seconds: float = 4.0, sample_rate: int = 16000,
                 channels: int = 1, seed: int = 0) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_clips):
        p = directory / f"clip{i:02d}.wav"
        write_wav(p, sample_rate, music_clip(seconds, sample_rate, seed * 1000 + i, channels), "pcm16")
        paths.append(p)
    return paths
