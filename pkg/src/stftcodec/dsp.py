"""STFT analysis/synthesis, mel spectrograms and discriminator input planes.

Framing convention: periodic Hann window, hop = window/2, no FFT scaling and
no window-energy normalization, no edge padding. Frame ``t`` covers samples
``[t*hop, t*hop + window_len)``. The codec's planes keep the DC bin and drop
the Nyquist bin; :func:`stft` returns the Nyquist column separately so that
:func:`istft` can invert the analysis exactly.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import ConfigError, StftConfig
from .tensor import Tensor, as_tensor, concat, hypot, no_grad

MEL_LOG_FLOOR = 1e-5
N_MELS = 64


@functools.lru_cache(maxsize=None)
def _hann(n: int) -> np.ndarray:
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    w.setflags(write=False)
    return w


def hann(n: int, dtype=np.float64) -> np.ndarray:
    """Periodic Hann window of length ``n``."""
    return _hann(n).astype(dtype, copy=False)


def overlap_sum(window: np.ndarray, hop: int) -> float:
    """Constant value of the hop-shifted window sum (COLA constant)."""
    n = len(window)
    if n % hop:
        raise ConfigError(f"window length {n} is not a multiple of hop {hop}")
    s = window.reshape(n // hop, hop).sum(axis=0)
    if not np.allclose(s, s[0], rtol=0, atol=1e-12):
        raise ConfigError(f"window does not overlap-add to a constant at hop {hop}")
    return float(s[0])


def n_frames(n_samples: int, window_len: int, hop: int) -> int:
    if n_samples < window_len:
        return 0
    return (n_samples - window_len) // hop + 1


def _frame(x: np.ndarray, window_len: int, hop: int) -> np.ndarray:
    return sliding_window_view(x, window_len, axis=-1)[..., ::hop, :]


def _overlap_add(frames: np.ndarray, hop: int, length: int) -> np.ndarray:
    """Adjoint of :func:`_frame`: frames [..., T, W] -> signal [..., length]."""
    *lead, t, w = frames.shape
    r = w // hop
    out = np.zeros(tuple(lead) + (max(length, (t + r - 1) * hop),), dtype=frames.dtype)
    blocks = frames.reshape(*lead, t, r, hop)
    view = out[..., :(t + r - 1) * hop].reshape(*lead, t + r - 1, hop)
    for j in range(r):
        view[..., j:j + t, :] += blocks[..., :, j, :]
    return out[..., :length]


# -- differentiable transforms -----------------------------------------------------

def stft_planes(wave: Tensor, window_len: int, hop: int, n_bins: int | None = None) -> Tensor:
    """Differentiable STFT: [..., n] -> [..., 2, T, n_bins] (real, imaginary planes)."""
    wave = as_tensor(wave)
    n = wave.shape[-1]
    if n < window_len:
        raise ConfigError(f"signal of {n} samples is shorter than window {window_len}")
    if n_bins is None:
        n_bins = window_len // 2
    win = hann(window_len, wave.dtype)
    frames = _frame(wave.data, window_len, hop) * win
    spec = np.fft.rfft(frames, axis=-1)[..., :n_bins]
    out = np.stack([spec.real, spec.imag], axis=-3).astype(wave.dtype, copy=False)
    half = window_len // 2

    def bw(g):
        y = np.zeros(g.shape[:-3] + (g.shape[-2], half + 1), dtype=np.complex128)
        y[..., :n_bins] = g[..., 0, :, :] + 1j * g[..., 1, :, :]
        y[..., 1:half] *= 0.5
        gframes = np.fft.irfft(y, n=window_len, axis=-1) * window_len
        return (_overlap_add(gframes * win, hop, n).astype(wave.dtype, copy=False),)

    return Tensor._make(out, (wave,), bw, "stft")


def istft_planes(planes: Tensor, window_len: int, hop: int) -> Tensor:
    """Differentiable overlap-add inverse: [..., 2, T, F] -> [..., (T-1)*hop + window_len].

    Bins at and above ``F`` (in particular the Nyquist bin when F = window/2)
    are synthesized as zero.
    """
    planes = as_tensor(planes)
    *lead, two, t, f = planes.shape
    if two != 2:
        raise ConfigError(f"expected 2 planes (real, imaginary), got {two}")
    half = window_len // 2
    if f > half + 1:
        raise ConfigError(f"{f} bins exceed window {window_len}")
    wsum = overlap_sum(hann(window_len), hop)
    length = (t - 1) * hop + window_len
    spec = np.zeros(tuple(lead) + (t, half + 1), dtype=np.complex128)
    spec[..., :f] = planes.data[..., 0, :, :] + 1j * planes.data[..., 1, :, :]
    frames = np.fft.irfft(spec, n=window_len, axis=-1)
    out = (_overlap_add(frames, hop, length) / wsum).astype(planes.dtype, copy=False)

    def bw(g):
        gf = _frame(g, window_len, hop) / wsum
        gs = np.fft.rfft(gf, axis=-1) * (2.0 / window_len)
        gs[..., 0] *= 0.5
        gs[..., half] *= 0.5
        gs = gs[..., :f]
        return (np.stack([gs.real, gs.imag], axis=-3).astype(planes.dtype, copy=False),)

    return Tensor._make(out, (planes,), bw, "istft")


def modulus_planes(planes: Tensor) -> Tensor:
    """[..., 2, T, F] -> [..., 3, T, F] with (real, imag, |X|)."""
    planes = as_tensor(planes)
    re = planes[..., 0:1, :, :]
    im = planes[..., 1:2, :, :]
    return concat([re, im, hypot(re, im)], axis=-3)


# -- numpy-level API ------------------------------------------------------------------

@dataclass
class Spectrogram:
    """STFT of one or more channels.

    ``planes`` is [..., 2, T, F] (real, imaginary); ``nyquist`` holds the real
    Nyquist coefficient per frame, [..., T], which the codec does not model.
    """

    planes: np.ndarray
    nyquist: np.ndarray
    cfg: StftConfig

    @property
    def n_frames(self) -> int:
        return self.planes.shape[-2]


def stft(wave, cfg: StftConfig) -> Spectrogram:
    wave = np.asarray(wave)
    if wave.dtype.kind != "f":
        wave = wave.astype(np.float64)
    n = wave.shape[-1]
    if n < cfg.window_len:
        raise ConfigError(f"signal of {n} samples is shorter than window {cfg.window_len}")
    frames = _frame(wave, cfg.window_len, cfg.hop) * hann(cfg.window_len, wave.dtype)
    spec = np.fft.rfft(frames, axis=-1)
    f = cfg.n_bins
    planes = np.stack([spec[..., :f].real, spec[..., :f].imag], axis=-3).astype(wave.dtype, copy=False)
    return Spectrogram(planes, spec[..., f].real.astype(wave.dtype, copy=False), cfg)


def istft(spec: Spectrogram, cfg: StftConfig | None = None) -> np.ndarray:
    cfg = cfg or spec.cfg
    if spec.planes.shape[-1] != cfg.n_bins or spec.planes.shape[-3] != 2:
        raise ConfigError(f"spectrogram planes {spec.planes.shape} do not match window {cfg.window_len}")
    wsum = overlap_sum(hann(cfg.window_len), cfg.hop)
    t = spec.n_frames
    x = np.zeros(spec.planes.shape[:-3] + (t, cfg.window_len // 2 + 1), dtype=np.complex128)
    x[..., :cfg.n_bins] = spec.planes[..., 0, :, :] + 1j * spec.planes[..., 1, :, :]
    if spec.nyquist is not None:
        x[..., cfg.n_bins] = spec.nyquist
    frames = np.fft.irfft(x, n=cfg.window_len, axis=-1)
    out = _overlap_add(frames, cfg.hop, (t - 1) * cfg.hop + cfg.window_len) / wsum
    return out.astype(spec.planes.dtype, copy=False)


def disc_input(planes) -> np.ndarray:
    """(real, imag) planes -> (real, imag, modulus) along axis -3."""
    planes = np.asarray(planes)
    mod = np.hypot(planes[..., 0, :, :], planes[..., 1, :, :])
    return np.concatenate([planes, mod[..., None, :, :]], axis=-3)


# -- mel ----------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=None)
def _mel_fb(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int = N_MELS, fmin: float = 0.0,
                   fmax: float | None = None) -> np.ndarray:
    """Triangular filters with edges uniform on the HTK mel scale: [n_mels, n_fft//2 + 1]."""
    return _mel_fb(sample_rate, n_fft, n_mels, float(fmin), float(sample_rate / 2 if fmax is None else fmax))


@dataclass(frozen=True)
class MelConfig:
    s: int
    sample_rate: int
    n_mels: int = N_MELS
    fmin: float = 0.0
    fmax: float | None = None

    @property
    def hop(self) -> int:
        return self.s // 4

    @property
    def alpha(self) -> float:
        return math.sqrt(self.s / 2)


def mel_tensor(wave: Tensor, cfg: MelConfig) -> Tensor:
    """Differentiable mel magnitude spectrogram: [..., n] -> [..., T_s, n_mels]."""
    planes = stft_planes(wave, cfg.s, cfg.hop, cfg.s // 2 + 1)
    mag = hypot(planes[..., 0, :, :], planes[..., 1, :, :])
    fb = mel_filterbank(cfg.sample_rate, cfg.s, cfg.n_mels, cfg.fmin, cfg.fmax)
    return mag @ Tensor(fb.T.astype(mag.dtype, copy=False))


def mel_spectrogram(wave, cfg: MelConfig) -> np.ndarray:
    wave = np.asarray(wave, dtype=np.float64)
    if wave.shape[-1] < cfg.s:
        raise ConfigError(f"signal of {wave.shape[-1]} samples is shorter than mel window {cfg.s}")
    with no_grad():
        return mel_tensor(Tensor(wave), cfg).data
