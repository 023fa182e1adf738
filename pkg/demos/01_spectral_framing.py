"""Walk through the spectral front end and the network geometry.

A waveform becomes real/imaginary STFT planes, the encoder folds four frames
into one embedding, and the shape planner reports every stage before any
weights exist.
"""

import numpy as np

from stftcodec.config import StftConfig, desk_config, full_scale_config
from stftcodec.dsp import istft, stft
from stftcodec.shapes import plan

sr = 48000
t = np.arange(sr) / sr
x = 0.4 * np.sin(2 * np.pi * 440 * t) + 0.05 * np.random.default_rng(0).standard_normal(sr)

cfg = StftConfig(960, 480)
spec = stft(x, cfg)
print(f"1 s at {sr} Hz -> planes {spec.planes.shape} (re/im, frames, bins); Nyquist kept aside {spec.nyquist.shape}")

y = istft(spec)
interior = slice(cfg.hop, y.shape[-1] - cfg.hop)
print(f"overlap-add reconstruction, interior max error: {np.max(np.abs(y[interior] - x[interior])):.2e}")

print("\nfull-scale network, 1.28 s of audio:")
print(plan(full_scale_config()).summary())

print("\ndesk network (16 kHz mono), 1.28 s:")
print(plan(desk_config()).summary())
