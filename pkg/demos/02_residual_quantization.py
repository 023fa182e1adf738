"""Residual quantization: more levels buy lower error at a linear bit cost.

Codebooks are fitted with EMA updates on clustered toy data, then the same
vectors are coded at increasing depth and packed into a stream.
"""

import numpy as np

from stftcodec.bitstream import HEADER_BYTES, StreamHeader, array_to_frames, read_stream, write_stream
from stftcodec.config import RvqConfig, full_scale_config
from stftcodec.rvq import Codebooks, bitrate, ema_update, forward_train, quantize_batch, sample_dropout_level
from stftcodec.tensor import Tensor

rng = np.random.default_rng(0)
cfg = RvqConfig(n_quantizers=8, vocab=64, dim=16, ema_decay=0.95, dead_code_steps=20)
centres = 3 * rng.standard_normal((20, 16))
data = centres[rng.integers(0, 20, 20000)] + 0.3 * rng.standard_normal((20000, 16))

books = Codebooks.empty(cfg)
for _ in range(300):
    out = forward_train(Tensor(data[rng.choice(len(data), 256)][None]), books, cfg, rng, bypass=False, depths=[8])
    ema_update(books, out.assignments, cfg, rng)

test = data[:1000]
print("depth  mean squared residual")
for r in range(0, 9):
    _, res = quantize_batch(test, books.centroids, r)
    print(f"{r:5d}  {np.mean(np.sum(res ** 2, axis=1)):.4f}")

# training draws a depth per step; most mass sits on the cheap end
levels = sample_dropout_level(RvqConfig(), rng, size=100_000)
print("\nfull-scale dropout: P(r<=16) = %.3f, P(16<r<=32) = %.3f, P(r>32) = %.3f"
      % (np.mean(levels <= 16), np.mean((levels > 16) & (levels <= 32)), np.mean(levels > 32)))

full = full_scale_config()
for r in (16, 32, 64):
    print(f"full scale at depth {r}: {bitrate(full.rvq, full.embedding_rate, r) / 1000:g} kbps")

codes = rng.integers(0, 1024, (25 * 5, 16))
header = StreamHeader(48000, 2, 960, 480, 25, 16, 10, 0, bytes(16))
blob = write_stream(header, array_to_frames(codes))
print(f"\n5 s at depth 16 -> {len(blob)} bytes ({HEADER_BYTES} header + {len(blob) - HEADER_BYTES} payload)")
h, frames = read_stream(blob)
print(f"read back {h.frame_count} frames of {h.r} codes")
