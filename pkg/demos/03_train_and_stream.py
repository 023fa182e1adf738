"""Train a toy codec for a few hundred steps, then run it frame by frame.

The tiny preset trains in seconds. Afterwards the streaming encoder and
decoder reproduce the batch path while holding only causal state.
"""

import numpy as np

from stftcodec.config import tiny_train_config
from stftcodec.model import CodecModel
from stftcodec.synth import music_clip
from stftcodec.trainer import ClipDataset, new_state, train

cfg = tiny_train_config(steps=300, batch_size=4)
sr = cfg.model.sample_rate
clips = [music_clip(1.0, sr, seed) for seed in range(4)]
state = new_state(cfg)


def show(r):
    if r.step % 50 == 0:
        print(f"step {r.step:4d}  l_rec {r.l_rec:8.3f}  l_d {r.l_d:.3f}  {'bypass' if r.bypassed else 'quantized'}")


train(state, ClipDataset(clips, cfg.example_len), cfg.steps, on_report=show)

model = CodecModel.from_state(state)
audio = music_clip(0.5, sr, seed=99)
r = cfg.model.rvq.n_quantizers
batch_codes = model.encode_codes(audio, r)
stream_codes = model.encode_codes(audio, r, streaming=True)
print(f"\ncodes identical between batch and streaming encoders: {np.array_equal(batch_codes, stream_codes)}")

batch_audio = model.decode_codes(batch_codes)
stream_audio = model.decode_codes(batch_codes, streaming=True)[:, :batch_audio.shape[1]]
print(f"decoder batch vs streaming max difference: {np.max(np.abs(batch_audio - stream_audio)):.2e}")
spe = cfg.model.samples_per_embedding
print(f"each embedding carries {spe} samples ({1000 * spe / sr:g} ms); latency is two embeddings")
