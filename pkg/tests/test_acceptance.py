"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
Criterion 6 trains the desk model for 20k steps on first use and caches the result
under ``.acceptance/desk``.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

import desk_run
from stftcodec.bitstream import HEADER_BYTES, StreamHeader, array_to_frames, frames_to_array, read_stream, write_stream
from stftcodec.codec import (
    StreamingDecoder,
    StreamingEncoder,
    count_params,
    decode,
    encode,
    init_model,
    stream_decode,
    stream_encode,
)
from stftcodec.config import RvqConfig, StftConfig, desk_config, desk_train_config, full_scale_config
from stftcodec.dsp import istft, stft
from stftcodec.rvq import Codebooks, bitrate, ema_update, forward_train, quantize_batch, sample_dropout_level
from stftcodec.shapes import plan
from stftcodec.synth import music_clip
from stftcodec.tensor import Tensor
from stftcodec.trainer import ClipDataset, checkpoint_bytes, checkpoint_from_bytes, new_state, train

TESTS = Path(__file__).parent
FD_FILES = ["test_tensor.py", "test_dsp.py", "test_losses.py", "test_codec.py", "test_adversary.py"]


@pytest.fixture
def verdict(capsys):
    def say(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}", flush=True)
        assert ok, detail
    return say


def test_criterion_1_finite_differences(verdict):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", "-k", "fd",
                           *[str(TESTS / f) for f in FD_FILES]], capture_output=True, text=True, cwd=TESTS.parent)
    dt = time.perf_counter() - t0
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-300:]
    verdict(1, proc.returncode == 0 and dt < 300,
            f"finite differences on every op and loss, 20 seeds, rel err < 1e-4 ({summary}); {dt:.0f} s < 300 s")


def test_criterion_2_stft_round_trip(verdict):
    worst = 0.0
    rng = np.random.default_rng(0)
    windows = (16, 32, 64, 128, 256, 320, 512, 960, 1024, 2048, 4096)
    for w in windows:
        cfg = StftConfig(w, w // 2)
        n = np.arange(10 * w + 7)
        for x in (rng.standard_normal(n.size), 0.5 * np.sin(0.05 * n) + 0.2 * np.cos(1.3 * n + 0.4)):
            y = istft(stft(x, cfg))
            worst = max(worst, np.max(np.abs(y[cfg.hop:-cfg.hop] - x[cfg.hop:y.shape[-1] - cfg.hop])))
    verdict(2, worst < 1e-6, f"STFT interior round trip, noise and tones, windows {windows[0]}..{windows[-1]}: "
                             f"max error {worst:.2e} < 1e-6")


def test_criterion_3_streaming_and_latency(verdict):
    cfg = desk_config()
    params = init_model(cfg, 0)
    rng = np.random.default_rng(1)
    for k in params:
        if k.endswith(".b"):
            params[k] = 0.1 * rng.standard_normal(params[k].shape)
    x = 0.3 * rng.standard_normal((1, 2 * cfg.sample_rate)).astype(np.float32)
    enc_err = np.max(np.abs(encode(params, cfg, x, np.float32) - stream_encode(params, cfg, x, np.float32)))
    emb = rng.standard_normal((50, cfg.embed_dim)).astype(np.float32)
    dec_err = np.max(np.abs(decode(params, cfg, emb, np.float32) - stream_decode(params, cfg, emb, np.float32)))

    spe = cfg.samples_per_embedding
    enc, dec = StreamingEncoder(params, cfg), StreamingDecoder(params, cfg)
    lags = set()
    emitted = 0
    for j in range(10):
        emitted += dec.step(enc.step_samples(x[:, j * spe:(j + 1) * spe])).shape[1]
        lags.add((j + 1) * spe - emitted)
    # aggregation of one embedding plus one embedding of look-ahead
    latency = {spe + lag for lag in lags}
    full_ms = plan(full_scale_config()).latency_ms
    ok = enc_err < 1e-5 and dec_err < 1e-5 and latency == {2 * spe} and full_ms == 80.0
    verdict(3, ok, f"streaming vs batch 2 s float32: encoder {enc_err:.1e}, decoder {dec_err:.1e} (< 1e-5); "
                   f"latency {sorted(latency)[0] // spe} embeddings, full scale {full_ms:g} ms")


def test_criterion_4_rvq(verdict):
    rng = np.random.default_rng(0)
    # monotone error on trained codebooks
    cfg = RvqConfig(n_quantizers=8, vocab=32, dim=8, ema_decay=0.9, dead_code_steps=20)
    data = rng.standard_normal((4000, 8))
    books = Codebooks.empty(cfg)
    for _ in range(300):
        out = forward_train(Tensor(data[rng.choice(4000, 256)][None]), books, cfg, rng, bypass=False, depths=[8])
        ema_update(books, out.assignments, cfg, rng)
    x = rng.standard_normal((1000, 8))
    errs = [float(np.mean(np.sum(quantize_batch(x, books.centroids, r)[1] ** 2, axis=1))) for r in range(9)]
    monotone = all(b <= a for a, b in zip(errs, errs[1:]))

    n = 100_000
    r = sample_dropout_level(RvqConfig(), rng, size=n)
    masses = [np.mean(r <= 16), np.mean((r > 16) & (r <= 32)), np.mean(r > 32)]
    sig = max(abs(m - p) / np.sqrt(p * (1 - p) / n) for m, p in zip(masses, (0.5, 0.25, 0.25)))

    means = np.array([[2.0, -1.0, 0.5], [-1.5, 1.0, -2.0]])
    ecfg = RvqConfig(n_quantizers=4, vocab=2, dim=3, ema_decay=0.99, dead_code_steps=0)
    eb = Codebooks.from_centroids(np.tile(np.array([[[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]]]), (4, 1, 1)))
    for _ in range(2000):
        xb = means[rng.integers(0, 2, 64)] + 0.1 * rng.standard_normal((64, 3))
        codes, _ = quantize_batch(xb, eb.centroids, 1)
        ema_update(eb, [(0, xb, codes[:, 0])], ecfg)
    c = eb.centroids[0]
    ema_err = min(np.abs(c - means).max(), np.abs(c[::-1] - means).max())

    ok = monotone and sig < 3 and ema_err < 0.05
    verdict(4, ok, f"error monotone over depth 0..8 on 1e3 vectors ({errs[0]:.2f} -> {errs[-1]:.2f}); "
                   f"dropout masses {np.round(masses, 4).tolist()} worst {sig:.2f} sigma < 3; "
                   f"EMA means within {ema_err:.3f} < 0.05")


def test_criterion_5_rates_and_bitstream(verdict):
    cfg = full_scale_config()
    rate64, rate16 = bitrate(cfg.rvq, cfg.embedding_rate, 64), bitrate(cfg.rvq, cfg.embedding_rate, 16)
    rng = np.random.default_rng(0)
    sizes_ok = True
    for r, bps in ((64, rate64), (16, rate16)):
        h = StreamHeader(48000, 2, 960, 480, 25, r, 10, 0, bytes(16))
        data = write_stream(h, array_to_frames(rng.integers(0, 1024, (250, r))))
        sizes_ok &= len(data) - HEADER_BYTES == bps * 10 // 8
    fuzz_ok = True
    for _ in range(10_000):
        r, bits, n = int(rng.integers(1, 65)), int(rng.integers(1, 17)), int(rng.integers(0, 6))
        codes = rng.integers(0, 1 << bits, (n, r))
        h2, frames = read_stream(write_stream(StreamHeader(48000, 2, 960, 480, 25, r, bits, 0, bytes(16)),
                                              array_to_frames(codes)))
        fuzz_ok &= h2.frame_count == n and np.array_equal(frames_to_array(frames, r), codes)
    ok = rate64 == 16000 and rate16 == 4000 and sizes_ok and fuzz_ok
    verdict(5, ok, f"full scale {rate64 / 1000:g} kbps at r=64, {rate16 / 1000:g} kbps at r=16; "
                   f"10 s payload bytes match rate (+{HEADER_BYTES} B header): {sizes_ok}; 1e4 fuzz round trips: {fuzz_ok}")


def test_criterion_6_desk_training(verdict):
    res = desk_run.run(20000, progress=False)
    snr = [res["snr_db"][str(d)] for d in desk_run.DEPTHS]
    band = all(b >= a - 0.1 * abs(a) for a, b in zip(snr, snr[1:]))
    fast = res["elapsed_s"] < 7200
    drop = res["l_rec_end"] < 0.5 * res["l_rec_100"]
    verdict(6, fast and drop and band,
            f"desk 10 clips, {res['steps']} steps, batch 8: {res['elapsed_s'] / 3600:.2f} h < 2 h; "
            f"l_rec {res['l_rec_100']:.1f} -> {res['l_rec_end']:.1f} (< 50%: {drop}); "
            f"SNR dB at depths 2/4/8 = {', '.join(f'{s:.2f}' for s in snr)} (monotone within 10%: {band})")


def test_criterion_7_determinism_and_resume(verdict):
    cfg = desk_train_config(batch_size=2, example_len_s=0.16, dtype="float64", checkpoint_every=0)
    data = ClipDataset([music_clip(1.0, 16000, s) for s in range(3)], cfg.example_len)
    runs = []
    for _ in range(2):
        s = new_state(cfg)
        train(s, data, 13)
        runs.append(s)
    exact = (checkpoint_bytes(runs[0]) == checkpoint_bytes(runs[1])
             and [r.to_json() for r in runs[0].history] == [r.to_json() for r in runs[1].history])
    k = 3
    part = new_state(cfg)
    train(part, data, k)
    resumed = checkpoint_from_bytes(checkpoint_bytes(part))
    train(resumed, data, 10)
    resume_ok = ([r.to_json() for r in resumed.history] == [r.to_json() for r in runs[0].history[k:]]
                 and checkpoint_bytes(resumed) == checkpoint_bytes(runs[0]))
    verdict(7, exact and resume_ok, f"two runs bit-identical: {exact}; resume at step {k} matches the "
                                    f"unbroken run over 10 steps: {resume_ok}")


def test_criterion_8_shape_plan(verdict):
    from test_shapes import _flat, traced

    mismatches = []
    for name, cfg in (("full", full_scale_config()), ("desk", desk_config())):
        n = 4 * cfg.samples_per_embedding
        p = plan(cfg, n)
        params, enc_t, dec_t = traced(cfg, n)
        if p.network_params != count_params(params):
            mismatches.append(f"{name} params")
        for stage, (tname, si, so) in zip(p.encoder + p.decoder, enc_t + dec_t):
            if stage.name != tname or stage.input_shape != _flat(si) or stage.output_shape != _flat(so):
                mismatches.append(f"{name} {stage.name}")
        if len(p.encoder + p.decoder) != len(enc_t + dec_t):
            mismatches.append(f"{name} stage count")
    verdict(8, not mismatches, "shapes.plan matches the built full-scale and desk networks"
            + (f"; mismatches: {mismatches}" if mismatches else ""))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
