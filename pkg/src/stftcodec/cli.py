"""Command-line front end: train, encode, decode, eval, info.

Exit codes: 0 success, 2 usage error, 3 data or format error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .bitstream import StreamError, array_to_frames, frames_to_array, read_stream, write_stream
from .losses import reconstruction_loss
from .model import CodecModel
from .rvq import CodeError, bitrate, depth_for_bitrate
from .shapes import plan
from .tensor import no_grad
from .trainer import (
    CheckpointError,
    DatasetError,
    NumericError,
    load_checkpoint,
    load_dataset,
    new_state,
    save_checkpoint,
    train,
)
from .wav import WavFormatError, read_wav, write_wav

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class ModelMismatchError(Exception):
    pass


def _load_model(path: str) -> CodecModel:
    return CodecModel.from_state(load_checkpoint(path))


def _read_input(model: CodecModel, path: str) -> np.ndarray:
    rate, audio = read_wav(path)
    cfg = model.cfg
    if rate != cfg.sample_rate:
        raise WavFormatError(f"{path}: sample rate {rate} Hz, but the model runs at {cfg.sample_rate} Hz; "
                             f"resample the input to {cfg.sample_rate} Hz")
    if audio.shape[0] != cfg.audio_channels:
        raise WavFormatError(f"{path}: {audio.shape[0]} channel(s), but the model expects "
                             f"{cfg.audio_channels}; convert the file to {cfg.audio_channels} channel(s)")
    return audio


def _depth(model: CodecModel, args) -> int:
    rvq = model.cfg.rvq
    if args.bitrate_kbps is not None:
        return depth_for_bitrate(rvq, model.cfg.embedding_rate, args.bitrate_kbps)
    if args.depth is None:
        return rvq.n_quantizers
    if not 1 <= args.depth <= rvq.n_quantizers:
        raise C.ConfigError(f"depth {args.depth} is not available; valid depths: 1..{rvq.n_quantizers}")
    return args.depth


def cmd_train(args) -> int:
    cfg = C.load_config_file(args.config)
    if args.steps is not None:
        cfg = C.dataclasses.replace(cfg, steps=args.steps)
    data_dir = Path(args.data or cfg.dataset_dir)
    if not data_dir.is_absolute() and not args.data:
        data_dir = Path(args.config).parent / data_dir
    ckpt = Path(args.checkpoint or cfg.checkpoint_path)
    if args.resume:
        state = load_checkpoint(args.resume, expect=cfg)
    else:
        state = new_state(cfg)
    dataset = load_dataset(data_dir, cfg.model.sample_rate, cfg.model.audio_channels, cfg.example_len)
    log_path = args.log or cfg.log_path
    remaining = max(0, cfg.steps - state.step)
    log_file = open(log_path, "a") if log_path else None
    try:
        def report(r):
            if not log_file:
                print(r.to_json(), flush=True)
        train(state, dataset, remaining, on_report=report, log_file=log_file,
              checkpoint_every=cfg.checkpoint_every, checkpoint_path=ckpt)
    finally:
        if log_file:
            log_file.close()
    save_checkpoint(state, ckpt)
    print(f"saved {ckpt} at step {state.step}", file=sys.stderr)
    return EXIT_OK


def cmd_encode(args) -> int:
    model = _load_model(args.checkpoint)
    r = _depth(model, args)
    audio = _read_input(model, args.wav_in)
    codes = model.encode_codes(audio, r, streaming=args.streaming)
    data = write_stream(model.header(r), array_to_frames(codes))
    Path(args.stream_out).write_bytes(data)
    return EXIT_OK


def _stream_codes(model: CodecModel, path: str):
    header, frames = read_stream(Path(path).read_bytes())
    if header.model_id != model.model_id:
        raise ModelMismatchError(f"{path} was encoded with model {header.model_id.hex()}, "
                                 f"checkpoint is model {model.model_id.hex()}; refusing to decode")
    return header, frames_to_array(frames, header.r)


def cmd_decode(args) -> int:
    model = _load_model(args.checkpoint)
    header, codes = _stream_codes(model, args.stream_in)
    audio = model.decode_codes(codes, streaming=args.streaming)
    write_wav(args.wav_out, header.sample_rate, audio, args.format)
    return EXIT_OK


def snr_db(ref: np.ndarray, est: np.ndarray) -> np.ndarray:
    """Per-channel SNR in dB of ``est`` against ``ref`` ([A, n] each)."""
    num = np.sum(ref * ref, axis=-1)
    den = np.sum((ref - est) ** 2, axis=-1)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.maximum(num, 1e-300) / np.maximum(den, 1e-300))


def evaluate(model: CodecModel, audio: np.ndarray, depths, mel_windows) -> list[dict]:
    rows = []
    for r in depths:
        y = model.roundtrip(audio, r).astype(np.float64)
        x = audio[:, :y.shape[1]]
        with no_grad():
            mel = reconstruction_loss(x, y, model.cfg.sample_rate, mel_windows).item()
        snr = snr_db(x, y)
        rows.append({"depth": r, "kbps": bitrate(model.cfg.rvq, model.cfg.embedding_rate, r) / 1000,
                     "mel_distance": mel, "snr_db": [float(s) for s in snr], "snr_db_mean": float(np.mean(snr))})
    return rows


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    model = CodecModel.from_state(state)
    audio = _read_input(model, args.wav_in)
    try:
        depths = [int(d) for d in args.depths.replace(",", " ").split()]
    except ValueError as exc:
        raise UsageError(f"--depths must be a list of integers: {exc}") from exc
    for r in depths:
        if not 1 <= r <= model.cfg.rvq.n_quantizers:
            raise C.ConfigError(f"depth {r} is not available; valid depths: 1..{model.cfg.rvq.n_quantizers}")
    for row in evaluate(model, audio, depths, state.cfg.mel_windows):
        print(json.dumps(row), flush=True)
    return EXIT_OK


def cmd_info(args) -> int:
    if args.model:
        src = args.model
        if src.endswith((".txt", ".cfg", ".conf")):
            cfg = C.load_config_file(src).model
        else:
            cfg = load_checkpoint(src).cfg.model
        print(plan(cfg).summary())
        return EXIT_OK
    if not args.stream_in:
        raise UsageError("info needs a stream file or --model")
    header, frames = read_stream(Path(args.stream_in).read_bytes())
    out = {"version": header.version, "sample_rate": header.sample_rate, "channels": header.audio_channels,
           "window_len": header.window_len, "hop": header.hop, "embedding_rate": header.embedding_rate,
           "r": header.r, "vocab_bits": header.vocab_bits, "frame_count": header.frame_count,
           "kbps": header.bitrate / 1000, "model_id": header.model_id.hex(),
           "duration_s": header.frame_count / header.embedding_rate if header.embedding_rate else 0.0}
    print(json.dumps(out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stftcodec", description="STFT-domain neural audio codec")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a key = value config file")
    t.add_argument("config")
    t.add_argument("--data", help="directory of WAV files (overrides dataset_dir)")
    t.add_argument("--steps", type=int, help="total step count (overrides steps)")
    t.add_argument("--checkpoint", help="output checkpoint path (overrides checkpoint_path)")
    t.add_argument("--resume", help="resume from this checkpoint")
    t.add_argument("--log", help="append LossReport JSON lines here instead of stdout")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", help="WAV -> SPST stream")
    e.add_argument("checkpoint")
    e.add_argument("wav_in")
    e.add_argument("stream_out")
    g = e.add_mutually_exclusive_group()
    g.add_argument("--bitrate-kbps", type=float)
    g.add_argument("--depth", type=int)
    e.add_argument("--streaming", action="store_true", help="encode embedding by embedding")
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="SPST stream -> WAV")
    d.add_argument("checkpoint")
    d.add_argument("stream_in")
    d.add_argument("wav_out")
    d.add_argument("--streaming", action="store_true")
    d.add_argument("--format", choices=("float32", "pcm16"), default="float32")
    d.set_defaults(func=cmd_decode)

    v = sub.add_parser("eval", help="mel distance and SNR per depth, as JSON lines")
    v.add_argument("checkpoint")
    v.add_argument("wav_in")
    v.add_argument("--depths", default="1,2,4,8")
    v.set_defaults(func=cmd_eval)

    i = sub.add_parser("info", help="print a stream header, or a model's shape plan with --model")
    i.add_argument("stream_in", nargs="?")
    i.add_argument("--model", help="checkpoint or config file")
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (C.ConfigError, StreamError, WavFormatError, CheckpointError, DatasetError, CodeError,
            ModelMismatchError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
