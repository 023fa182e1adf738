"""Joint GAN training: one discriminator and one generator update per step."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import config as C
from .adversary import DiscOutput, discriminate, init_discriminators
from .codec import (
    analysis,
    decoder_forward,
    decoder_layers,
    encoder_forward,
    encoder_layers,
    init_model,
    shift_for_lookahead,
    synthesis,
    trainable_weights,
)
from .losses import LossReport, disc_loss, feature_loss, gen_adv_loss, reconstruction_loss, total_generator_loss
from .rvq import Codebooks, ema_update, forward_train
from .tensor import AdamState, Tensor, adam_step, gradients, no_grad
from .wav import WavFormatError, read_wav

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """A loss term became NaN or infinite."""


class DatasetError(ValueError):
    pass


class CheckpointError(ValueError):
    """Corrupt, truncated or incompatible checkpoint."""


# -- state -----------------------------------------------------------------------------

@dataclass
class TrainState:
    cfg: C.TrainConfig
    gen: dict[str, np.ndarray]
    disc: dict[str, np.ndarray]
    books: Codebooks
    adam_g: AdamState
    adam_d: AdamState
    rng: np.random.Generator
    step: int = 0
    history: list[LossReport] = field(default_factory=list)

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)


def new_state(cfg: C.TrainConfig) -> TrainState:
    dt = np.dtype(cfg.dtype)
    gen = {k: v.astype(dt) for k, v in init_model(cfg.model, cfg.seed).items()}
    disc = {k: v.astype(dt) for k, v in
            init_discriminators(cfg.disc, cfg.model.audio_channels, cfg.seed + 1).items()}
    return TrainState(cfg, gen, disc, Codebooks.empty(cfg.model.rvq, dt),
                      AdamState(lr=cfg.lr), AdamState(lr=cfg.lr), np.random.default_rng(cfg.seed))


def generator_forward(state: TrainState, x: Tensor, gp: dict[str, Tensor]):
    cfg = state.cfg.model
    enc_w = trainable_weights(gp, encoder_layers(cfg))
    dec_w = trainable_weights(gp, decoder_layers(cfg))
    v = encoder_forward(enc_w, cfg, analysis(x, cfg))
    rq = forward_train(v, state.books, cfg.rvq, state.rng)
    y = synthesis(decoder_forward(dec_w, cfg, shift_for_lookahead(rq.v_out)), cfg)
    return y, rq


def _finite(name: str, value: float, step: int, extra: dict | None = None) -> float:
    if not math.isfinite(value):
        raise NumericError(f"non-finite {name} at step {step}: {value!r}; terms so far: {extra or {}}")
    return value


def train_step(state: TrainState, batch: np.ndarray) -> LossReport:
    """Generator forward, discriminator update, generator update, EMA codebook update."""
    cfg = state.cfg
    dt = state.dtype
    batch = np.asarray(batch, dtype=dt)
    if batch.ndim != 3 or batch.shape[1] != cfg.model.audio_channels:
        raise C.ConfigError(f"batch must be [B, {cfg.model.audio_channels}, n], got {batch.shape}")
    x = Tensor(batch)
    gp = {k: Tensor(v, requires_grad=True) for k, v in state.gen.items()}
    y, rq = generator_forward(state, x, gp)
    x_use = Tensor(batch[..., :y.shape[-1]])

    # discriminator step on a detached copy of the reconstruction
    dp = {k: Tensor(v, requires_grad=True) for k, v in state.disc.items()}
    both = discriminate(np.concatenate([x_use.data, y.data]), dp, cfg.disc)
    nb = batch.shape[0]
    l_d = disc_loss(DiscOutput([lg[:nb] for lg in both.logits], []),
                    DiscOutput([lg[nb:] for lg in both.logits], []))
    _finite("l_d", l_d.item(), state.step)
    names = list(dp)
    grads = gradients(l_d, [dp[k] for k in names])
    adam_step(state.disc, dict(zip(names, grads)), state.adam_d)

    # generator step against the updated discriminators
    dc = {k: Tensor(v) for k, v in state.disc.items()}
    with no_grad():
        real_feats = discriminate(x_use, dc, cfg.disc).features
    fake = discriminate(y, dc, cfg.disc)
    terms = {"l_d": l_d.item()}
    l_adv = gen_adv_loss(fake)
    terms["l_adv"] = _finite("l_adv", l_adv.item(), state.step, terms)
    l_feat = feature_loss(real_feats, fake.features)
    terms["l_feat"] = _finite("l_feat", l_feat.item(), state.step, terms)
    l_rec = reconstruction_loss(x_use, y, cfg.model.sample_rate, cfg.mel_windows)
    terms["l_rec"] = _finite("l_rec", l_rec.item(), state.step, terms)
    l_com = rq.commit_loss if rq.commit_loss is not None else Tensor(np.zeros((), dt))
    terms["l_com"] = _finite("l_com", l_com.item(), state.step, terms)
    total = total_generator_loss(l_adv, l_feat, l_rec, l_com, cfg.weights)
    _finite("l_total", total.item(), state.step, terms)
    names = list(gp)
    grads = gradients(total, [gp[k] for k in names])
    adam_step(state.gen, dict(zip(names, grads)), state.adam_g)

    if not rq.bypassed:
        ema_update(state.books, rq.assignments, cfg.model.rvq, state.rng)

    report = LossReport(state.step, terms["l_d"], terms["l_adv"], terms["l_feat"], terms["l_rec"],
                        terms["l_com"], total.item(), rq.bypassed)
    state.step += 1
    state.history.append(report)
    return report


# -- data --------------------------------------------------------------------------------

class ClipDataset:
    """In-memory clips with uniform random cropping."""

    def __init__(self, clips: list[np.ndarray], example_len: int):
        if not clips:
            raise DatasetError("no usable clips")
        self.clips = clips
        self.example_len = example_len

    def __len__(self) -> int:
        return len(self.clips)

    def sample(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        out = []
        for _ in range(batch_size):
            clip = self.clips[rng.integers(len(self.clips))]
            start = rng.integers(clip.shape[1] - self.example_len + 1)
            out.append(clip[:, start:start + self.example_len])
        return np.stack(out)

    def crop_offset(self, rng: np.random.Generator, index: int = 0) -> int:
        return int(rng.integers(self.clips[index].shape[1] - self.example_len + 1))


def load_dataset(directory: str | Path, sample_rate: int, audio_channels: int, example_len: int) -> ClipDataset:
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".wav") if directory.is_dir() else []
    if not files:
        raise DatasetError(f"no WAV files in {directory}")
    clips = []
    for path in files:
        try:
            rate, audio = read_wav(path)
        except WavFormatError as exc:
            warnings.warn(f"skipping malformed WAV {path.name}: {exc}")
            continue
        if rate != sample_rate:
            raise DatasetError(f"{path.name}: sample rate {rate} Hz, model expects {sample_rate} Hz")
        if audio.shape[0] != audio_channels:
            raise DatasetError(f"{path.name}: {audio.shape[0]} channels, model expects {audio_channels}")
        if audio.shape[1] < example_len:
            warnings.warn(f"skipping {path.name}: {audio.shape[1]} samples < example length {example_len}")
            continue
        clips.append(audio)
    return ClipDataset(clips, example_len)


# -- loop ----------------------------------------------------------------------------------

def train(state: TrainState, dataset: ClipDataset, steps: int,
          on_report: Callable[[LossReport], None] | None = None, log_file=None,
          checkpoint_every: int = 0, checkpoint_path: str | Path | None = None) -> TrainState:
    end = state.step + steps
    while state.step < end:
        batch = dataset.sample(state.cfg.batch_size, state.rng)
        report = train_step(state, batch)
        if log_file is not None:
            log_file.write(report.to_json() + "\n")
        if on_report is not None:
            on_report(report)
        if checkpoint_every and checkpoint_path and state.step % checkpoint_every == 0:
            save_checkpoint(state, checkpoint_path)
    return state


# -- checkpoints -----------------------------------------------------------------------------

CKPT_MAGIC = b"SCKP"
CKPT_VERSION = 1
_DIGEST = 32


def _array_items(state: TrainState) -> dict[str, np.ndarray]:
    items = {}
    for k, v in state.gen.items():
        items["gen/" + k] = v
    for k, v in state.disc.items():
        items["disc/" + k] = v
    for k, v in state.books.arrays().items():
        items["rvq/" + k] = v
    for tag, adam in (("adam_g", state.adam_g), ("adam_d", state.adam_d)):
        for k, v in adam.m.items():
            items[f"{tag}.m/{k}"] = v
        for k, v in adam.v.items():
            items[f"{tag}.v/{k}"] = v
    return items


def checkpoint_bytes(state: TrainState) -> bytes:
    items = _array_items(state)
    index, chunks, offset = [], [], 0
    for name in sorted(items):
        arr = np.ascontiguousarray(items[name])
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in "|" else arr.dtype
        raw = arr.astype(dt, copy=False).tobytes()
        index.append([name, dt.str, list(arr.shape), offset, len(raw)])
        chunks.append(raw)
        offset += len(raw)
    header = {
        "config": C.to_dict(state.cfg),
        "step": state.step,
        "rng": state.rng.bit_generator.state,
        "adam": {tag: {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "step": a.step}
                 for tag, a in (("adam_g", state.adam_g), ("adam_d", state.adam_d))},
        "arrays": index,
    }
    hjson = C.canonical_json(header).encode()
    payload = b"".join(chunks)
    body = (CKPT_MAGIC + struct.pack("<B", CKPT_VERSION) + bytes.fromhex(C.config_hash(state.cfg))
            + struct.pack("<I", len(hjson)) + hjson + struct.pack("<Q", len(payload)) + payload)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    data = checkpoint_bytes(state)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def checkpoint_from_bytes(data: bytes) -> TrainState:
    if len(data) < 4 + 1 + 32 + 4 + 8 + _DIGEST or data[:4] != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint (bad magic or too short)")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint integrity check failed")
    (version,) = struct.unpack_from("<B", body, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    stored_hash = body[5:37].hex()
    (hlen,) = struct.unpack_from("<I", body, 37)
    header = json.loads(body[41:41 + hlen])
    pos = 41 + hlen
    (plen,) = struct.unpack_from("<Q", body, pos)
    payload = body[pos + 8:pos + 8 + plen]
    if len(payload) != plen or pos + 8 + plen != len(body):
        raise CheckpointError("checkpoint payload length mismatch")
    cfg = C.train_from_dict(header["config"])
    if C.config_hash(cfg) != stored_hash:
        raise CheckpointError("stored config hash does not match stored config")
    arrays = {}
    for name, dt, shape, off, nbytes in header["arrays"]:
        arrays[name] = np.frombuffer(payload, dtype=np.dtype(dt), count=int(np.prod(shape, dtype=np.int64)),
                                     offset=off).reshape(shape).copy()
    gen = {k[4:]: v for k, v in arrays.items() if k.startswith("gen/")}
    disc = {k[5:]: v for k, v in arrays.items() if k.startswith("disc/")}
    books = Codebooks(**{k[4:]: v for k, v in arrays.items() if k.startswith("rvq/")})
    adams = {}
    for tag in ("adam_g", "adam_d"):
        a = AdamState(**header["adam"][tag])
        a.m = {k[len(tag) + 3:]: v for k, v in arrays.items() if k.startswith(tag + ".m/")}
        a.v = {k[len(tag) + 3:]: v for k, v in arrays.items() if k.startswith(tag + ".v/")}
        adams[tag] = a
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng"]
    return TrainState(cfg, gen, disc, books, adams["adam_g"], adams["adam_d"], rng, header["step"])


def load_checkpoint(path: str | Path, expect: C.TrainConfig | None = None) -> TrainState:
    """Load a checkpoint; with ``expect``, refuse if its config hash differs."""
    state = checkpoint_from_bytes(Path(path).read_bytes())
    if expect is not None and C.config_hash(expect) != C.config_hash(state.cfg):
        raise CheckpointError("config hash mismatch: checkpoint was trained with a different configuration")
    return state
