"""Configuration dataclasses and the presets used throughout the package."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Inconsistent or unsupported configuration."""


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 960
    hop: int = 480

    def __post_init__(self):
        if self.window_len % 2 or self.hop * 2 != self.window_len:
            raise ConfigError(f"hop must be window_len/2, got window {self.window_len}, hop {self.hop}")

    @property
    def n_bins(self) -> int:
        # DC kept, Nyquist dropped
        return self.window_len // 2


@dataclass(frozen=True)
class Stage:
    time_stride: int
    freq_stride: int
    channel_mult: int
    kernel: tuple[int, int]


@dataclass(frozen=True)
class RvqConfig:
    n_quantizers: int = 64
    vocab: int = 1024
    dim: int = 256
    ema_decay: float = 0.99
    bypass_rate: float = 0.5
    dropout_range_weights: tuple[float, float, float] = (4.0, 2.0, 1.0)
    dead_code_steps: int = 200

    def __post_init__(self):
        if self.n_quantizers % 4:
            raise ConfigError(f"number of quantizers must be divisible by 4, got {self.n_quantizers}")
        if self.vocab < 2:
            raise ConfigError("vocab must be >= 2")
        if not 0.0 <= self.bypass_rate <= 1.0:
            raise ConfigError(f"bypass_rate must lie in [0, 1], got {self.bypass_rate}")

    @property
    def vocab_bits(self) -> int:
        bits = int(round(math.log2(self.vocab)))
        if 2 ** bits != self.vocab:
            raise ConfigError(f"vocab {self.vocab} is not a power of two")
        return bits


@dataclass(frozen=True)
class ModelConfig:
    sample_rate: int = 48000
    audio_channels: int = 2
    stft: StftConfig = StftConfig()
    embed_dim: int = 256
    frames_per_embedding: int = 4
    enc_base_depth: int = 32
    dec_base_depth: int = 64
    stages: tuple[Stage, ...] = ()
    fusion_stage_index: int = 4
    decoder_lookahead_embeddings: int = 1
    rvq: RvqConfig = RvqConfig()

    @property
    def embedding_rate(self) -> float:
        return self.sample_rate / (self.stft.hop * self.frames_per_embedding)

    @property
    def samples_per_embedding(self) -> int:
        return self.stft.hop * self.frames_per_embedding

    def validate(self) -> "ModelConfig":
        if not self.stages:
            raise ConfigError("stage list is empty")
        if not 0 < self.fusion_stage_index < len(self.stages):
            raise ConfigError(f"fusion_stage_index must lie in (0, {len(self.stages)}), "
                              f"got {self.fusion_stage_index}")
        if self.decoder_lookahead_embeddings != 1:
            raise ConfigError("only a one-embedding decoder look-ahead is supported")
        if self.rvq.dim != self.embed_dim:
            raise ConfigError(f"rvq.dim {self.rvq.dim} != embed_dim {self.embed_dim}")
        t = 1
        for i, st in enumerate(self.stages):
            kt, kf = st.kernel
            if kt < st.time_stride or kf < st.freq_stride:
                raise ConfigError(f"stage {i}: kernel {st.kernel} smaller than stride "
                                  f"{(st.time_stride, st.freq_stride)}")
            t *= st.time_stride
        if t != self.frames_per_embedding:
            raise ConfigError(f"time strides multiply to {t}, expected frames_per_embedding="
                              f"{self.frames_per_embedding}")
        f = self.stft.n_bins
        for i, st in enumerate(self.stages):
            if f % st.freq_stride:
                raise ConfigError(f"stage {i}: {f} frequency bins not divisible by stride {st.freq_stride}")
            f //= st.freq_stride
        return self


@dataclass(frozen=True)
class DiscConfig:
    window_lengths: tuple[int, ...] = (128, 256, 512, 1024, 2048, 4096)
    base_depth: int = 32
    stages: tuple[Stage, ...] = ()
    head_kernel: tuple[int, int] = (3, 3)
    fusion_stage_index: int = 2
    slope: float = 0.2


@dataclass(frozen=True)
class LossWeights:
    adv: float = 1.0
    feat: float = 100.0
    rec: float = 1.0
    com: float = 1.0

    def __post_init__(self):
        if min(self.adv, self.feat, self.rec, self.com) < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    disc: DiscConfig
    weights: LossWeights = LossWeights()
    mel_windows: tuple[int, ...] = (64, 128, 256, 512, 1024, 2048)
    steps: int = 20000
    batch_size: int = 8
    example_len_s: float = 1.28
    lr: float = 1e-4
    seed: int = 0
    dataset_dir: str = ""
    checkpoint_every: int = 1000
    checkpoint_path: str = "checkpoint.ckpt"
    log_path: str = ""
    dtype: str = "float64"

    @property
    def example_len(self) -> int:
        n = self.example_len_s * self.model.sample_rate
        if abs(n - round(n)) > 1e-6 or round(n) % self.model.stft.hop:
            raise ConfigError(f"example length {n} samples is not a multiple of hop {self.model.stft.hop}")
        return int(round(n))


GENERATOR_FULL_STAGES = (
    Stage(1, 1, 1, (3, 3)),
    Stage(1, 2, 1, (3, 4)),
    Stage(1, 2, 2, (3, 4)),
    Stage(2, 2, 4, (4, 4)),
    Stage(2, 2, 8, (4, 4)),
    Stage(1, 2, 8, (3, 4)),
)

DISC_STAGES = (
    Stage(1, 1, 1, (3, 3)),
    Stage(2, 2, 1, (3, 4)),
    Stage(2, 2, 2, (3, 4)),
    Stage(2, 2, 4, (3, 4)),
    Stage(1, 1, 4, (3, 3)),
)


def full_scale_config() -> ModelConfig:
    """48 kHz stereo, 960/480 STFT, 64x1024 RVQ, 256-dim embeddings."""
    return ModelConfig(stages=GENERATOR_FULL_STAGES, fusion_stage_index=4).validate()


def full_scale_disc() -> DiscConfig:
    return DiscConfig(stages=DISC_STAGES)


def desk_config(audio_channels: int = 1) -> ModelConfig:
    """16 kHz, 320/160 STFT (160 bins), three stages, 64-dim embeddings, R=8."""
    stages = (
        Stage(1, 2, 1, (3, 4)),
        Stage(2, 2, 2, (4, 4)),
        Stage(2, 2, 4, (4, 4)),
    )
    return ModelConfig(
        sample_rate=16000,
        audio_channels=audio_channels,
        stft=StftConfig(320, 160),
        embed_dim=64,
        enc_base_depth=8,
        dec_base_depth=16,
        stages=stages,
        fusion_stage_index=2,
        rvq=RvqConfig(n_quantizers=8, vocab=1024, dim=64),
    ).validate()


def desk_disc(base_depth: int = 4) -> DiscConfig:
    return DiscConfig(window_lengths=(64, 128, 256, 512, 1024), base_depth=base_depth, stages=DISC_STAGES)


def tiny_config(audio_channels: int = 1) -> ModelConfig:
    """Very small model for gradient checks and fast unit tests."""
    stages = (
        Stage(1, 2, 1, (2, 2)),
        Stage(2, 2, 1, (2, 2)),
        Stage(2, 2, 2, (2, 2)),
    )
    return ModelConfig(
        sample_rate=8000,
        audio_channels=audio_channels,
        stft=StftConfig(32, 16),
        embed_dim=4,
        enc_base_depth=2,
        dec_base_depth=2,
        stages=stages,
        fusion_stage_index=1,
        rvq=RvqConfig(n_quantizers=4, vocab=4, dim=4),
    ).validate()


def tiny_disc() -> DiscConfig:
    stages = (
        Stage(1, 1, 1, (3, 3)),
        Stage(2, 2, 1, (3, 4)),
        Stage(1, 1, 2, (3, 3)),
    )
    return DiscConfig(window_lengths=(16, 32), base_depth=2, stages=stages, fusion_stage_index=2)


def desk_train_config(**overrides) -> TrainConfig:
    base = TrainConfig(model=desk_config(), disc=desk_disc(), steps=20000, batch_size=8)
    return dataclasses.replace(base, **overrides)


def tiny_train_config(**overrides) -> TrainConfig:
    base = TrainConfig(model=tiny_config(), disc=tiny_disc(), steps=200, batch_size=2, example_len_s=0.064,
                       mel_windows=(16, 32, 64))
    return dataclasses.replace(base, **overrides)


def full_train_config(**overrides) -> TrainConfig:
    base = TrainConfig(model=full_scale_config(), disc=full_scale_disc(), batch_size=128, steps=2_000_000)
    return dataclasses.replace(base, **overrides)


# -- serialization ---------------------------------------------------------------

def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _stages_from(items) -> tuple[Stage, ...]:
    return tuple(Stage(s["time_stride"], s["freq_stride"], s["channel_mult"], tuple(s["kernel"]))
                 for s in items)


def model_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    d["stft"] = StftConfig(**d["stft"])
    d["stages"] = _stages_from(d["stages"])
    rvq = dict(d["rvq"])
    rvq["dropout_range_weights"] = tuple(rvq["dropout_range_weights"])
    d["rvq"] = RvqConfig(**rvq)
    return ModelConfig(**d).validate()


def disc_from_dict(d: dict) -> DiscConfig:
    d = dict(d)
    d["window_lengths"] = tuple(d["window_lengths"])
    d["stages"] = _stages_from(d["stages"])
    d["head_kernel"] = tuple(d["head_kernel"])
    return DiscConfig(**d)


def train_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["model"] = model_from_dict(d["model"])
    d["disc"] = disc_from_dict(d["disc"])
    d["weights"] = LossWeights(**d["weights"])
    d["mel_windows"] = tuple(d["mel_windows"])
    return TrainConfig(**d)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: TrainConfig) -> str:
    """Hash of everything that must match for a checkpoint to be resumable."""
    d = to_dict(cfg)
    for k in ("steps", "dataset_dir", "checkpoint_every", "checkpoint_path", "log_path"):
        d.pop(k)
    return hashlib.sha256(canonical_json(d).encode()).hexdigest()


# -- flat key/value config files ---------------------------------------------------

_PRESETS = {
    "desk": desk_train_config,
    "full": full_train_config,
    "tiny": tiny_train_config,
}


def _coerce(value: str, current):
    if isinstance(current, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        parts = [p for p in value.replace(",", " ").split() if p]
        if current and isinstance(current[0], float):
            return tuple(float(p) for p in parts)
        return tuple(int(p) for p in parts)
    return value


def parse_config_text(text: str) -> TrainConfig:
    """Parse ``key = value`` lines into a :class:`TrainConfig`.

    ``preset`` selects the base (``desk``, ``full`` or ``tiny``). Dotted keys reach into
    nested sections: ``model.*``, ``model.rvq.*``, ``model.stft.*``,
    ``disc.*`` and ``weights.*``. Lines starting with ``#`` are comments.
    """
    pairs: list[tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        pairs.append((k, v))
    preset = dict(pairs).get("preset", "desk")
    if preset not in _PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(_PRESETS)}")
    cfg = _PRESETS[preset]()
    if "model.audio_channels" in dict(pairs) and preset in ("desk", "tiny"):
        maker = desk_config if preset == "desk" else tiny_config
        cfg = dataclasses.replace(cfg, model=maker(int(dict(pairs)["model.audio_channels"])))
    for key, value in pairs:
        if key == "preset":
            continue
        cfg = _set_path(cfg, key.split("."), value)
    cfg.model.validate()
    return cfg


def _set_path(obj, path: list[str], value: str):
    name = path[0]
    if not dataclasses.is_dataclass(obj) or name not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key {'.'.join(path)!r}")
    current = getattr(obj, name)
    if len(path) > 1:
        return dataclasses.replace(obj, **{name: _set_path(current, path[1:], value)})
    if dataclasses.is_dataclass(current) or (isinstance(current, tuple) and current
                                             and dataclasses.is_dataclass(current[0])):
        raise ConfigError(f"config key {name!r} is a section, not a value")
    return dataclasses.replace(obj, **{name: _coerce(value, current)})


def load_config_file(path: str | Path) -> TrainConfig:
    return parse_config_text(Path(path).read_text())
