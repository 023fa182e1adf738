"""Closed-form shapes, parameter counts and latency, computed without building a network."""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import ConfigError, DiscConfig, ModelConfig


@dataclass(frozen=True)
class StagePlan:
    name: str
    input_shape: tuple[int, ...]    # (channels, T, F); channel axis includes audio channels once fused
    output_shape: tuple[int, ...]
    params: int


@dataclass
class ShapePlan:
    freq_bins: int
    frames: int
    embeddings: int
    embedding_rate: float
    encoder: list[StagePlan] = field(default_factory=list)
    decoder: list[StagePlan] = field(default_factory=list)
    rvq_params: int = 0
    latency_embeddings: int = 2
    latency_ms: float = 0.0

    @property
    def encoder_params(self) -> int:
        return sum(s.params for s in self.encoder)

    @property
    def decoder_params(self) -> int:
        return sum(s.params for s in self.decoder)

    @property
    def network_params(self) -> int:
        return self.encoder_params + self.decoder_params

    @property
    def total_params(self) -> int:
        return self.network_params + self.rvq_params

    def summary(self) -> str:
        lines = [f"freq bins {self.freq_bins}, {self.frames} frames -> {self.embeddings} embeddings "
                 f"({self.embedding_rate:g}/s), latency {self.latency_embeddings} embeddings "
                 f"= {self.latency_ms:g} ms"]
        for s in self.encoder + self.decoder:
            lines.append(f"  {s.name:10s} {str(s.input_shape):22s} -> {str(s.output_shape):22s} {s.params:>10,d}")
        lines.append(f"encoder {self.encoder_params:,d}  decoder {self.decoder_params:,d}  "
                     f"network {self.network_params:,d}  rvq {self.rvq_params:,d}  total {self.total_params:,d}")
        return "\n".join(lines)


def _wn_conv_params(cin: int, cout: int, kt: int, kf: int) -> int:
    # kernel + weight-norm gain per output channel + bias
    return cin * cout * kt * kf + 2 * cout


def plan(cfg: ModelConfig, n_samples: int | None = None) -> ShapePlan:
    """Shapes for one example of ``n_samples`` samples (default: 32 embeddings)."""
    a = cfg.audio_channels
    hop = cfg.stft.hop
    f0 = cfg.stft.window_len // 2
    spe = hop * cfg.frames_per_embedding
    if n_samples is None:
        n_samples = 32 * spe
    t0 = n_samples // spe * cfg.frames_per_embedding
    if t0 == 0:
        raise ConfigError(f"need at least {spe} samples")

    tt, ff = 1, 1
    for i, st in enumerate(cfg.stages):
        tt *= st.time_stride
        ff *= st.freq_stride
        if f0 % ff:
            raise ConfigError(f"stage {i}: {f0} bins not divisible by cumulative frequency stride {ff}")
    if tt != cfg.frames_per_embedding:
        raise ConfigError(f"stage {len(cfg.stages) - 1}: time strides multiply to {tt}, "
                          f"need {cfg.frames_per_embedding} frames per embedding")
    fuse = cfg.fusion_stage_index

    out = ShapePlan(f0, t0, t0 // tt, cfg.sample_rate / spe)
    ce = [st.channel_mult * cfg.enc_base_depth for st in cfg.stages]
    cd = [st.channel_mult * cfg.dec_base_depth for st in cfg.stages]

    # encoder
    c, t, f = 2, t0, f0
    for i, st in enumerate(cfg.stages):
        kt, kf = st.kernel
        if i == fuse:
            c *= a
        t2, f2 = t // st.time_stride, f // st.freq_stride
        mult = a if i < fuse else 1
        out.encoder.append(StagePlan(f"enc.{i}", (mult * c, t, f), (mult * ce[i], t2, f2),
                                     _wn_conv_params(c, ce[i], kt, kf)))
        c, t, f = ce[i], t2, f2
    out.encoder.append(StagePlan("enc.head", (c, t, f), (cfg.embed_dim, t, 1),
                                 _wn_conv_params(c, cfg.embed_dim, 1, f)))

    # decoder: embeddings plus the flush step
    t = t0 // tt + cfg.decoder_lookahead_embeddings
    c, f = cd[-1], f
    out.decoder.append(StagePlan("dec.head", (cfg.embed_dim, t, 1), (c, t, f),
                                 cfg.embed_dim * c * f + 2 * c))
    for i in range(len(cfg.stages) - 1, -1, -1):
        st = cfg.stages[i]
        kt, kf = st.kernel
        cout = 2 if i == 0 else cd[i - 1] * (a if i == fuse else 1)
        t2, f2 = t * st.time_stride, f * st.freq_stride
        mult = a if i < fuse else 1
        name = "dec.out" if i == 0 else f"dec.{i}"
        out.decoder.append(StagePlan(name, (mult * cd[i], t, f), (mult * cout, t2, f2),
                                     _wn_conv_params(cd[i], cout, kt, kf)))
        t, f = t2, f2

    r = cfg.rvq
    out.rvq_params = r.n_quantizers * r.vocab * r.dim
    # one embedding of frame aggregation in the encoder plus one of decoder look-ahead
    out.latency_embeddings = 1 + cfg.decoder_lookahead_embeddings
    out.latency_ms = out.latency_embeddings * 1000.0 * spe / cfg.sample_rate
    return out


def disc_plan(cfg: DiscConfig, audio_channels: int, n_samples: int) -> list[list[StagePlan]]:
    """Per-scale discriminator shapes for an ``n_samples`` input (symmetric padding)."""
    scales = []
    ch = [st.channel_mult * cfg.base_depth for st in cfg.stages]
    for w in cfg.window_lengths:
        hop = w // 2
        t = (n_samples - w) // hop + 1
        f = w // 2
        c = 3
        stages = []
        for i, st in enumerate(cfg.stages):
            kt, kf = st.kernel
            if i == cfg.fusion_stage_index:
                c *= audio_channels
            t2 = (t + 2 * ((kt - 1) // 2) - kt) // st.time_stride + 1
            f2 = (f + 2 * ((kf - 1) // 2) - kf) // st.freq_stride + 1
            mult = audio_channels if i < cfg.fusion_stage_index else 1
            stages.append(StagePlan(str(i), (mult * c, t, f), (mult * ch[i], t2, f2),
                                    c * ch[i] * kt * kf + ch[i] + 2 * ch[i]))
            c, t, f = ch[i], t2, f2
        if cfg.fusion_stage_index >= len(cfg.stages):
            c *= audio_channels
        kt, kf = cfg.head_kernel
        t2 = t + 2 * ((kt - 1) // 2) - kt + 1
        f2 = f + 2 * ((kf - 1) // 2) - kf + 1
        stages.append(StagePlan("head", (c, t, f), (1, t2, f2), c * kt * kf + 1))
        scales.append(stages)
    return scales
