"""Encoder and decoder networks on STFT planes, batch and streaming.

Audio channels are folded into the batch axis in the outer layers, so every
channel sees the same parameters without interacting (delayed fusion in the
encoder, early splitting in the decoder). Causality in time comes from the
padding geometry: see :meth:`PadSpec.causal` and :meth:`PadSpec.causal_transpose`.

Framing: the encoder prepends one hop of zeros, so ``n`` samples give
``n // hop`` frames and frame ``t`` ends at sample ``(t + 1) * hop``. The
decoder network emits 4 frames per embedding; the first 3 frames of its output
are discarded, which places the frames emitted at network step ``m`` at
absolute indices ``4m - 3 .. 4m``. Together with the one-embedding input shift
the reconstruction lines up with the input sample-for-sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, ModelConfig
from .dsp import hann, istft_planes, overlap_sum, stft_planes
from .tensor import (
    PadSpec,
    Tensor,
    as_tensor,
    concat,
    conv2d,
    conv2d_raw,
    conv2d_transpose,
    conv2d_transpose_raw,
    elu,
    no_grad,
    pad,
    reshape,
    transpose,
    weight_norm,
)


@dataclass(frozen=True)
class Layer:
    name: str
    transposed: bool
    cin: int
    cout: int
    kernel: tuple[int, int]
    stride: tuple[int, int]
    pad: PadSpec
    preact: bool
    per_channel: bool

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        if self.transposed:
            return (self.cin, self.cout) + self.kernel
        return (self.cout, self.cin) + self.kernel

    @property
    def norm_axis(self) -> int:
        return 1 if self.transposed else 0

    @property
    def n_params(self) -> int:
        return int(np.prod(self.weight_shape)) + 2 * self.cout


def final_freq_bins(cfg: ModelConfig) -> int:
    f = cfg.stft.n_bins
    for st in cfg.stages:
        f //= st.freq_stride
    return f


def encoder_layers(cfg: ModelConfig) -> list[Layer]:
    cfg.validate()
    a, fuse = cfg.audio_channels, cfg.fusion_stage_index
    ch = [st.channel_mult * cfg.enc_base_depth for st in cfg.stages]
    layers = []
    for i, st in enumerate(cfg.stages):
        cin = 2 if i == 0 else (a * ch[i - 1] if i == fuse else ch[i - 1])
        stride = (st.time_stride, st.freq_stride)
        layers.append(Layer(f"enc.{i}", False, cin, ch[i], st.kernel, stride,
                            PadSpec.causal(st.kernel, stride), preact=i > 0, per_channel=i < fuse))
    fl = final_freq_bins(cfg)
    layers.append(Layer("enc.head", False, ch[-1], cfg.embed_dim, (1, fl), (1, 1), PadSpec.valid(),
                        preact=True, per_channel=False))
    return layers


def decoder_layers(cfg: ModelConfig) -> list[Layer]:
    cfg.validate()
    a, fuse = cfg.audio_channels, cfg.fusion_stage_index
    ch = [st.channel_mult * cfg.dec_base_depth for st in cfg.stages]
    fl = final_freq_bins(cfg)
    layers = [Layer("dec.head", True, cfg.embed_dim, ch[-1], (1, fl), (1, 1), PadSpec.valid(),
                    preact=False, per_channel=False)]
    for i in range(len(cfg.stages) - 1, -1, -1):
        st = cfg.stages[i]
        stride = (st.time_stride, st.freq_stride)
        if i == 0:
            name, cout = "dec.out", 2
        else:
            name, cout = f"dec.{i}", (a * ch[i - 1] if i == fuse else ch[i - 1])
        up = stride != (1, 1)
        padspec = PadSpec.causal_transpose(st.kernel, stride) if up else PadSpec.causal(st.kernel, stride)
        layers.append(Layer(name, up, ch[i], cout, st.kernel, stride, padspec,
                            preact=True, per_channel=i < fuse))
    return layers


# -- parameters ----------------------------------------------------------------------

def init_model(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Fan-in scaled uniform kernels (variance 2 / fan_in), zero biases, weight-norm gains at the initial norms."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for layer in encoder_layers(cfg) + decoder_layers(cfg):
        fan_in = layer.cin * layer.kernel[0] * layer.kernel[1]
        bound = np.sqrt(6.0 / fan_in)
        v = rng.uniform(-bound, bound, size=layer.weight_shape)
        red = tuple(ax for ax in range(4) if ax != layer.norm_axis)
        params[layer.name + ".v"] = v
        params[layer.name + ".g"] = np.sqrt(np.sum(v * v, axis=red))
        params[layer.name + ".b"] = np.zeros(layer.cout)
    return params


def count_params(params: dict[str, np.ndarray], prefix: str = "") -> int:
    return int(sum(p.size for k, p in params.items() if k.startswith(prefix)))


def effective_weights(params: dict, layers: list[Layer], dtype=np.float64) -> dict[str, tuple[Tensor, Tensor]]:
    """Weight-normalized kernels as constant tensors (inference)."""
    out = {}
    with no_grad():
        for layer in layers:
            w = weight_norm(params[layer.name + ".v"], params[layer.name + ".g"], layer.norm_axis)
            out[layer.name] = (Tensor(w.data.astype(dtype)), Tensor(np.asarray(params[layer.name + ".b"], dtype)))
    return out


def trainable_weights(params: dict[str, Tensor], layers: list[Layer]) -> dict[str, tuple[Tensor, Tensor]]:
    """Weight-normalized kernels recorded on the graph (training)."""
    return {layer.name: (weight_norm(params[layer.name + ".v"], params[layer.name + ".g"], layer.norm_axis),
                         params[layer.name + ".b"])
            for layer in layers}


# -- batch forward ---------------------------------------------------------------------

def _apply(layer: Layer, x: Tensor, w: Tensor, b: Tensor, out_size=None) -> Tensor:
    if layer.preact:
        x = elu(x)
    if layer.transposed:
        return conv2d_transpose(x, w, b, layer.stride, layer.pad, out_size)
    return conv2d(x, w, b, layer.stride, layer.pad)


def encoder_forward(weights: dict, cfg: ModelConfig, planes: Tensor, trace: list | None = None) -> Tensor:
    """planes [N, A, 2, T, F] -> embeddings [N, T // 4, D].

    ``trace`` collects ``(layer name, input shape, output shape)`` per layer.
    """
    planes = as_tensor(planes)
    n, a = planes.shape[:2]
    if a != cfg.audio_channels:
        raise ConfigError(f"model expects {cfg.audio_channels} audio channels, got {a}")
    x = reshape(planes, (n * a,) + planes.shape[2:])
    for i, layer in enumerate(encoder_layers(cfg)):
        if i == cfg.fusion_stage_index:
            x = reshape(x, (n, a * x.shape[1]) + x.shape[2:])
        shape_in = x.shape
        x = _apply(layer, x, *weights[layer.name])
        if trace is not None:
            trace.append((layer.name, shape_in, x.shape))
    # [N, D, T_emb, 1] -> [N, T_emb, D]
    return transpose(reshape(x, x.shape[:3]), (0, 2, 1))


def decoder_forward(weights: dict, cfg: ModelConfig, emb: Tensor, trace: list | None = None) -> Tensor:
    """embeddings [N, T, D] -> planes [N, A, 2, 4T, F] (network time base, no shift)."""
    emb = as_tensor(emb)
    n, t, d = emb.shape
    if d != cfg.embed_dim:
        raise ConfigError(f"embedding dim {d} != model embed_dim {cfg.embed_dim}")
    a = cfg.audio_channels
    x = reshape(transpose(emb, (0, 2, 1)), (n, d, t, 1))
    for layer in decoder_layers(cfg):
        out_size = None
        if layer.transposed:
            out_size = (x.shape[2] * layer.stride[0],
                        layer.kernel[1] if layer.name == "dec.head" else x.shape[3] * layer.stride[1])
        shape_in = x.shape
        x = _apply(layer, x, *weights[layer.name], out_size=out_size)
        if trace is not None:
            trace.append((layer.name, shape_in, x.shape))
        if layer.name == f"dec.{cfg.fusion_stage_index}":
            x = reshape(x, (n * a, x.shape[1] // a) + x.shape[2:])
    return reshape(x, (n, a) + x.shape[1:])


def analysis(wave: Tensor, cfg: ModelConfig) -> Tensor:
    """[N, A, n] -> planes [N, A, 2, frames, F]; input cropped to whole embeddings."""
    wave = as_tensor(wave)
    spe = cfg.samples_per_embedding
    n_use = (wave.shape[-1] // spe) * spe
    if n_use == 0:
        raise ConfigError(f"need at least {spe} samples, got {wave.shape[-1]}")
    hop = cfg.stft.hop
    x = pad(wave[..., :n_use], [(0, 0)] * (wave.ndim - 1) + [(hop, 0)])
    return stft_planes(x, cfg.stft.window_len, hop, cfg.stft.n_bins)


LOOKAHEAD_FRAME_DROP = 3


def synthesis(planes: Tensor, cfg: ModelConfig) -> Tensor:
    """Decoder planes over ``T + 1`` embedding steps -> [N, A, 4T*hop] samples."""
    planes = as_tensor(planes)
    hop = cfg.stft.hop
    frames = planes.shape[-2]
    t_emb = frames // cfg.frames_per_embedding - cfg.decoder_lookahead_embeddings
    wave = istft_planes(planes[..., LOOKAHEAD_FRAME_DROP:, :], cfg.stft.window_len, hop)
    return wave[..., hop:hop + t_emb * cfg.samples_per_embedding]


def shift_for_lookahead(emb: Tensor) -> Tensor:
    """Append the zero flush embedding that drives the one-embedding look-ahead."""
    emb = as_tensor(emb)
    zeros = Tensor(np.zeros((emb.shape[0], 1, emb.shape[2]), dtype=emb.dtype))
    return concat([emb, zeros], axis=1)


def encode(params: dict, cfg: ModelConfig, wave, dtype=np.float32) -> np.ndarray:
    """Audio [A, n] or [N, A, n] -> embeddings [(N,) T, D] in ``dtype``."""
    wave = np.asarray(wave, dtype=dtype)
    squeeze = wave.ndim == 2
    if squeeze:
        wave = wave[None]
    with no_grad():
        weights = effective_weights(params, encoder_layers(cfg), dtype)
        emb = encoder_forward(weights, cfg, analysis(Tensor(wave), cfg)).data
    return emb[0] if squeeze else emb


def decode(params: dict, cfg: ModelConfig, emb, dtype=np.float32) -> np.ndarray:
    """Embeddings [(N,) T, D] -> audio [(N,) A, 4T*hop]."""
    emb = np.asarray(emb, dtype=dtype)
    squeeze = emb.ndim == 2
    if squeeze:
        emb = emb[None]
    with no_grad():
        weights = effective_weights(params, decoder_layers(cfg), dtype)
        planes = decoder_forward(weights, cfg, shift_for_lookahead(Tensor(emb)))
        wave = synthesis(planes, cfg).data
    return wave[0] if squeeze else wave


# -- streaming ---------------------------------------------------------------------------

class _StreamLayer:
    """One causal layer with its time-axis carry buffer."""

    def __init__(self, layer: Layer, w: np.ndarray, b: np.ndarray, batch: int, freq_in: int):
        self.layer = layer
        self.w = w
        self.b = b.reshape(1, -1, 1, 1)
        self.batch = batch
        kt, _ = layer.kernel
        st, sf = layer.stride
        self.keep = kt - st
        self.freq_pad = PadSpec((0, 0), layer.pad.freq)
        if layer.transposed:
            self.freq_out = layer.kernel[1] if freq_in == 1 and layer.pad == PadSpec.valid() else freq_in * sf
        else:
            self.freq_out = (freq_in + sum(layer.pad.freq) - layer.kernel[1]) // sf + 1
        self.freq_in = freq_in
        self.reset()

    def reset(self):
        ch, f = (self.layer.cout, self.freq_out) if self.layer.transposed else (self.layer.cin, self.freq_in)
        self.buf = np.zeros((self.batch, ch, self.keep, f), dtype=self.w.dtype)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.layer.preact:
            x = np.where(x < 0, np.expm1(np.minimum(x, 0)), x).astype(x.dtype, copy=False)
        st = self.layer.stride[0]
        n = x.shape[2]
        if self.layer.transposed:
            full = conv2d_transpose_raw(x, self.w, self.layer.stride, self.freq_pad,
                                        ((n - 1) * st + self.layer.kernel[0], self.freq_out))
            full[:, :, :self.keep] += self.buf
            self.buf = full[:, :, n * st:].copy()
            return full[:, :, :n * st] + self.b
        xc = np.concatenate([self.buf, x], axis=2)
        self.buf = xc[:, :, xc.shape[2] - self.keep:].copy()
        return conv2d_raw(xc, self.w, self.layer.stride, self.freq_pad) + self.b


def _build_stream(layers: list[Layer], weights: dict, cfg: ModelConfig, freq_in: int) -> list[_StreamLayer]:
    out = []
    f = freq_in
    for layer in layers:
        w, b = weights[layer.name]
        sl = _StreamLayer(layer, w.data, b.data, cfg.audio_channels if layer.per_channel else 1, f)
        out.append(sl)
        f = sl.freq_out
    return out


class StreamingEncoder:
    """Frame-synchronous encoder: 4 STFT frames in, one embedding out."""

    def __init__(self, params: dict, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.layers = encoder_layers(cfg)
        weights = effective_weights(params, self.layers, dtype)
        self.stream = _build_stream(self.layers, weights, cfg, cfg.stft.n_bins)
        self.window = hann(cfg.stft.window_len, dtype)
        self.reset()

    def reset(self):
        for s in self.stream:
            s.reset()
        self.tail = np.zeros((self.cfg.audio_channels, self.cfg.stft.hop), dtype=self.dtype)

    def step_frames(self, frames: np.ndarray) -> np.ndarray:
        """frames [A, 2, 4, F] -> embedding [D]."""
        cfg = self.cfg
        frames = np.asarray(frames, dtype=self.dtype)
        want = (cfg.audio_channels, 2, cfg.frames_per_embedding, cfg.stft.n_bins)
        if frames.shape != want:
            raise ConfigError(f"expected frames of shape {want}, got {frames.shape}")
        x = frames
        for i, s in enumerate(self.stream):
            if i == cfg.fusion_stage_index:
                x = x.reshape(1, -1, *x.shape[2:])
            x = s(x)
        return x[0, :, 0, 0]

    def step_samples(self, chunk: np.ndarray) -> np.ndarray:
        """chunk [A, 4*hop] of new samples -> embedding [D]."""
        cfg = self.cfg
        chunk = np.asarray(chunk, dtype=self.dtype)
        if chunk.shape != (cfg.audio_channels, cfg.samples_per_embedding):
            raise ConfigError(f"expected a chunk of shape {(cfg.audio_channels, cfg.samples_per_embedding)}, "
                              f"got {chunk.shape}")
        buf = np.concatenate([self.tail, chunk], axis=1)
        self.tail = buf[:, -cfg.stft.hop:].copy()
        with no_grad():
            planes = stft_planes(Tensor(buf), cfg.stft.window_len, cfg.stft.hop, cfg.stft.n_bins).data
        return self.step_frames(planes)


class StreamingDecoder:
    """One embedding in, 4 hops of audio out, delayed by the one-embedding look-ahead."""

    def __init__(self, params: dict, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.layers = decoder_layers(cfg)
        weights = effective_weights(params, self.layers, dtype)
        self.stream = _build_stream(self.layers, weights, cfg, 1)
        self.wsum = overlap_sum(hann(cfg.stft.window_len), cfg.stft.hop)
        self.reset()

    def reset(self):
        for s in self.stream:
            s.reset()
        self.steps = 0
        self.pending = np.zeros((self.cfg.audio_channels, self.cfg.stft.hop), dtype=self.dtype)

    def _frames(self, emb: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        x = emb.reshape(1, -1, 1, 1).astype(self.dtype)
        for s in self.stream:
            x = s(x)
            if s.layer.name == f"dec.{cfg.fusion_stage_index}":
                x = x.reshape(cfg.audio_channels, -1, *x.shape[2:])
        return x  # [A, 2, 4, F]

    def step(self, emb: np.ndarray | None) -> np.ndarray:
        """Feed one embedding (``None`` flushes with a zero embedding); returns [A, k] audio."""
        cfg = self.cfg
        if emb is None:
            emb = np.zeros(cfg.embed_dim, dtype=self.dtype)
        emb = np.asarray(emb, dtype=self.dtype)
        if emb.shape != (cfg.embed_dim,):
            raise ConfigError(f"embedding must have shape ({cfg.embed_dim},), got {emb.shape}")
        planes = self._frames(emb)
        hop = cfg.stft.hop
        step = self.steps
        self.steps += 1
        if step == 0:
            planes = planes[:, :, LOOKAHEAD_FRAME_DROP:]
        with no_grad():
            seg = istft_planes(Tensor(planes), cfg.stft.window_len, hop).data
        # seg starts one hop before the first new frame's centre
        seg = seg.copy()
        if step == 0:
            self.pending = seg[:, hop:2 * hop].copy()
            return np.zeros((cfg.audio_channels, 0), dtype=self.dtype)
        seg[:, :hop] += self.pending
        self.pending = seg[:, -hop:].copy()
        return seg[:, :-hop]

    def flush(self) -> np.ndarray:
        return self.step(None)


def stream_encode(params: dict, cfg: ModelConfig, wave: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Embeddings for ``wave`` [A, n] computed chunk by chunk."""
    enc = StreamingEncoder(params, cfg, dtype)
    spe = cfg.samples_per_embedding
    t = wave.shape[-1] // spe
    if t == 0:
        return np.zeros((0, cfg.embed_dim), dtype=dtype)
    return np.stack([enc.step_samples(wave[:, i * spe:(i + 1) * spe]) for i in range(t)])


def stream_decode(params: dict, cfg: ModelConfig, emb: np.ndarray, dtype=np.float32) -> np.ndarray:
    dec = StreamingDecoder(params, cfg, dtype)
    chunks = [dec.step(e) for e in emb]
    chunks.append(dec.flush())
    return np.concatenate(chunks, axis=1)


def streaming_encode_step(state: StreamingEncoder, frames: np.ndarray) -> np.ndarray:
    """Next 4 STFT frames [A, 2, 4, F] -> one embedding."""
    return state.step_frames(frames)


def streaming_decode_step(state: StreamingDecoder, embedding: np.ndarray | None) -> np.ndarray:
    """One embedding -> 4 hops of audio, delayed by the look-ahead (empty on the first call)."""
    return state.step(embedding)
