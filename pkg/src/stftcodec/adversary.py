"""Multi-scale STFT discriminators.

Each scale looks at (real, imag, modulus) planes of one STFT resolution and
runs the same stack: per-audio-channel stages with shared weights, channel
fusion, joint stages, and a one-channel head whose output grid is the logits.
Convolutions use symmetric padding; layer norm follows every stage conv and
the Leaky ReLU pre-activates every conv except the first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, DiscConfig
from .dsp import modulus_planes, stft_planes
from .tensor import PadSpec, Tensor, as_tensor, conv2d, layer_norm, leaky_relu, reshape


@dataclass(frozen=True)
class DiscLayer:
    name: str
    cin: int
    cout: int
    kernel: tuple[int, int]
    stride: tuple[int, int]
    preact: bool
    norm: bool
    per_channel: bool

    @property
    def pad(self) -> PadSpec:
        return PadSpec.symmetric(self.kernel)


@dataclass
class DiscOutput:
    logits: list[Tensor]            # per scale, [N, N_k]
    features: list[list[Tensor]]    # per scale, L intermediate tensors

    @property
    def n_scales(self) -> int:
        return len(self.logits)


def disc_layers(cfg: DiscConfig, audio_channels: int) -> list[DiscLayer]:
    ch = [st.channel_mult * cfg.base_depth for st in cfg.stages]
    fuse = cfg.fusion_stage_index
    layers = []
    for i, st in enumerate(cfg.stages):
        cin = 3 if i == 0 else (audio_channels * ch[i - 1] if i == fuse else ch[i - 1])
        layers.append(DiscLayer(str(i), cin, ch[i], st.kernel, (st.time_stride, st.freq_stride),
                                preact=i > 0, norm=True, per_channel=i < fuse))
    cin = ch[-1] * (audio_channels if fuse >= len(cfg.stages) else 1)
    layers.append(DiscLayer("head", cin, 1, cfg.head_kernel, (1, 1), preact=True, norm=False, per_channel=False))
    return layers


def init_discriminators(cfg: DiscConfig, audio_channels: int, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    for k in range(len(cfg.window_lengths)):
        for layer in disc_layers(cfg, audio_channels):
            pre = f"d{k}.{layer.name}"
            bound = 1.0 / np.sqrt(layer.cin * layer.kernel[0] * layer.kernel[1])
            params[pre + ".w"] = rng.uniform(-bound, bound, size=(layer.cout, layer.cin) + layer.kernel)
            params[pre + ".b"] = np.zeros(layer.cout)
            if layer.norm:
                params[pre + ".gamma"] = np.ones((layer.cout, 1, 1))
                params[pre + ".beta"] = np.zeros((layer.cout, 1, 1))
    return params


def _scale(audio: Tensor, params: dict, cfg: DiscConfig, k: int, layers: list[DiscLayer]):
    n, a = audio.shape[:2]
    w = cfg.window_lengths[k]
    planes = modulus_planes(stft_planes(audio, w, w // 2, w // 2))
    x = reshape(planes, (n * a,) + planes.shape[2:])
    feats = []
    for i, layer in enumerate(layers):
        pre = f"d{k}.{layer.name}"
        if i == cfg.fusion_stage_index:
            x = reshape(x, (n, a * x.shape[1]) + x.shape[2:])
        if layer.preact:
            x = leaky_relu(x, cfg.slope)
        x = conv2d(x, params[pre + ".w"], params[pre + ".b"], layer.stride, layer.pad)
        if layer.norm:
            x = layer_norm(x, params[pre + ".gamma"], params[pre + ".beta"])
            feats.append(x)
    return reshape(x, (n, -1)), feats


def discriminate(audio, params: dict, cfg: DiscConfig) -> DiscOutput:
    """Run every scale on audio [N, A, n]; ``params`` maps names to arrays or tensors."""
    audio = as_tensor(audio)
    if audio.ndim == 2:
        audio = reshape(audio, (1,) + audio.shape)
    n_samples = audio.shape[-1]
    for k, w in enumerate(cfg.window_lengths):
        if n_samples < w:
            raise ConfigError(f"audio of {n_samples} samples is shorter than scale {k} window {w}")
    layers = disc_layers(cfg, audio.shape[1])
    logits, features = [], []
    for k in range(len(cfg.window_lengths)):
        lg, ft = _scale(audio, params, cfg, k, layers)
        logits.append(lg)
        features.append(ft)
    return DiscOutput(logits, features)


def disc_forward_features(audio, params: dict, cfg: DiscConfig) -> list[list[Tensor]]:
    return discriminate(audio, params, cfg).features
