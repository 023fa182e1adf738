"""Training objectives: hinge GAN, feature matching, mel reconstruction, total."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

from .adversary import DiscOutput
from .config import ConfigError, LossWeights
from .dsp import MEL_LOG_FLOOR, MelConfig, mel_tensor
from .tensor import Tensor, add, as_tensor, clamp_min, log, mean, mul, relu, square, sub, tabs


@dataclass
class LossReport:
    step: int
    l_d: float
    l_adv: float
    l_feat: float
    l_rec: float
    l_com: float
    l_total: float
    bypassed: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _check_scales(a: DiscOutput, b: DiscOutput):
    if a.n_scales != b.n_scales:
        raise ConfigError(f"scale mismatch: {a.n_scales} vs {b.n_scales}")


def disc_loss(real: DiscOutput, fake: DiscOutput) -> Tensor:
    _check_scales(real, fake)
    k = real.n_scales
    terms = [add(mean(relu(sub(1.0, r))), mean(relu(add(1.0, f))))
             for r, f in zip(real.logits, fake.logits)]
    return mul(_sum(terms), 1.0 / k)


def gen_adv_loss(fake: DiscOutput) -> Tensor:
    terms = [mean(relu(sub(1.0, f))) for f in fake.logits]
    return mul(_sum(terms), 1.0 / len(terms))


def feature_loss(real_feats, fake_feats) -> Tensor:
    """Mean over scales and layers of the per-tensor mean absolute difference."""
    if len(real_feats) != len(fake_feats) or any(len(a) != len(b) for a, b in zip(real_feats, fake_feats)):
        raise ConfigError("feature structure mismatch")
    terms = []
    for ra, fa in zip(real_feats, fake_feats):
        for r, f in zip(ra, fa):
            r, f = as_tensor(r), as_tensor(f)
            if r.shape != f.shape:
                raise ConfigError(f"feature shape mismatch {r.shape} vs {f.shape}")
            terms.append(mean(tabs(sub(r, f))))
    return mul(_sum(terms), 1.0 / len(terms))


def mel_alpha(s: int) -> float:
    return math.sqrt(s / 2)


def reconstruction_loss(x, g, sample_rate: int, windows=(64, 128, 256, 512, 1024, 2048)) -> Tensor:
    """Multi-window mel distance between audio [..., n] tensors (L1 + alpha-weighted squared log)."""
    x, g = as_tensor(x), as_tensor(g)
    if x.shape != g.shape:
        raise ConfigError(f"length/channel mismatch: {x.shape} vs {g.shape}")
    terms = []
    for s in windows:
        cfg = MelConfig(s, sample_rate)
        sx, sg = mel_tensor(x, cfg), mel_tensor(g, cfg)
        l1 = mean(tabs(sub(sx, sg)))
        dl = sub(log(clamp_min(sx, MEL_LOG_FLOOR)), log(clamp_min(sg, MEL_LOG_FLOOR)))
        terms.append(add(l1, mul(mean(square(dl)), cfg.alpha)))
    return _sum(terms)


def total_generator_loss(adv, feat, rec, com, w: LossWeights) -> Tensor:
    parts = [mul(as_tensor(adv), w.adv), mul(as_tensor(feat), w.feat),
             mul(as_tensor(rec), w.rec), mul(as_tensor(com), w.com)]
    return _sum(parts)


def _sum(terms):
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out
