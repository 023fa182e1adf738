"""Residual vector quantization with EMA codebooks.

Greedy residual assignment, per-level (unshared) codebooks, biased quantizer
dropout over three depth ranges, and whole-step quantizer bypass. Gradients
reach the encoder through a straight-through estimator; the codebooks learn
only through exponential moving averages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, RvqConfig
from .tensor import Tensor, as_tensor, mean, square, straight_through, tsum

EMA_EPS = 1e-12


class CodeError(ValueError):
    """A code index outside the codebook."""


@dataclass
class Codebooks:
    centroids: np.ndarray          # [R, V, D]
    ema_counts: np.ndarray         # [R, V]
    ema_sums: np.ndarray           # [R, V, D]
    unused_steps: np.ndarray       # [R, V] consecutive updates without an assignment
    initialized: np.ndarray        # [R] bool

    @classmethod
    def empty(cls, cfg: RvqConfig, dtype=np.float64) -> "Codebooks":
        r, v, d = cfg.n_quantizers, cfg.vocab, cfg.dim
        return cls(np.zeros((r, v, d), dtype), np.zeros((r, v), dtype), np.zeros((r, v, d), dtype),
                   np.zeros((r, v), np.int64), np.zeros(r, bool))

    @classmethod
    def from_centroids(cls, centroids) -> "Codebooks":
        c = np.array(centroids, dtype=np.float64)
        r, v, _ = c.shape
        return cls(c, np.ones((r, v)), c.copy(), np.zeros((r, v), np.int64), np.ones(r, bool))

    @property
    def depth(self) -> int:
        return self.centroids.shape[0]

    @property
    def vocab(self) -> int:
        return self.centroids.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"centroids": self.centroids, "ema_counts": self.ema_counts, "ema_sums": self.ema_sums,
                "unused_steps": self.unused_steps, "initialized": self.initialized}


@dataclass(frozen=True)
class CodeFrame:
    codes: tuple[int, ...]

    @property
    def depth(self) -> int:
        return len(self.codes)


def _nearest(residual: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the closest centroid per row; ties go to the lowest index."""
    d = (np.sum(residual * residual, axis=1, keepdims=True)
         - 2.0 * residual @ centroids.T
         + np.sum(centroids * centroids, axis=1)[None, :])
    return np.argmin(d, axis=1)


def quantize_batch(vectors: np.ndarray, centroids: np.ndarray, depth) -> tuple[np.ndarray, np.ndarray]:
    """Greedy residual walk for [M, D] vectors.

    ``depth`` is an int or a per-row array. Returns ``(codes, residual)`` where
    ``codes`` is [M, max depth] with -1 past each row's depth and ``residual``
    is what is left after the last active level.
    """
    vectors = np.asarray(vectors)
    m = vectors.shape[0]
    depth = np.broadcast_to(np.asarray(depth, dtype=np.int64), (m,))
    rmax = int(depth.max()) if m else 0
    if rmax > centroids.shape[0] or (m and depth.min() < 0):
        raise ConfigError(f"depth must lie in [0, {centroids.shape[0]}]")
    codes = np.full((m, rmax), -1, dtype=np.int64)
    residual = vectors.astype(centroids.dtype, copy=True)
    for level in range(rmax):
        active = depth > level
        if not active.any():
            break
        idx = _nearest(residual[active], centroids[level])
        codes[active, level] = idx
        residual[active] -= centroids[level][idx]
    return codes, residual


def quantize(v, books: Codebooks, r: int) -> CodeFrame:
    if not 1 <= r <= books.depth:
        raise ConfigError(f"depth r must lie in [1, {books.depth}], got {r}")
    codes, _ = quantize_batch(np.asarray(v, dtype=np.float64)[None], books.centroids, r)
    return CodeFrame(tuple(int(c) for c in codes[0]))


def dequantize_batch(codes: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Sum of selected centroids; entries of -1 mark unused levels."""
    codes = np.asarray(codes, dtype=np.int64)
    m = codes.shape[0]
    out = np.zeros((m, centroids.shape[2]), dtype=centroids.dtype)
    if codes.shape[1] > centroids.shape[0]:
        raise CodeError(f"{codes.shape[1]} levels but only {centroids.shape[0]} codebooks")
    if (codes >= centroids.shape[1]).any():
        raise CodeError(f"code >= vocab {centroids.shape[1]}")
    for level in range(codes.shape[1]):
        col = codes[:, level]
        used = col >= 0
        out[used] += centroids[level][col[used]]
    return out


def dequantize(frame: CodeFrame, books: Codebooks) -> np.ndarray:
    if not frame.codes:
        return np.zeros(books.centroids.shape[2])
    if any(c < 0 or c >= books.vocab for c in frame.codes):
        raise CodeError(f"codes {frame.codes} outside [0, {books.vocab})")
    return dequantize_batch(np.array([frame.codes]), books.centroids)[0]


# -- dropout / bypass -------------------------------------------------------------------

def dropout_level_probs(cfg: RvqConfig) -> np.ndarray:
    """Per-level probabilities of truncation level r = 1..R (index r-1)."""
    r = cfg.n_quantizers
    w1, w2, w3 = cfg.dropout_range_weights
    weights = np.concatenate([np.full(r // 4, w1), np.full(r // 4, w2), np.full(r - r // 2, w3)])
    return weights / weights.sum()


def sample_dropout_level(cfg: RvqConfig, rng: np.random.Generator, size=None):
    """Draw truncation level(s) r in 1..R from the biased 4:2:1 range law."""
    p = dropout_level_probs(cfg)
    return rng.choice(cfg.n_quantizers, size=size, p=p) + 1


def bitrate(cfg: RvqConfig, embedding_rate: float, active_r: int) -> float:
    """Bits per second of fixed-rate packed codes."""
    if not 0 <= active_r <= cfg.n_quantizers:
        raise ConfigError(f"active depth {active_r} outside [0, {cfg.n_quantizers}]")
    return active_r * cfg.vocab_bits * embedding_rate


def depth_for_bitrate(cfg: RvqConfig, embedding_rate: float, kbps: float) -> int:
    r = kbps * 1000.0 / (cfg.vocab_bits * embedding_rate)
    if abs(r - round(r)) > 1e-9 or not 1 <= round(r) <= cfg.n_quantizers:
        valid = ", ".join(f"{bitrate(cfg, embedding_rate, d) / 1000:g}" for d in range(1, cfg.n_quantizers + 1))
        raise ConfigError(f"{kbps} kbps does not map to a whole depth; valid kbps: {valid}")
    return int(round(r))


# -- training path --------------------------------------------------------------------------

@dataclass
class RvqTrainOutput:
    v_out: Tensor
    codes: np.ndarray | None
    commit_loss: Tensor | None
    bypassed: bool
    depths: np.ndarray | None = None
    assignments: list[tuple[int, np.ndarray, np.ndarray]] = field(default_factory=list)


def init_level(books: Codebooks, level: int, residuals: np.ndarray, rng: np.random.Generator) -> None:
    """Seed one level's centroids from distinct residual vectors."""
    v = books.vocab
    m = residuals.shape[0]
    if m >= v:
        pick = residuals[rng.choice(m, size=v, replace=False)]
    else:
        extra = residuals[rng.choice(m, size=v - m, replace=True)]
        scale = 1e-3 * (residuals.std() + 1e-12)
        extra = extra + scale * rng.standard_normal(extra.shape)
        pick = np.concatenate([residuals, extra])
    books.centroids[level] = pick
    books.ema_sums[level] = pick
    books.ema_counts[level] = 1.0
    books.unused_steps[level] = 0
    books.initialized[level] = True


def forward_train(v: Tensor, books: Codebooks, cfg: RvqConfig, rng: np.random.Generator,
                  bypass: bool | None = None, depths=None) -> RvqTrainOutput:
    """Training-mode quantizer on embeddings [N, T, D].

    One bypass coin per call; otherwise one truncation depth per example.
    """
    v = as_tensor(v)
    if bypass is None:
        bypass = bool(rng.random() < cfg.bypass_rate)
    if bypass:
        return RvqTrainOutput(v, None, None, True)
    n, t, d = v.shape
    if depths is None:
        depths = sample_dropout_level(cfg, rng, size=n)
    depths = np.asarray(depths, dtype=np.int64)
    flat = v.data.reshape(n * t, d)
    row_depth = np.repeat(depths, t)
    codes = np.full((n * t, int(depths.max())), -1, dtype=np.int64)
    residual = flat.astype(books.centroids.dtype, copy=True)
    assignments = []
    for level in range(int(depths.max())):
        active = row_depth > level
        res_in = residual[active]
        if not books.initialized[level]:
            init_level(books, level, res_in, rng)
        idx = _nearest(res_in, books.centroids[level])
        codes[active, level] = idx
        assignments.append((level, res_in, idx))
        residual[active] = res_in - books.centroids[level][idx]
    vq = dequantize_batch(codes, books.centroids).reshape(n, t, d)
    v_out = straight_through(v, vq)
    diff = v - Tensor(vq.astype(v.dtype))
    commit = mean(tsum(square(diff), axis=-1))
    return RvqTrainOutput(v_out, codes.reshape(n, t, -1), commit, False, depths, assignments)


def ema_update(books: Codebooks, assignments, cfg: RvqConfig, rng: np.random.Generator | None = None) -> None:
    """EMA step for each (level, residuals, codes) triple; reseeds long-dead codes."""
    dcy = cfg.ema_decay
    for level, res, idx in assignments:
        if len(idx) == 0:
            continue
        counts = np.bincount(idx, minlength=books.vocab).astype(books.ema_counts.dtype)
        sums = np.zeros_like(books.ema_sums[level])
        np.add.at(sums, idx, res)
        books.ema_counts[level] = dcy * books.ema_counts[level] + (1.0 - dcy) * counts
        books.ema_sums[level] = dcy * books.ema_sums[level] + (1.0 - dcy) * sums
        used = counts > 0
        books.centroids[level, used] = (books.ema_sums[level, used]
                                        / np.maximum(books.ema_counts[level, used], EMA_EPS)[:, None])
        books.unused_steps[level, used] = 0
        books.unused_steps[level, ~used] += 1
        if rng is not None and cfg.dead_code_steps > 0:
            dead = np.flatnonzero(books.unused_steps[level] >= cfg.dead_code_steps)
            if dead.size:
                pick = res[rng.choice(len(res), size=dead.size, replace=True)]
                books.centroids[level, dead] = pick
                books.ema_sums[level, dead] = pick
                books.ema_counts[level, dead] = 1.0
                books.unused_steps[level, dead] = 0
