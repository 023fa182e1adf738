"""A trained codec: network weights plus codebooks, with code-level encode/decode."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import config as C
from .bitstream import StreamHeader
from .codec import StreamingDecoder, StreamingEncoder, decode, encode
from .rvq import CodeError, Codebooks, dequantize_batch, quantize_batch


@dataclass
class CodecModel:
    cfg: C.ModelConfig
    params: dict[str, np.ndarray]
    books: Codebooks
    dtype: type = np.float32

    @classmethod
    def from_state(cls, state, dtype=np.float32) -> "CodecModel":
        return cls(state.cfg.model, state.gen, state.books, dtype)

    @property
    def model_id(self) -> bytes:
        """16-byte digest binding streams to this configuration, these weights and codebooks."""
        h = hashlib.sha256(C.canonical_json(C.to_dict(self.cfg)).encode())
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.books.centroids, dtype="<f8").tobytes())
        return h.digest()[:16]

    def header(self, r: int, frame_count: int = 0) -> StreamHeader:
        cfg = self.cfg
        return StreamHeader(cfg.sample_rate, cfg.audio_channels, cfg.stft.window_len, cfg.stft.hop,
                            int(round(cfg.embedding_rate)), r, cfg.rvq.vocab_bits, frame_count, self.model_id)

    def _check_depth(self, r: int):
        if not 1 <= r <= self.cfg.rvq.n_quantizers:
            raise C.ConfigError(f"depth {r} outside [1, {self.cfg.rvq.n_quantizers}]; valid depths: "
                                f"1..{self.cfg.rvq.n_quantizers}")

    def _centroids(self) -> np.ndarray:
        return self.books.centroids.astype(self.dtype)

    def quantize(self, emb: np.ndarray, r: int) -> np.ndarray:
        """Embeddings [T, D] -> codes [T, r]."""
        self._check_depth(r)
        codes, _ = quantize_batch(np.asarray(emb, dtype=self.dtype), self._centroids(), r)
        return codes

    def encode_codes(self, wave: np.ndarray, r: int, streaming: bool = False) -> np.ndarray:
        """Audio [A, n] -> codes [n // samples_per_embedding, r]."""
        self._check_depth(r)
        if streaming:
            enc = StreamingEncoder(self.params, self.cfg, self.dtype)
            spe = self.cfg.samples_per_embedding
            rows = []
            for i in range(wave.shape[-1] // spe):
                e = enc.step_samples(wave[:, i * spe:(i + 1) * spe])
                rows.append(self.quantize(e[None], r)[0])
            return np.array(rows, dtype=np.int64).reshape(-1, r)
        return self.quantize(encode(self.params, self.cfg, wave, self.dtype), r)

    def dequantize(self, codes: np.ndarray) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.int64)
        if codes.size and (codes.min() < 0 or codes.max() >= self.books.vocab):
            raise CodeError(f"codes outside [0, {self.books.vocab})")
        return dequantize_batch(codes, self._centroids())

    def decode_codes(self, codes: np.ndarray, streaming: bool = False) -> np.ndarray:
        """Codes [T, r] -> audio [A, T * samples_per_embedding]."""
        emb = self.dequantize(codes)
        if streaming:
            dec = StreamingDecoder(self.params, self.cfg, self.dtype)
            chunks = [dec.step(e) for e in emb] + [dec.flush()]
            return np.concatenate(chunks, axis=1)
        if len(emb) == 0:
            return np.zeros((self.cfg.audio_channels, 0), dtype=self.dtype)
        return decode(self.params, self.cfg, emb, self.dtype)

    def roundtrip(self, wave: np.ndarray, r: int) -> np.ndarray:
        return self.decode_codes(self.encode_codes(wave, r))
