import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stftcodec.config import ConfigError, RvqConfig, desk_config, full_scale_config
from stftcodec.rvq import (
    CodeError,
    CodeFrame,
    Codebooks,
    bitrate,
    depth_for_bitrate,
    dequantize,
    dequantize_batch,
    dropout_level_probs,
    ema_update,
    forward_train,
    quantize,
    quantize_batch,
    sample_dropout_level,
)
from stftcodec.tensor import Tensor, gradients, mul, tsum


def _trained_books(cfg: RvqConfig, data: np.ndarray, steps: int, rng) -> Codebooks:
    books = Codebooks.empty(cfg)
    r = cfg.n_quantizers
    for _ in range(steps):
        batch = data[rng.choice(len(data), 256)]
        out = forward_train(Tensor(batch[None]), books, cfg, rng, bypass=False, depths=[r])
        ema_update(books, out.assignments, cfg, rng)
    return books


def test_error_monotone_in_depth():
    rng = np.random.default_rng(0)
    cfg = RvqConfig(n_quantizers=8, vocab=32, dim=8, ema_decay=0.9, dead_code_steps=20)
    books = _trained_books(cfg, rng.standard_normal((4000, 8)), 300, rng)
    x = rng.standard_normal((1000, 8))
    errs = []
    for r in range(0, 9):
        codes, res = quantize_batch(x, books.centroids, r)
        np.testing.assert_allclose(x - dequantize_batch(codes, books.centroids), res, atol=1e-10)
        errs.append(float(np.mean(np.sum(res ** 2, axis=1))))
    assert all(b <= a for a, b in zip(errs, errs[1:])), errs
    assert errs[-1] < 0.5 * errs[0]


def test_error_monotone_per_vector_with_zero_centroid():
    # greedy residual steps never increase the error when 0 is a candidate
    rng = np.random.default_rng(1)
    c = rng.standard_normal((6, 16, 4))
    c[:, 0] = 0.0
    x = rng.standard_normal((1000, 4))
    prev = np.sum(x ** 2, axis=1)
    for r in range(1, 7):
        _, res = quantize_batch(x, c, r)
        cur = np.sum(res ** 2, axis=1)
        assert np.all(cur <= prev + 1e-12)
        prev = cur


def test_dropout_range_masses_r64():
    cfg = RvqConfig()
    rng = np.random.default_rng(0)
    n = 100_000
    r = sample_dropout_level(cfg, rng, size=n)
    assert r.min() >= 1 and r.max() <= 64
    masses = [np.mean(r <= 16), np.mean((r > 16) & (r <= 32)), np.mean(r > 32)]
    for got, p in zip(masses, (0.5, 0.25, 0.25)):
        assert abs(got - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_dropout_probs_uniform_within_ranges():
    p = dropout_level_probs(RvqConfig())
    assert p.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(p[:16], 0.5 / 16)
    np.testing.assert_allclose(p[16:32], 0.25 / 16)
    np.testing.assert_allclose(p[32:], 0.25 / 32)


def test_dropout_r4_levels():
    np.testing.assert_allclose(dropout_level_probs(RvqConfig(n_quantizers=4)), [0.5, 0.25, 0.125, 0.125])


@pytest.mark.parametrize("r_max", [4, 8, 64])
def test_dropout_chi_square(r_max):
    from scipy.stats import chisquare

    cfg = RvqConfig(n_quantizers=r_max)
    n = 100_000
    r = sample_dropout_level(cfg, np.random.default_rng(r_max), size=n)
    observed = np.bincount(r - 1, minlength=r_max)
    assert chisquare(observed, n * dropout_level_probs(cfg)).pvalue > 0.01


def test_ema_two_clusters():
    rng = np.random.default_rng(0)
    means = np.array([[2.0, -1.0, 0.5], [-1.5, 1.0, -2.0]])
    cfg = RvqConfig(n_quantizers=4, vocab=2, dim=3, ema_decay=0.99, dead_code_steps=0)
    books = Codebooks.from_centroids(np.tile(np.array([[[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]]]), (4, 1, 1)))
    for _ in range(2000):
        lab = rng.integers(0, 2, 64)
        x = means[lab] + 0.1 * rng.standard_normal((64, 3))
        codes, _ = quantize_batch(x, books.centroids, 1)
        ema_update(books, [(0, x, codes[:, 0])], cfg)
    c = books.centroids[0]
    err = min(np.abs(c - means).max(), np.abs(c[::-1] - means).max())
    assert err < 0.05


def test_ties_go_to_lowest_index():
    c = np.zeros((1, 4, 2))
    c[0, 1] = [1.0, 0.0]
    c[0, 2] = [1.0, 0.0]
    c[0, 3] = [3.0, 0.0]
    codes, _ = quantize_batch(np.array([[1.0, 0.0], [0.5, 0.0]]), c, 1)
    assert codes[0, 0] == 1
    assert codes[1, 0] == 0  # 0 and 1 are equidistant


def test_quantize_frame_roundtrip():
    rng = np.random.default_rng(0)
    books = Codebooks.from_centroids(rng.standard_normal((4, 8, 3)))
    v = books.centroids[0, 5] + books.centroids[1, 2]
    fr = quantize(v, books, 4)
    assert fr.depth == 4
    codes, res = quantize_batch(v[None], books.centroids, 4)
    assert fr.codes == tuple(codes[0])
    np.testing.assert_allclose(v - dequantize(fr, books), res[0], atol=1e-12)
    with pytest.raises(ConfigError):
        quantize(v, books, 5)
    with pytest.raises(CodeError):
        dequantize(CodeFrame((8,)), books)
    np.testing.assert_array_equal(dequantize(CodeFrame(()), books), 0.0)


def test_straight_through_gradient_is_identity():
    rng = np.random.default_rng(0)
    cfg = RvqConfig(n_quantizers=4, vocab=8, dim=3)
    books = Codebooks.from_centroids(rng.standard_normal((4, 8, 3)))
    v = Tensor(rng.standard_normal((2, 5, 3)), requires_grad=True)
    w = rng.standard_normal((2, 5, 3))
    out = forward_train(v, books, cfg, rng, bypass=False)
    (g,) = gradients(tsum(mul(out.v_out, Tensor(w))), [v])
    np.testing.assert_allclose(g, w)
    np.testing.assert_allclose(out.v_out.data, dequantize_batch(out.codes.reshape(10, -1), books.centroids)
                               .reshape(2, 5, 3))


def test_commit_loss_value():
    rng = np.random.default_rng(0)
    cfg = RvqConfig(n_quantizers=4, vocab=8, dim=3)
    books = Codebooks.from_centroids(rng.standard_normal((4, 8, 3)))
    v = rng.standard_normal((2, 5, 3))
    out = forward_train(Tensor(v), books, cfg, rng, bypass=False, depths=[2, 4])
    assert list(out.depths) == [2, 4]
    assert (out.codes[0, :, 2:] == -1).all() and (out.codes[1] >= 0).all()
    q = out.v_out.data
    assert out.commit_loss.item() == pytest.approx(np.mean(np.sum((v - q) ** 2, axis=-1)))


def test_bypass_rate_and_passthrough():
    rng = np.random.default_rng(0)
    cfg = RvqConfig(n_quantizers=4, vocab=8, dim=3)
    books = Codebooks.from_centroids(rng.standard_normal((4, 8, 3)))
    v = Tensor(rng.standard_normal((1, 2, 3)))
    flags = [forward_train(v, books, cfg, rng).bypassed for _ in range(4000)]
    assert abs(np.mean(flags) - 0.5) < 3 * np.sqrt(0.25 / 4000)
    out = forward_train(v, books, cfg, rng, bypass=True)
    assert out.v_out is v and out.commit_loss is None


def test_dead_code_reseeded():
    rng = np.random.default_rng(0)
    cfg = RvqConfig(n_quantizers=4, vocab=4, dim=2, dead_code_steps=5)
    books = Codebooks.from_centroids(np.array([[[0.0, 0.0], [100.0, 100.0], [-100, 100], [100, -100]]] * 4))
    x = 0.1 * rng.standard_normal((32, 2))
    for _ in range(5):
        codes, _ = quantize_batch(x, books.centroids, 1)
        ema_update(books, [(0, x, codes[:, 0])], cfg, rng)
    # the three far codes were never used and now sit on data points
    assert np.abs(books.centroids[0, 1:]).max() < 1.0
    assert (books.unused_steps[0] == 0).all()


def test_init_level_from_data():
    rng = np.random.default_rng(0)
    cfg = RvqConfig(n_quantizers=4, vocab=8, dim=2)
    books = Codebooks.empty(cfg)
    v = rng.standard_normal((1, 20, 2))
    forward_train(Tensor(v), books, cfg, rng, bypass=False, depths=[1])
    assert books.initialized[0] and not books.initialized[1]
    d = np.min(np.sum((books.centroids[0][:, None] - v[0][None]) ** 2, axis=-1), axis=1)
    np.testing.assert_allclose(d, 0.0, atol=1e-20)


# -- rates -----------------------------------------------------------------------------

def test_full_scale_rates():
    cfg = full_scale_config()
    assert cfg.embedding_rate == 25.0
    assert bitrate(cfg.rvq, cfg.embedding_rate, 64) == 16000
    assert bitrate(cfg.rvq, cfg.embedding_rate, 16) == 4000
    assert depth_for_bitrate(cfg.rvq, cfg.embedding_rate, 16) == 64
    assert depth_for_bitrate(cfg.rvq, cfg.embedding_rate, 4) == 16


def test_desk_rates():
    cfg = desk_config()
    assert cfg.embedding_rate == 25.0
    assert bitrate(cfg.rvq, 25.0, 8) == 2000


def test_bad_bitrate_lists_valid_values():
    cfg = full_scale_config()
    with pytest.raises(ConfigError, match="valid kbps: 0.25, 0.5"):
        depth_for_bitrate(cfg.rvq, cfg.embedding_rate, 4.1)
    with pytest.raises(ConfigError):
        depth_for_bitrate(cfg.rvq, cfg.embedding_rate, 16.25)
    with pytest.raises(ConfigError):
        bitrate(cfg.rvq, 25.0, 65)


def test_config_checks():
    with pytest.raises(ConfigError):
        RvqConfig(n_quantizers=6)
    with pytest.raises(ConfigError):
        _ = RvqConfig(vocab=1000).vocab_bits


@given(st.integers(1, 64))
def test_rate_linear_in_depth(r):
    cfg = RvqConfig()
    assert bitrate(cfg, 25.0, r) == 250 * r
    assert depth_for_bitrate(cfg, 25.0, 0.25 * r) == r
