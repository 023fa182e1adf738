import dataclasses

import numpy as np
import pytest

from stftcodec.codec import (
    analysis,
    count_params,
    decoder_forward,
    decoder_layers,
    effective_weights,
    encoder_forward,
    encoder_layers,
    init_model,
    shift_for_lookahead,
)
from stftcodec.config import ConfigError, ModelConfig, Stage, desk_config, full_scale_config, tiny_config
from stftcodec.shapes import plan
from stftcodec.tensor import Tensor, no_grad

CONFIGS = {
    "full": full_scale_config,
    "desk": desk_config,
    "desk-stereo": lambda: desk_config(audio_channels=2),
    "tiny": tiny_config,
}


def traced(cfg: ModelConfig, n_samples: int):
    params = init_model(cfg)
    enc_t, dec_t = [], []
    with no_grad():
        x = Tensor(np.zeros((1, cfg.audio_channels, n_samples), np.float32))
        emb = encoder_forward(effective_weights(params, encoder_layers(cfg), np.float32), cfg,
                              analysis(x, cfg), enc_t)
        decoder_forward(effective_weights(params, decoder_layers(cfg), np.float32), cfg,
                        shift_for_lookahead(emb), dec_t)
    return params, enc_t, dec_t


def _flat(shape):
    # fold batch (and per-channel audio) into the channel count
    return (shape[0] * shape[1],) + tuple(shape[2:])


@pytest.mark.parametrize("name", sorted(CONFIGS))
def test_plan_matches_network(name):
    cfg = CONFIGS[name]()
    n = 8 * cfg.samples_per_embedding
    p = plan(cfg, n)
    params, enc_t, dec_t = traced(cfg, n)
    assert [s.name for s in p.encoder] == [t[0] for t in enc_t]
    assert [s.name for s in p.decoder] == [t[0] for t in dec_t]
    for stage, (_, shape_in, shape_out) in zip(p.encoder + p.decoder, enc_t + dec_t):
        assert stage.input_shape == _flat(shape_in), stage.name
        assert stage.output_shape == _flat(shape_out), stage.name
    assert p.network_params == count_params(params)
    for stage in p.encoder + p.decoder:
        assert stage.params == count_params(params, stage.name + ".")


def test_stages_chain():
    for make in CONFIGS.values():
        p = plan(make())
        stages = p.encoder + p.decoder
        for a, b in zip(p.encoder, p.encoder[1:]):
            assert np.prod(a.output_shape) == np.prod(b.input_shape)
        for a, b in zip(p.decoder, p.decoder[1:]):
            assert np.prod(a.output_shape) == np.prod(b.input_shape)
        assert stages


def test_full_scale_numbers():
    p = plan(full_scale_config())
    assert p.freq_bins == 480
    assert p.embedding_rate == 25.0
    assert p.latency_embeddings == 2 and p.latency_ms == 80.0
    assert (p.frames, p.embeddings) == (128, 32)
    assert p.network_params == 12_971_204
    assert p.rvq_params == 64 * 1024 * 256


def test_desk_numbers():
    p = plan(desk_config())
    assert p.freq_bins == 160
    assert p.embedding_rate == 25.0
    assert p.latency_ms == 80.0
    assert p.network_params == 175_124


def test_stride_errors_name_stage():
    base = desk_config()
    bad_t = dataclasses.replace(base, stages=base.stages[:2] + (Stage(1, 2, 4, (4, 4)),))
    with pytest.raises(ConfigError, match="stage 2"):
        plan(bad_t)
    bad_f = dataclasses.replace(base, stages=(Stage(1, 3, 1, (3, 4)),) + base.stages[1:])
    with pytest.raises(ConfigError, match="stage 0"):
        plan(bad_f)


def test_summary_mentions_totals():
    text = plan(desk_config()).summary()
    assert "latency 2 embeddings = 80 ms" in text
    assert "175,124" in text
