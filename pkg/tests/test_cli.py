import json

import numpy as np
import pytest

from stftcodec import cli
from stftcodec.bitstream import HEADER_BYTES, read_stream
from stftcodec.config import ConfigError, desk_config, full_scale_config, parse_config_text
from stftcodec.rvq import depth_for_bitrate
from stftcodec.synth import music_clip
from stftcodec.trainer import NumericError
from stftcodec.wav import WavFormatError, read_wav, write_wav

TINY = """\
# tiny model, a handful of steps
preset = tiny
steps = 3
dataset_dir = data
checkpoint_every = 0
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "data").mkdir()
    for i in range(2):
        write_wav(root / "data" / f"c{i}.wav", 8000, music_clip(0.5, 8000, i))
    (root / "run.cfg").write_text(TINY)
    ckpt = root / "m.ckpt"
    assert cli.main(["train", str(root / "run.cfg"), "--checkpoint", str(ckpt),
                     "--log", str(root / "log.jsonl")]) == 0
    write_wav(root / "in.wav", 8000, music_clip(0.4, 8000, 9))
    return root, ckpt


def test_train_log_lines(trained):
    root, ckpt = trained
    rows = [json.loads(l) for l in (root / "log.jsonl").read_text().splitlines()]
    assert [r["step"] for r in rows] == [0, 1, 2]
    assert {"l_d", "l_adv", "l_feat", "l_rec", "l_com", "l_total"} <= set(rows[0])


def test_train_resume_extends(trained, tmp_path):
    root, ckpt = trained
    out = tmp_path / "more.ckpt"
    assert cli.main(["train", str(root / "run.cfg"), "--steps", "5", "--resume", str(ckpt),
                     "--checkpoint", str(out), "--log", str(tmp_path / "l.jsonl")]) == 0
    steps = [json.loads(l)["step"] for l in (tmp_path / "l.jsonl").read_text().splitlines()]
    assert steps == [3, 4]


def test_encode_decode_roundtrip(trained):
    root, ckpt = trained
    s1, s2 = root / "a.spst", root / "b.spst"
    assert cli.main(["encode", str(ckpt), str(root / "in.wav"), str(s1), "--depth", "2"]) == 0
    assert cli.main(["encode", str(ckpt), str(root / "in.wav"), str(s2), "--depth", "2", "--streaming"]) == 0
    assert s1.read_bytes() == s2.read_bytes()
    h, frames = read_stream(s1.read_bytes())
    assert h.r == 2 and h.frame_count == 0.4 * 8000 // 64
    out = root / "out.wav"
    assert cli.main(["decode", str(ckpt), str(s1), str(out)]) == 0
    rate, audio = read_wav(out)
    assert rate == 8000 and audio.shape == (1, h.frame_count * 64)
    out2 = root / "out2.wav"
    assert cli.main(["decode", str(ckpt), str(s1), str(out2), "--streaming"]) == 0
    # streaming output includes the flushed look-ahead embedding
    np.testing.assert_allclose(read_wav(out2)[1][:, :audio.shape[1]], audio, atol=1e-5)


def test_encode_decode_are_pure(trained, tmp_path):
    root, ckpt = trained
    outs = []
    for i in range(2):
        s, w = tmp_path / f"{i}.spst", tmp_path / f"{i}.wav"
        assert cli.main(["encode", str(ckpt), str(root / "in.wav"), str(s)]) == 0
        assert cli.main(["decode", str(ckpt), str(s), str(w), "--format", "pcm16"]) == 0
        outs.append((s.read_bytes(), w.read_bytes()))
    assert outs[0] == outs[1]


def test_bitrate_flag(trained):
    root, ckpt = trained
    s = root / "k.spst"
    assert cli.main(["encode", str(ckpt), str(root / "in.wav"), str(s), "--bitrate-kbps", "0.75"]) == 0
    assert read_stream(s.read_bytes())[0].r == 3
    assert cli.main(["encode", str(ckpt), str(root / "in.wav"), str(s), "--bitrate-kbps", "0.3"]) == 3


def test_bitrate_mapping_full_scale():
    cfg = full_scale_config()
    assert depth_for_bitrate(cfg.rvq, cfg.embedding_rate, 16) == 64
    assert depth_for_bitrate(cfg.rvq, cfg.embedding_rate, 4) == 16
    with pytest.raises(ConfigError, match="valid kbps"):
        depth_for_bitrate(cfg.rvq, cfg.embedding_rate, 3.3)


def test_both_rate_flags_is_usage_error(trained):
    root, ckpt = trained
    with pytest.raises(SystemExit) as e:
        cli.main(["encode", str(ckpt), "x.wav", "y.spst", "--depth", "2", "--bitrate-kbps", "0.5"])
    assert e.value.code == 2


def test_bad_depth_and_model_mismatch(trained, tmp_path):
    root, ckpt = trained
    assert cli.main(["encode", str(ckpt), str(root / "in.wav"), str(tmp_path / "s"), "--depth", "9"]) == 3
    s = tmp_path / "m.spst"
    cli.main(["encode", str(ckpt), str(root / "in.wav"), str(s), "--depth", "1"])
    data = bytearray(s.read_bytes())
    data[HEADER_BYTES - 1] ^= 1
    s.write_bytes(bytes(data))
    assert cli.main(["decode", str(ckpt), str(s), str(tmp_path / "o.wav")]) == 3


def test_wrong_input_format(trained, tmp_path, capsys):
    root, ckpt = trained
    write_wav(tmp_path / "st.wav", 8000, np.zeros((2, 800)))
    assert cli.main(["encode", str(ckpt), str(tmp_path / "st.wav"), str(tmp_path / "s")]) == 3
    assert "channel" in capsys.readouterr().err
    write_wav(tmp_path / "sr.wav", 16000, np.zeros((1, 800)))
    assert cli.main(["encode", str(ckpt), str(tmp_path / "sr.wav"), str(tmp_path / "s")]) == 3
    assert "resample" in capsys.readouterr().err


def test_eval_json(trained, capsys):
    root, ckpt = trained
    capsys.readouterr()
    assert cli.main(["eval", str(ckpt), str(root / "in.wav"), "--depths", "1,4"]) == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert [r["depth"] for r in rows] == [1, 4]
    assert rows[1]["kbps"] == 1.0
    assert all(np.isfinite(r["mel_distance"]) for r in rows)
    assert cli.main(["eval", str(ckpt), str(root / "in.wav"), "--depths", "a"]) == 2


def test_info(trained, capsys):
    root, ckpt = trained
    s = root / "i.spst"
    cli.main(["encode", str(ckpt), str(root / "in.wav"), str(s), "--depth", "4"])
    capsys.readouterr()
    assert cli.main(["info", str(s)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["r"] == 4 and info["kbps"] == 1.0 and info["sample_rate"] == 8000
    assert cli.main(["info", "--model", str(ckpt)]) == 0
    assert "latency 2 embeddings" in capsys.readouterr().out
    assert cli.main(["info"]) == 2


def test_numeric_failure_exit_code(monkeypatch, trained, tmp_path):
    root, _ = trained

    def boom(*a, **k):
        raise NumericError("non-finite l_rec at step 0")

    monkeypatch.setattr(cli, "train", boom)
    assert cli.main(["train", str(root / "run.cfg"), "--checkpoint", str(tmp_path / "c")]) == 4


def test_missing_data_dir(tmp_path):
    (tmp_path / "c.cfg").write_text("preset = tiny\ndataset_dir = nowhere\n")
    assert cli.main(["train", str(tmp_path / "c.cfg")]) == 3


# -- config files and WAV I/O -----------------------------------------------------------

def test_config_parsing():
    cfg = parse_config_text("""
        preset = desk
        model.audio_channels = 2
        model.rvq.n_quantizers = 16   # deeper stack
        mel_windows = 64, 128
        weights.feat = 50
        lr = 2e-4
    """)
    assert cfg.model.audio_channels == 2 and cfg.model.rvq.n_quantizers == 16
    assert cfg.mel_windows == (64, 128) and cfg.weights.feat == 50.0 and cfg.lr == 2e-4
    assert cfg.model.stages == desk_config(2).stages
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config_text("model.nope = 1")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("just words")
    with pytest.raises(ConfigError, match="preset"):
        parse_config_text("preset = huge")
    with pytest.raises(ConfigError, match="divisible by 4"):
        parse_config_text("model.rvq.n_quantizers = 6")


@pytest.mark.parametrize("fmt,tol", [("float32", 1e-7), ("pcm16", 1 / 32768)])
def test_wav_roundtrip(tmp_path, fmt, tol):
    x = 0.5 * np.random.default_rng(0).uniform(-1, 1, (2, 1000))
    write_wav(tmp_path / "a.wav", 22050, x, fmt)
    rate, y = read_wav(tmp_path / "a.wav")
    assert rate == 22050 and y.shape == (2, 1000)
    assert np.max(np.abs(x - y)) <= tol


def test_wav_malformed(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"not a wav")
    with pytest.raises(WavFormatError):
        read_wav(tmp_path / "bad.wav")


@pytest.mark.xfail(strict=False, reason="after 20k desk steps the decoder, not the quantizer, bounds quality: "
                                         "mel distance is flat within about 3% across depths 2, 4, 8")
def test_eval_desk_depth_sweep(capsys):
    """On the trained desk model, mel distance does not grow with depth."""
    import desk_run

    res = desk_run.run(20000, progress=False)
    run_dir = desk_run.ROOT / res["key"]
    clip = sorted((run_dir / "corpus").glob("*.wav"))[0]
    capsys.readouterr()
    assert cli.main(["eval", str(run_dir / "state.ckpt"), str(clip), "--depths", "2,4,8"]) == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    mel = [r["mel_distance"] for r in rows]
    assert mel[0] >= mel[1] >= mel[2], mel
