import numpy as np
import pytest

from vtmap import syncheck as S
from vtmap.corpus import SyntheticSpec, generate_synthetic_corpus
from vtmap.formats import read_kv, write_mrif


def test_constant_sequence_is_zero():
    frames = np.full((5, 68, 68), 0.3)
    np.testing.assert_array_equal(S.frame_diff_curve(frames), np.zeros(4))


def test_replaced_frame_gives_two_equal_points():
    rng = np.random.default_rng(0)
    frames = np.repeat(rng.random((1, 68, 68)), 8, axis=0)
    frames[4] = rng.random((68, 68))
    d = S.frame_diff_curve(frames)
    assert np.flatnonzero(d).tolist() == [3, 4]
    assert d[3] == d[4]


def test_linear_ramp_is_constant():
    c = np.random.default_rng(1).random((68, 68)) * 0.01
    frames = np.arange(6)[:, None, None] * c
    np.testing.assert_allclose(S.frame_diff_curve(frames), np.full(5, c.mean()), rtol=1e-12)


def test_curve_invariances():
    rng = np.random.default_rng(2)
    frames = rng.random((10, 68, 68))
    d = S.frame_diff_curve(frames)
    np.testing.assert_allclose(S.frame_diff_curve(frames + rng.random((68, 68))), d, atol=1e-12)
    np.testing.assert_allclose(S.frame_diff_curve(0.5 * frames), 0.5 * d, rtol=1e-12)


def test_curve_needs_two_frames():
    with pytest.raises(ValueError):
        S.frame_diff_curve(np.zeros((1, 68, 68)))


def test_flag_rules():
    assert S.flag_discontinuities(np.full(50, 0.02)).size == 0
    curve = np.full(50, 0.02)
    curve[17] = 0.4
    assert S.flag_discontinuities(curve).tolist() == [17]
    with pytest.raises(ValueError):
        S.flag_discontinuities([1.0, 2.0])


def test_flags_scale_invariant():
    curve = np.random.default_rng(3).gamma(4.0, 0.01, size=200)
    curve[[40, 150]] += 0.5
    base = S.flag_discontinuities(curve)
    assert base.tolist() == [40, 150]
    np.testing.assert_array_equal(S.flag_discontinuities(curve * 7.5), base)


def test_gaussian_false_alarm_rate():
    clean = 0
    for seed in range(200):
        curve = np.random.default_rng(seed).normal(1.0, 0.1, size=1000)
        clean += S.flag_discontinuities(curve).size == 0
    assert clean / 200 >= 0.99


def test_cut_timestamp_at_frame_117(tmp_path):
    rng = np.random.default_rng(4)
    frames = 0.5 + 0.01 * rng.normal(size=(150, 68, 68))
    frames[117:] += 0.2
    write_mrif(tmp_path / "spk" / "u.mrif", np.clip(frames, 0, 1))
    rep = S.corpus_sync_report(tmp_path, "spk")
    assert rep.flagged["u"].tolist() == [116]
    assert rep.timestamps("u") == [117 / 23.18]
    assert round(rep.timestamps("u")[0], 2) == 5.05
    rep.write(tmp_path / "sync.txt", curve_dir=tmp_path / "curves")
    kv = read_kv(tmp_path / "sync.txt")
    assert kv["flagged.u"] == "117" and kv["seconds.u"] == "5.05"
    assert kv["fraction"] == "1.0"
    assert len((tmp_path / "curves" / "u.curve.txt").read_text().splitlines()) == 149


def test_synthetic_corpus_report(tmp_path):
    spec = SyntheticSpec(n_utterances=8, duration=3.0, seed=5, n_desync=3)
    generate_synthetic_corpus(spec, tmp_path)
    cuts = read_kv(tmp_path / "synth" / "cuts.txt")
    rep = S.corpus_sync_report(tmp_path, "synth")
    for key, value in cuts.items():
        utt = key.split(".", 1)[1]
        expected = [int(value)] if value else []
        assert [int(i) + 1 for i in rep.flagged[utt]] == expected
    assert rep.fraction == 3 / 8


def test_clean_corpus_fraction_zero(tmp_path):
    generate_synthetic_corpus(SyntheticSpec(n_utterances=4, duration=3.0, seed=6), tmp_path)
    assert S.corpus_sync_report(tmp_path, "synth").fraction == 0.0


def test_unreadable_recording_is_reported(tmp_path):
    generate_synthetic_corpus(SyntheticSpec(n_utterances=2, duration=2.0, seed=7), tmp_path)
    (tmp_path / "synth" / "bad.mrif").write_bytes(b"MRIX")
    rep = S.corpus_sync_report(tmp_path, "synth")
    assert "bad" in rep.errors and "magic" in rep.errors["bad"]
    assert sorted(rep.flagged) == ["utt0000", "utt0001"]
    assert dict(rep.items())["recordings"] == 2
