import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import lfilter

from vtmap import lsp, vocoder as V
from vtmap.metrics import compute_mcd, segmental_snr

CFG = V.DEFAULT_CONFIG
FS = CFG.sample_rate


def vowel(seconds=1.0, f0=120.0, formants=((600, 80), (1400, 120), (2600, 200)), seed=0):
    """Pulse train through fixed two-pole resonators plus a little noise."""
    n = int(seconds * FS)
    x = np.zeros(n)
    x[np.round(np.arange(0, n, FS / f0)).astype(int).clip(0, n - 1)] = 1.0
    for f, bw in formants:
        r = np.exp(-np.pi * bw / FS)
        x = lfilter([1.0], [1.0, -2 * r * np.cos(2 * np.pi * f / FS), r * r], x)
    x = 0.1 * x / np.max(np.abs(x))
    return x + np.random.default_rng(seed).normal(0, 1e-4, n)


def flatness(x):
    p = np.abs(np.fft.rfft(x * np.hanning(x.size))) ** 2 + 1e-20
    return np.exp(np.mean(np.log(p))) / np.mean(p)


# ----------------------------------------------------------------- framing


@pytest.mark.parametrize("n", [1024, 1886, 1887, 20000, 80000])
def test_frame_count_formula(n):
    assert V.frame_count(n) == (n - 1024) // 863 + 1
    assert V.analyze(np.random.default_rng(0).normal(size=n)).shape == (V.frame_count(n), 25) \
        if n <= 2000 else True


def test_config_validation():
    with pytest.raises(ValueError):
        V.VocoderConfig(frame_shift=2000)
    with pytest.raises(ValueError):
        V.VocoderConfig(alpha=1.0)
    with pytest.raises(ValueError):
        V.VocoderConfig(gamma=0.0)
    with pytest.raises(ValueError):
        V.VocoderConfig(order=0)


# ---------------------------------------------------------------- analysis


def test_white_noise_is_flat():
    rng = np.random.default_rng(1)
    win = V.analysis_window()
    coefs = np.array([V.mgc_analyze(rng.normal(size=1024) * win) for _ in range(100)])
    assert np.all(np.abs(coefs[:, 1:].mean(axis=0)) < 0.05)


def test_gain_shift_identity():
    frame = V.frame_signal(vowel())[5]
    c1 = V.mgc_analyze(frame)
    c2 = V.mgc_analyze(2.0 * frame)
    assert abs(c2[0] - c1[0] - np.log(2.0)) < 1e-6
    np.testing.assert_allclose(c2[1:], c1[1:], atol=1e-6)


@settings(max_examples=10, deadline=None)
@given(scale=st.floats(0.01, 100.0), seed=st.integers(0, 1000))
def test_gain_shift_identity_property(scale, seed):
    frame = np.random.default_rng(seed).normal(size=1024) * V.analysis_window()
    frame = lfilter([1.0], [1.0, -0.9], frame)
    c1, c2 = V.mgc_analyze(frame), V.mgc_analyze(scale * frame)
    assert abs(c2[0] - c1[0] - np.log(scale)) < 1e-6
    np.testing.assert_allclose(c2[1:], c1[1:], atol=1e-6)


def test_silent_frame_floor():
    out, ok = V.mgc_analyze(np.zeros(1024), return_converged=True)
    assert ok
    assert out[0] == np.log(1e-5)
    assert np.all(out[1:] == 0)


def test_nonconvergence_warns_and_returns_iterate():
    cfg = V.VocoderConfig(max_iter=1)
    frame = V.frame_signal(vowel())[3]
    with pytest.warns(V.ConvergenceWarning):
        out, ok = V.mgc_analyze(frame, cfg, return_converged=True)
    assert not ok and np.all(np.isfinite(out))


# --------------------------------------------------------------------- LSP


def test_trivial_polynomial_lsp_uniform():
    out = lsp.mgc_to_mgclsp(np.zeros(25))
    np.testing.assert_allclose(out[1:], np.arange(1, 25) * np.pi / 25, atol=1e-9)
    assert out[0] == 0.0


def random_lsp(rng, m=24, min_gap=0.02):
    while True:
        w = np.sort(rng.uniform(0.01, np.pi - 0.01, m))
        if np.all(np.diff(w) > min_gap):
            return w


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_lsp_round_trip(seed):
    rng = np.random.default_rng(seed)
    vec = np.concatenate([[rng.normal()], random_lsp(rng)])
    mgc = lsp.mgclsp_to_mgc(vec)
    back = lsp.mgc_to_mgclsp(mgc)
    np.testing.assert_allclose(back, vec, atol=1e-6)
    np.testing.assert_allclose(lsp.mgclsp_to_mgc(back), mgc, atol=1e-6)


def test_analysis_lsp_ascending_and_round_trip():
    mgc = V.analyze(vowel())
    out = lsp.track_to_mgclsp(mgc)
    assert np.all(np.diff(out[:, 1:], axis=1) > 0)
    assert np.all((out[:, 1:] > 0) & (out[:, 1:] < np.pi))
    back = np.stack([lsp.mgclsp_to_mgc(r) for r in out])
    np.testing.assert_allclose(back, mgc, atol=1e-6)


def test_non_ascending_lsp_rejected():
    vec = np.concatenate([[0.0], np.arange(1, 25) * np.pi / 25])
    vec[[3, 4]] = vec[[4, 3]]
    with pytest.raises(lsp.LSPError):
        lsp.mgclsp_to_mgc(vec)


def test_unstable_polynomial_reports_frame():
    bad = np.zeros(25)
    bad[1:] = -30.0             # 1 + gamma * c has roots inside the unit circle
    with pytest.raises(lsp.LSPError, match="frame 3"):
        lsp.mgc_to_mgclsp(bad, frame=3)


def test_predicted_lsp_repair():
    vec = np.concatenate([[0.0], np.arange(1, 25) * np.pi / 25])
    vec[5] = vec[6] + 0.01      # out of order
    vec[24] = 3.2               # outside (0, pi)
    mgc = lsp.track_from_mgclsp(vec[None])
    assert np.all(np.isfinite(mgc))


# ---------------------------------------------------------------- filtering


def test_zero_track_is_identity():
    x = np.random.default_rng(2).normal(size=5000)
    track = np.zeros((V.frame_count(x.size), 25))
    np.testing.assert_array_equal(V.inverse_filter(x, track), x)
    np.testing.assert_array_equal(V.mglsa_synthesize(x, track), x)


def test_inverse_filter_flattens_vowel():
    x = vowel()
    res = V.inverse_filter(x, V.analyze(x))
    assert res.size == x.size
    assert flatness(res) > 5 * flatness(x)


def test_round_trip_snr_and_mcd():
    x = vowel()
    mgc = V.analyze(x)
    y = V.mglsa_synthesize(V.inverse_filter(x, mgc), mgc)
    assert segmental_snr(x, y) >= 20.0
    a = lsp.track_to_mgclsp(mgc)
    b = lsp.track_to_mgclsp(V.analyze(y))
    assert compute_mcd(b, a) <= 1.0


def test_alignment_error():
    x = np.zeros(20000)
    with pytest.raises(V.AlignmentError):
        V.inverse_filter(x, np.zeros((V.frame_count(x.size) + 2, 25)))
    with pytest.raises(V.AlignmentError):
        V.mglsa_synthesize(x, np.zeros((V.frame_count(x.size), 24)))
    # one frame of slack is tolerated
    V.mglsa_synthesize(x, np.zeros((V.frame_count(x.size) - 1, 25)))


LPC_CFG = V.VocoderConfig(alpha=0.0, gamma=-1.0)


def test_lpc_degenerate_case_matches_lfilter():
    rng = np.random.default_rng(3)
    x = rng.normal(size=6000)
    # a stable all-pole filter: 1 / (1 - sum c_m z^-m)
    a = np.poly([0.9 * np.exp(0.4j), 0.9 * np.exp(-0.4j), 0.7, -0.5])
    c = np.zeros(25)
    c[0] = np.log(0.3)
    c[1:5] = -a[1:]
    track = np.repeat(c[None], V.frame_count(x.size), axis=0)
    y = V.mglsa_synthesize(x, track, LPC_CFG)
    ref = lfilter([0.3], a, x)
    assert np.sqrt(np.mean((y - ref) ** 2)) < 1e-6


def test_lpc_degenerate_time_varying_matches_loop():
    rng = np.random.default_rng(4)
    x = rng.normal(size=4000)
    t = V.frame_count(x.size)
    track = np.zeros((t, 25))
    track[:, 0] = np.linspace(-1.0, 0.5, t)
    track[:, 1] = np.linspace(0.5, 1.2, t)      # c1
    track[:, 2] = np.linspace(-0.3, -0.6, t)    # c2 keeps the pole pair stable
    y = V.mglsa_synthesize(x, track, LPC_CFG)
    centers = np.arange(t) * 863 + 512.0
    pos = np.arange(x.size)
    g = np.interp(pos, centers, np.exp(track[:, 0]))
    c1 = np.interp(pos, centers, track[:, 1])
    c2 = np.interp(pos, centers, track[:, 2])
    ref = np.zeros_like(x)
    y1 = y2 = 0.0
    for n in range(x.size):
        v = x[n] + c1[n] * y1 + c2[n] * y2
        y2, y1 = y1, v
        ref[n] = g[n] * v
    assert np.sqrt(np.mean((y - ref) ** 2)) < 1e-6


def test_filter_requires_integer_stages():
    with pytest.raises(ValueError, match="gamma"):
        V.VocoderConfig(gamma=-0.4).n_stages


# ----------------------------------------------------------------------- F0


def test_f0_pulse_train():
    n = 2 * FS
    x = np.zeros(n)
    x[::200] = 1.0
    f0 = V.extract_f0(x)
    assert np.all(np.abs(f0 - 100.0) <= 2.0)


def test_f0_silence():
    assert np.all(V.extract_f0(np.zeros(FS)) == 0)


def test_f0_white_noise_mostly_unvoiced():
    f0 = V.extract_f0(np.random.default_rng(5).normal(size=5 * FS))
    assert np.mean(f0 == 0) >= 0.9


def test_f0_vowel_and_range():
    f0 = V.extract_f0(vowel(f0=150.0))
    voiced = f0[f0 > 0]
    assert voiced.size > 0.9 * f0.size
    assert np.all(np.abs(voiced - 150.0) < 3.0)
