"""Mel-generalized cepstral analysis and MGLSA filtering.

The spectral model is

    H(z) = G * (1 + gamma * sum_{m=1}^{M} c(m) zt^-m) ** (1 / gamma)

with ``zt^-1 = (z^-1 - alpha) / (1 - alpha z^-1)``. A per-frame coefficient
vector stores ``[log G, c(1), ..., c(M)]``: the gain-normalized generalized
cepstrum with a log gain, so rescaling the waveform only moves element 0.

Synthesis runs ``-1/gamma`` cascaded warped all-pole stages, and the inverse
(residual) filter runs the matching all-zero stages; for a shared coefficient
track the two are exact inverses of each other.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

from . import _kernels


class ConvergenceWarning(RuntimeWarning):
    """Newton iteration hit the iteration cap."""


class AlignmentError(ValueError):
    """A feature track does not match the audio it should filter."""


@dataclass(frozen=True)
class VocoderConfig:
    sample_rate: int = 20000
    frame_shift: int = 863
    frame_length: int = 1024
    order: int = 24
    alpha: float = 0.42
    gamma: float = -1.0 / 3.0
    f0_min: float = 50.0
    f0_max: float = 400.0
    voicing_threshold: float = 0.3
    n_fft: int = 2048
    max_iter: int = 30
    tol: float = 1e-6
    silence_energy: float = 1e-10
    gain_floor: float = 1e-5

    def __post_init__(self):
        if not 0 < self.frame_shift < self.frame_length:
            raise ValueError("frame_shift must be positive and below frame_length")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not -1.0 <= self.gamma < 0.0:
            raise ValueError(f"gamma must lie in [-1, 0), got {self.gamma}")
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.n_fft < self.frame_length:
            raise ValueError("n_fft must cover the frame")

    @property
    def n_stages(self):
        """Number of cascaded filter stages, ``-1/gamma``."""
        q = -1.0 / self.gamma
        if abs(q - round(q)) > 1e-9:
            raise ValueError(f"filtering needs gamma = -1/n for integer n, got {self.gamma}")
        return int(round(q))

    @property
    def dim(self):
        return self.order + 1


DEFAULT_CONFIG = VocoderConfig()


def frame_count(n_samples, config=DEFAULT_CONFIG):
    """Number of complete analysis frames in ``n_samples`` samples."""
    if n_samples < config.frame_length:
        return 0
    return (n_samples - config.frame_length) // config.frame_shift + 1


def frame_signal(audio, config=DEFAULT_CONFIG, window=True):
    """Slice ``audio`` into ``[T, frame_length]`` frames, Blackman-windowed by default."""
    audio = np.asarray(audio, dtype=np.float64)
    n = frame_count(audio.size, config)
    starts = np.arange(n) * config.frame_shift
    frames = audio[starts[:, None] + np.arange(config.frame_length)]
    if window:
        frames = frames * analysis_window(config)
    return frames


def analysis_window(config=DEFAULT_CONFIG):
    return get_window("blackman", config.frame_length, fftbins=False)


# ----------------------------------------------------------------- analysis


class _Basis:
    """Frequency-sampled basis ``Phi_m(e^{jw})`` and quadrature weights."""

    _cache = {}

    def __new__(cls, config):
        key = (config.order, config.alpha, config.n_fft)
        if key not in cls._cache:
            self = super().__new__(cls)
            nfft, m, a = config.n_fft, config.order, config.alpha
            w = 2 * np.pi * np.arange(nfft // 2 + 1) / nfft
            z1 = np.exp(-1j * w)
            zt = (z1 - a) / (1 - a * z1)
            first = (1 - a * a) * z1 / (1 - a * z1)
            self.phi = first[:, None] * zt[:, None] ** np.arange(m)[None, :]
            weights = np.full(w.size, 2.0)
            weights[0] = weights[-1] = 1.0
            self.weights = weights / nfft
            # Re(Phi_m conj(Phi_n)) per bin, for the curvature term
            self.gram = np.real(self.phi[:, :, None] * np.conj(self.phi[:, None, :]))
            cls._cache[key] = self
        return cls._cache[key]


def _periodogram(frame, config):
    spec = np.fft.rfft(frame, config.n_fft)
    norm = np.sum(analysis_window(config) ** 2)
    return (spec.real ** 2 + spec.imag ** 2) / norm


def _criterion(b, pgram, basis, gamma, q):
    p = 1.0 + gamma * (basis.phi @ b)
    mag2 = p.real ** 2 + p.imag ** 2
    return float(np.sum(basis.weights * pgram * mag2 ** q)), p, mag2


def _fit_frame(pgram, config):
    """Newton minimization of the generalized log-spectral criterion.

    Returns ``(b, eps, converged)`` where ``b`` are the coefficients of the
    normalized inverse filter in the ``Phi`` basis and ``eps`` the residual
    power (the squared gain).
    """
    basis = _Basis(config)
    g = config.gamma
    q = -1.0 / g
    b = np.zeros(config.order)
    eps, p, mag2 = _criterion(b, pgram, basis, g, q)
    wi = basis.weights * pgram
    for _ in range(config.max_iter):
        proj = np.real(np.conj(p)[:, None] * basis.phi)
        w1 = wi * q * mag2 ** (q - 1)
        grad = 2 * g * (w1 @ proj)
        hess = 2 * g * g * np.einsum("k,kmn->mn", w1, basis.gram)
        if q != 1.0:
            w2 = wi * q * (q - 1) * mag2 ** (q - 2) * 4 * g * g
            hess += proj.T @ (w2[:, None] * proj)
        step = -np.linalg.solve(hess, grad)
        slope = float(grad @ step)
        t = 1.0
        while True:
            new_eps, new_p, new_mag2 = _criterion(b + t * step, pgram, basis, g, q)
            if new_eps <= eps + 1e-4 * t * slope or t < 1e-10:
                break
            t *= 0.5
        b = b + t * step
        change = abs(eps - new_eps) / max(eps, 1e-300)
        eps, p, mag2 = new_eps, new_p, new_mag2
        if change < config.tol:
            return b, eps, True
    return b, eps, False


def _b_to_mgc(b, eps, config):
    a, g = config.alpha, config.gamma
    a0 = 1.0 + g * a * b[0]
    shifted = np.append(b[1:], 0.0)
    c = (b + a * shifted) / a0
    log_gain = 0.5 * np.log(eps) + np.log(a0) / g
    return np.concatenate([[log_gain], c])


def mgc_analyze(frame, config=DEFAULT_CONFIG, return_converged=False):
    """Mel-generalized cepstrum ``[log G, c(1..M)]`` of one windowed frame.

    Parameters
    ----------
    frame : ndarray, shape (frame_length,)
        Samples already multiplied by the Blackman analysis window.
    config : VocoderConfig
    return_converged : bool
        Also return whether the Newton iteration met the tolerance.

    Near-silent frames (energy below ``silence_energy``) map to a floored gain
    and zero coefficients. Non-convergence emits :class:`ConvergenceWarning`
    and returns the last iterate.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if np.sum(frame * frame) < config.silence_energy:
        out = np.zeros(config.dim)
        out[0] = np.log(config.gain_floor)
        return (out, True) if return_converged else out
    b, eps, ok = _fit_frame(_periodogram(frame, config), config)
    if not ok:
        warnings.warn(f"mgc_analyze: no convergence in {config.max_iter} iterations",
                      ConvergenceWarning, stacklevel=2)
    out = _b_to_mgc(b, eps, config)
    return (out, ok) if return_converged else out


def analyze(audio, config=DEFAULT_CONFIG):
    """Frame-synchronous MGC track ``[T, order+1]`` of a waveform."""
    frames = frame_signal(audio, config)
    out = np.empty((frames.shape[0], config.dim))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for t, fr in enumerate(frames):
            out[t] = mgc_analyze(fr, config)
    return out


# ---------------------------------------------------------------- filtering


def mgc_to_filter(mgc, config=DEFAULT_CONFIG):
    """Per-frame gain and stage coefficients for the warped cascade.

    Returns ``(gain [T], coefs [T, M+1])``; ``coefs[:, 0]`` is unused.
    """
    mgc = np.atleast_2d(np.asarray(mgc, dtype=np.float64))
    a, g = config.alpha, config.gamma
    c = mgc[:, 1:]
    beta = np.empty_like(c)
    beta[:, -1] = c[:, -1]
    for m in range(c.shape[1] - 2, -1, -1):
        beta[:, m] = c[:, m] - a * beta[:, m + 1]
    beta0 = 1.0 - g * a * beta[:, 0]
    if np.any(beta0 <= 0):
        raise ValueError("mgc_to_filter: coefficients do not describe a minimum-phase filter")
    gain = np.exp(mgc[:, 0]) * beta0 ** (1.0 / g)
    coefs = np.zeros((mgc.shape[0], c.shape[1] + 1))
    coefs[:, 1:] = g * beta / beta0[:, None]
    return gain, coefs


def _per_sample(track, n_samples, config):
    """Linearly interpolate frame-wise rows onto samples between frame centres."""
    centers = np.arange(track.shape[0]) * config.frame_shift + config.frame_length / 2.0
    pos = np.arange(n_samples, dtype=np.float64)
    if track.shape[0] == 1:
        return np.repeat(track, n_samples, axis=0)
    k = np.clip(np.searchsorted(centers, pos, side="right") - 1, 0, track.shape[0] - 2)
    frac = np.clip((pos - centers[k]) / config.frame_shift, 0.0, 1.0)[:, None]
    return (1.0 - frac) * track[k] + frac * track[k + 1]


def _check_track(n_samples, mgc, config):
    mgc = np.atleast_2d(np.asarray(mgc, dtype=np.float64))
    if mgc.shape[1] != config.dim:
        raise AlignmentError(f"track has {mgc.shape[1]} coefficients, expected {config.dim}")
    expected = frame_count(n_samples, config)
    if mgc.shape[0] == 0 or abs(mgc.shape[0] - expected) > 1:
        raise AlignmentError(
            f"track has {mgc.shape[0]} frames but {n_samples} samples give {expected}")
    return mgc


def _sample_filters(n_samples, mgc, config):
    gain, coefs = mgc_to_filter(mgc, config)
    rows = np.column_stack([gain, coefs])
    rows = _per_sample(rows, n_samples, config)
    return rows[:, 0].copy(), np.ascontiguousarray(rows[:, 1:])


def inverse_filter(audio, mgc, config=DEFAULT_CONFIG):
    """Residual excitation: ``audio`` passed through the inverse MGLSA filter."""
    audio = np.asarray(audio, dtype=np.float64)
    mgc = _check_track(audio.size, mgc, config)
    gain, coefs = _sample_filters(audio.size, mgc, config)
    x = audio / gain
    y = np.empty_like(x)
    for _ in range(config.n_stages):
        _kernels.warped_allzero(x, coefs, config.alpha, y)
        x, y = y, x
    return x


def mglsa_synthesize(residual, mgc, config=DEFAULT_CONFIG):
    """Filter an excitation through the time-varying MGLSA synthesis filter."""
    residual = np.asarray(residual, dtype=np.float64)
    mgc = _check_track(residual.size, mgc, config)
    gain, coefs = _sample_filters(residual.size, mgc, config)
    x = residual.copy()
    y = np.empty_like(x)
    for _ in range(config.n_stages):
        _kernels.warped_allpole(x, coefs, config.alpha, y)
        x, y = y, x
    return x * gain


# ----------------------------------------------------------------------- F0


def extract_f0(audio, config=DEFAULT_CONFIG):
    """Frame-synchronous F0 in Hz from the normalized autocorrelation (0 = unvoiced).

    The lag search covers ``f0_max`` down to ``f0_min``. Among local maxima
    the earliest one within 90% of the best is taken, which avoids
    picking a multiple of the period.
    """
    frames = frame_signal(audio, config, window=False)
    fs = config.sample_rate
    lo = int(np.floor(fs / config.f0_max))
    hi = min(int(np.ceil(fs / config.f0_min)), config.frame_length - 2)
    f0 = np.zeros(frames.shape[0])
    n = config.frame_length
    for t, x in enumerate(frames):
        x = x - x.mean()
        energy = np.cumsum(np.concatenate([[0.0], x * x]))
        if energy[-1] < config.silence_energy:
            continue
        spec = np.fft.rfft(x, 2 * n)
        ac = np.fft.irfft(spec.real ** 2 + spec.imag ** 2)[:hi + 2]
        lags = np.arange(lo - 1, hi + 2)
        e_head = energy[n - lags]           # x[0 : n-lag]
        e_tail = energy[n] - energy[lags]   # x[lag : n]
        denom = np.sqrt(np.maximum(e_head * e_tail, 1e-300))
        r = ac[lags] / denom
        inner = np.arange(1, r.size - 1)
        peaks = inner[(r[inner] >= r[inner - 1]) & (r[inner] > r[inner + 1])]
        if peaks.size == 0:
            continue
        best = r[peaks].max()
        if best <= config.voicing_threshold:
            continue
        k = peaks[r[peaks] >= 0.9 * best][0]
        # parabolic refinement of the peak lag
        y0, y1, y2 = r[k - 1], r[k], r[k + 1]
        den = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / den if den != 0 else 0.0
        lag = lags[k] + np.clip(shift, -0.5, 0.5)
        freq = fs / lag
        if config.f0_min <= freq <= config.f0_max:
            f0[t] = freq
    return f0
