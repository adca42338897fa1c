"""Corpus loading, alignment, normalization, windowing and splitting.

A corpus directory holds ``<corpus>/<speaker>/<utt_id>.mrif`` frame stacks
with matching ``<utt_id>.wav`` audio and, once analyzed, ``<utt_id>.mgcf``
feature files. :func:`generate_synthetic_corpus` writes a small corpus in
that layout whose acoustics are a known function of the imaged shape.
"""

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import _kernels
from .formats import FormatError, read_mgcf, read_mrif, read_wav, write_kv, write_mrif, write_wav
from .vocoder import DEFAULT_CONFIG, frame_count

FRAME_RATE = 23.18
WINDOW_LENGTH = 10


class AudioTooShortError(ValueError):
    pass


@dataclass
class Utterance:
    """One recording: frames in [0, 1], audio at 20 kHz and optional features."""

    utt_id: str
    frames: np.ndarray
    audio: np.ndarray
    targets: np.ndarray = None
    f0: np.ndarray = None
    residual: np.ndarray = None

    @property
    def n_frames(self):
        return self.frames.shape[0]


def load_utterance(frame_path, audio_path, utt_id=None):
    """Read an MRIF/WAV pair.

    Pixels are scaled to [0, 1]. Format problems raise a subclass of
    :class:`~vtmap.formats.FormatError` naming the offending file.
    """
    frames = read_mrif(frame_path)
    audio = read_wav(audio_path)
    if utt_id is None:
        utt_id = Path(frame_path).stem
    return Utterance(utt_id, frames, audio)


def align_streams(n_frames, n_samples, config=DEFAULT_CONFIG):
    """Common length of a frame stream and the feature frames of its audio.

    ``T = min(T_m, floor((N - frame_length) / frame_shift) + 1)``.
    """
    if n_frames < 1:
        raise ValueError(f"need at least one image frame, got {n_frames}")
    if n_samples < config.frame_length:
        raise AudioTooShortError(
            f"audio has {n_samples} samples, fewer than one analysis frame ({config.frame_length})")
    return min(int(n_frames), frame_count(n_samples, config))


def speaker_dir(corpus_dir, speaker):
    return Path(corpus_dir) / speaker


def list_utterances(corpus_dir, speaker):
    """Sorted utterance ids that have both an ``.mrif`` and a ``.wav`` file."""
    root = speaker_dir(corpus_dir, speaker)
    if not root.is_dir():
        raise FileNotFoundError(f"no speaker directory {root}")
    ids = sorted(p.stem for p in root.glob("*.mrif") if p.with_suffix(".wav").exists())
    return ids


def load_corpus(corpus_dir, speaker, utt_ids=None, with_features=True, with_audio=True):
    """Load utterances with their analyzed features, truncated to a common length.

    Features come from ``<utt_id>.mgcf`` next to the frames, written by the
    ``analyze`` step. Without features only the frame stream is returned.
    """
    root = speaker_dir(corpus_dir, speaker)
    if utt_ids is None:
        utt_ids = list_utterances(corpus_dir, speaker)
    out = []
    for utt_id in utt_ids:
        frames = read_mrif(root / f"{utt_id}.mrif")
        audio = read_wav(root / f"{utt_id}.wav") if with_audio or with_features else None
        utt = Utterance(utt_id, frames, audio if with_audio else None)
        if with_features:
            feats, f0 = read_mgcf(root / f"{utt_id}.mgcf")
            t = align_streams(frames.shape[0], audio.size)
            if feats.shape[0] < t:
                raise FormatError(f"{root / (utt_id + '.mgcf')}: {feats.shape[0]} feature frames,"
                                  f" alignment needs {t}")
            utt.frames = frames[:t]
            utt.targets = feats[:t]
            utt.f0 = f0[:t]
        out.append(utt)
    return out


# -------------------------------------------------------------- normalizer


@dataclass
class Normalizer:
    """Per-coefficient z-scoring fitted on training targets."""

    mean: np.ndarray
    std: np.ndarray
    floor: float = 1e-8

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), self.floor)

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def fit_normalizer(targets):
    """Fit a :class:`Normalizer` over all frames of a list of target matrices."""
    targets = [np.atleast_2d(t) for t in targets]
    if not targets:
        raise ValueError("fit_normalizer: no training targets")
    stacked = np.concatenate(targets, axis=0)
    if stacked.shape[0] < 2:
        raise ValueError("fit_normalizer: need at least two frames")
    mean = stacked.mean(axis=0)
    # constant coefficients keep their exact value so they normalize to 0
    const = np.all(stacked == stacked[0], axis=0)
    mean[const] = stacked[0, const]
    return Normalizer(mean, stacked.std(axis=0))


# --------------------------------------------------------------- windowing


def window_indices(n_frames, length=WINDOW_LENGTH):
    """``[T, L]`` frame indices; row ``t`` is ``t-L+1 .. t`` clamped at 0."""
    if n_frames < 1:
        raise ValueError("window_indices: empty frame sequence")
    t = np.arange(n_frames)[:, None] + np.arange(-length + 1, 1)[None, :]
    return np.maximum(t, 0)


def make_sequence_windows(frames, length=WINDOW_LENGTH):
    """Stack causal windows ``[T, L, ...]``; early windows repeat frame 0."""
    frames = np.asarray(frames)
    return frames[window_indices(frames.shape[0], length)]


# --------------------------------------------------------------- splitting


@dataclass(frozen=True)
class SplitSpec:
    train: int = 430
    validation: int = 20
    test: int = 10
    seed: int = 0
    proportional: bool = False

    @property
    def counts(self):
        return (self.train, self.validation, self.test)


def largest_remainder(counts, total):
    """Scale ``counts`` to sum to ``total``, Hamilton (largest remainder) rounding."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.sum() <= 0:
        raise ValueError("split counts must have a positive sum")
    quota = counts * total / counts.sum()
    base = np.floor(quota).astype(int)
    short = total - int(base.sum())
    # ties go to the earlier split
    order = sorted(range(len(counts)), key=lambda i: (-(quota[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return tuple(int(b) for b in base)


def split_corpus(utterances, spec=SplitSpec()):
    """Partition utterances (or ids) into train/validation/test.

    Items are sorted by identifier, shuffled with ``spec.seed`` and cut.
    With ``spec.proportional`` the counts are rescaled to the corpus size
    (largest remainder, then any requested part left empty takes one item
    from the largest part); otherwise they must add up to it.
    """
    items = list(utterances)
    key = (lambda u: u.utt_id) if items and isinstance(items[0], Utterance) else (lambda u: u)
    items.sort(key=key)
    n = len(items)
    counts = spec.counts
    if any(c < 0 for c in counts):
        raise ValueError(f"negative split count in {counts}")
    if spec.proportional:
        counts = list(largest_remainder(counts, n))
        # small corpora: keep at least one item in every requested part
        for i, want in enumerate(spec.counts):
            if want > 0 and counts[i] == 0 and max(counts) > 1:
                counts[int(np.argmax(counts))] -= 1
                counts[i] = 1
        counts = tuple(counts)
    elif sum(counts) > n:
        raise ValueError(f"split counts {counts} exceed corpus size {n}")
    elif sum(counts) != n:
        raise ValueError(f"split counts {counts} do not add up to corpus size {n}")
    order = np.random.default_rng(spec.seed).permutation(n)
    cuts = np.cumsum(counts)
    parts = np.split(order, cuts[:-1])
    return tuple([items[i] for i in part] for part in parts)


# ----------------------------------------------------------------- batches


def iterate_batches(n_items, batch_size, rng, chunk=1):
    """Yield index arrays covering ``range(n_items)`` once, in shuffled order.

    With ``chunk > 1`` the items are shuffled in contiguous runs of that
    length; batches of overlapping windows then share most of their frames.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if chunk <= 1:
        order = rng.permutation(n_items)
    else:
        starts = np.arange(0, n_items, chunk)
        order = np.concatenate([np.arange(s, min(s + chunk, n_items))
                                for s in starts[rng.permutation(starts.size)]])
    for i in range(0, n_items, batch_size):
        yield order[i:i + batch_size]


# --------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic two-formant corpus.

    The latent ``z(t)`` in ``[0, 1]^2`` moves an ellipse in the image and sets
    ``F1 = f1_base + f1_span * z1`` and ``F2 = f2_base + f2_span * z2``.
    """

    n_utterances: int = 12
    duration: float = 4.0
    seed: int = 0
    speaker: str = "synth"
    latent_dim: int = 2
    f0: float = 120.0
    f1_base: float = 300.0
    f1_span: float = 700.0
    f1_bandwidth: float = 80.0
    f2_base: float = 900.0
    f2_span: float = 1400.0
    f2_bandwidth: float = 120.0
    image_noise: float = 0.02
    snr_db: float = 30.0
    smoothing: int = 11
    step_std: float = 0.08
    n_desync: int = 0
    sample_rate: int = 20000
    # frames by which the acoustics trail the imaged articulator
    acoustic_lag: int = 0

    def __post_init__(self):
        if self.latent_dim != 2:
            raise ValueError("the synthetic generator supports latent_dim = 2 only")
        if self.n_utterances < 1 or self.duration <= 0:
            raise ValueError("need at least one utterance of positive duration")
        if not 0 <= self.n_desync <= self.n_utterances:
            raise ValueError("n_desync must lie between 0 and n_utterances")
        if not 0 <= self.acoustic_lag <= 24:
            raise ValueError("acoustic_lag must lie between 0 and 24 frames")


def latent_track(n, rng, spec=SyntheticSpec()):
    """Reflected Gaussian random walk, moving-average smoothed, clipped to [0, 1]^2."""
    pad = spec.smoothing // 2
    steps = rng.normal(0.0, spec.step_std, size=(n + 2 * pad, 2))
    walk = np.empty_like(steps)
    pos = rng.uniform(0.2, 0.8, size=2)
    for t in range(steps.shape[0]):
        pos = pos + steps[t]
        pos = np.abs(pos)                 # reflect at 0
        pos = 1.0 - np.abs(1.0 - pos)     # and at 1
        walk[t] = pos
    kernel = np.ones(spec.smoothing) / spec.smoothing
    smooth = np.column_stack([np.convolve(walk[:, d], kernel, mode="valid") for d in range(2)])
    return np.clip(smooth[:n], 0.0, 1.0)


_YY, _XX = np.mgrid[0:68, 0:68].astype(np.float64)


def render_frame(z):
    """Noise-free 68x68 image: a ring outline and an ellipse placed by ``z``."""
    cx = 20.0 + 28.0 * z[0]
    cy = 24.0 + 20.0 * z[1]
    img = np.full((68, 68), 0.05)
    r = np.hypot(_XX - 33.5, _YY - 33.5)
    ring = np.clip(1.0 - np.abs(r - 31.0) / 1.5, 0.0, 1.0) * 0.5
    e = np.sqrt(((_XX - cx) / 8.0) ** 2 + ((_YY - cy) / 5.5) ** 2)
    blob = np.clip(0.5 + (1.0 - e) * 6.0, 0.0, 1.0) * 0.85
    return np.maximum(img, np.maximum(ring, blob))


def render_frames(z, rng, noise=0.02):
    frames = np.stack([render_frame(zt) for zt in z])
    frames += rng.normal(0.0, noise, size=frames.shape)
    return np.clip(frames, 0.0, 1.0)


def voiced_source(z, n_samples, spec=SyntheticSpec(), config=DEFAULT_CONFIG):
    """Noise-free pulse train through the two resonators steered by ``z``.

    ``z[t]`` is the latent at the centre of analysis frame ``t``; formant
    frequencies are interpolated linearly between centres.
    """
    fs = spec.sample_rate
    z = np.atleast_2d(z)
    centers = np.arange(z.shape[0]) * config.frame_shift + config.frame_length / 2.0
    pos = np.arange(n_samples, dtype=np.float64)
    f1 = np.interp(pos, centers, spec.f1_base + spec.f1_span * z[:, 0])
    f2 = np.interp(pos, centers, spec.f2_base + spec.f2_span * z[:, 1])
    pulses = np.zeros(n_samples)
    pulses[np.round(np.arange(0.0, n_samples, fs / spec.f0)).astype(int).clip(0, n_samples - 1)] = 1.0
    stage = np.empty(n_samples)
    out = np.empty(n_samples)
    _kernels.resonator(pulses, f1, float(spec.f1_bandwidth), float(fs), stage)
    _kernels.resonator(stage, f2, float(spec.f2_bandwidth), float(fs), out)
    return 0.5 * out


@lru_cache(maxsize=16)
def reference_rms(spec, config=DEFAULT_CONFIG):
    """RMS of one second of the voiced source held at ``z = (0.5, 0.5)``."""
    x = voiced_source(np.full((1, 2), 0.5), spec.sample_rate, spec, config)
    return float(np.sqrt(np.mean(x * x)))


def synthesize_audio(z, n_samples, rng, spec=SyntheticSpec(), config=DEFAULT_CONFIG):
    """Voiced source plus white noise ``snr_db`` below :func:`reference_rms`.

    A fixed noise level keeps the spectral floor a function of ``z``: quiet
    configurations sit closer to it than loud ones.
    """
    out = voiced_source(z, n_samples, spec, config)
    level = reference_rms(spec, config) * 10.0 ** (-spec.snr_db / 20.0)
    return out + rng.normal(0.0, level, n_samples)


def _cut_frames(z_ext, n, rng, margin=10):
    """Apply one forward jump of the video content; returns ``(z_video, cut)``.

    Frames from ``cut`` on show the latent ``shift`` frames ahead, the shift
    picked within 8..24 to make the jump large.
    """
    cut = int(rng.integers(margin, n - margin))
    shifts = np.arange(8, 25)
    jump = [np.abs(z_ext[cut + s] - z_ext[cut - 1]).max() for s in shifts]
    shift = int(shifts[int(np.argmax(jump))])
    z = z_ext[:n].copy()
    z[cut:] = z_ext[cut + shift:n + shift]
    return z, cut


def generate_utterance(spec, index, z=None, desync=False):
    """Frames, audio and the latent for utterance ``index`` of ``spec``.

    Returns ``(frames [T_m, 68, 68], audio [N], z [T_m, 2], cut)`` where
    ``z`` is the latent driving the audio and ``cut`` is the first frame
    after an injected jump, or None. With ``spec.acoustic_lag = d`` the
    image at frame ``t`` shows ``z[t + d]``.
    """
    rng = np.random.default_rng([spec.seed, index])
    n_samples = int(round(spec.duration * spec.sample_rate))
    n_video = max(1, int(round(spec.duration * FRAME_RATE)))
    lag = spec.acoustic_lag
    if z is None:
        z_ext = latent_track(n_video + 24 + lag, rng, spec)
    else:
        z_ext = np.clip(np.broadcast_to(np.asarray(z, dtype=np.float64),
                                        (n_video + lag, 2)), 0, 1)
    # audio frame t sounds the shape imaged at frame t - lag
    z_audio = z_ext[:n_video]
    cut = None
    z_video = z_ext[lag:lag + n_video]
    if desync:
        if z is not None:
            raise ValueError("desync injection needs a generated latent track")
        z_video, cut = _cut_frames(z_ext[lag:], n_video, rng)
    frame_rng = np.random.default_rng([spec.seed, index, 1])
    audio_rng = np.random.default_rng([spec.seed, index, 2])
    frames = render_frames(z_video, frame_rng, spec.image_noise)
    audio = synthesize_audio(z_audio, n_samples, audio_rng, spec)
    return frames, audio, z_audio, cut


def generate_synthetic_corpus(spec, out_dir):
    """Write ``spec.n_utterances`` synthetic recordings under ``out_dir/speaker``.

    The first ``spec.n_desync`` utterances (in a seeded random selection)
    get one injected video jump each; their cut frames are listed in
    ``cuts.txt``. Returns the list of utterance ids.
    """
    root = speaker_dir(out_dir, spec.speaker)
    root.mkdir(parents=True, exist_ok=True)
    chosen = np.random.default_rng([spec.seed, 2**31 - 1]).permutation(spec.n_utterances)
    desynced = set(chosen[:spec.n_desync].tolist())
    ids, cuts = [], []
    for i in range(spec.n_utterances):
        utt_id = f"utt{i:04d}"
        frames, audio, _, cut = generate_utterance(spec, i, desync=i in desynced)
        write_mrif(root / f"{utt_id}.mrif", frames)
        write_wav(root / f"{utt_id}.wav", audio)
        ids.append(utt_id)
        cuts.append((f"cut.{utt_id}", "" if cut is None else cut))
    write_kv(root / "cuts.txt", cuts)
    return ids
