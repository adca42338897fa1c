"""Objective scores: NMSE on z-scored features and mel-cepstral distortion."""

from dataclasses import dataclass, field

import numpy as np

from .formats import write_kv

MCD_SCALE = 10.0 / np.log(10.0)


def _pair(a, b, name):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")
    if a.shape[0] == 0:
        raise ValueError(f"{name}: no frames")
    return a, b


def compute_nmse(pred_norm, target_norm):
    """Mean squared difference over all frames and coefficients of normalized features."""
    a, b = _pair(pred_norm, target_norm, "compute_nmse")
    return float(np.mean((a - b) ** 2))


def mcd_per_frame(pred, target):
    a, b = _pair(pred, target, "compute_mcd")
    d = a[:, 1:] - b[:, 1:]
    return MCD_SCALE * np.sqrt(2.0 * np.sum(d * d, axis=1))


def compute_mcd(pred, target):
    """Mean over frames of ``(10 / ln 10) sqrt(2 sum_{d>=1} diff_d^2)``, in dB.

    Coefficient 0 (the gain) is excluded.
    """
    return float(np.mean(mcd_per_frame(pred, target)))


@dataclass
class EvalReport:
    """Per-utterance scores with frame-weighted and plain aggregates."""

    label: str = "test"
    utt_ids: list = field(default_factory=list)
    nmse: list = field(default_factory=list)
    mcd_db: list = field(default_factory=list)
    frames: list = field(default_factory=list)

    def add(self, utt_id, nmse, mcd_db, n_frames):
        self.utt_ids.append(utt_id)
        self.nmse.append(float(nmse))
        self.mcd_db.append(float(mcd_db))
        self.frames.append(int(n_frames))

    def _weighted(self, values):
        w = np.asarray(self.frames, dtype=np.float64)
        return float(np.sum(w * np.asarray(values)) / np.sum(w))

    @property
    def nmse_mean(self):
        return self._weighted(self.nmse)

    @property
    def mcd_mean(self):
        return self._weighted(self.mcd_db)

    def items(self):
        out = [("split", self.label)]
        for u, n, m, f in zip(self.utt_ids, self.nmse, self.mcd_db, self.frames):
            out += [(f"nmse.{u}", n), (f"mcd_db.{u}", m), (f"frames.{u}", f)]
        out += [("nmse.mean", self.nmse_mean), ("mcd_db.mean", self.mcd_mean),
                ("nmse.utt_mean", float(np.mean(self.nmse))),
                ("mcd_db.utt_mean", float(np.mean(self.mcd_db)))]
        return out

    def write(self, path):
        write_kv(path, self.items())


def segmental_snr(reference, estimate, segment=863, floor=-10.0, ceiling=35.0):
    """Mean per-segment SNR in dB, each segment clamped to ``[floor, ceiling]``.

    Segments with no reference energy are skipped.
    """
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError(f"segmental_snr: shape mismatch {ref.shape} vs {est.shape}")
    n = ref.size // segment
    if n == 0:
        raise ValueError("segmental_snr: signal shorter than one segment")
    r = ref[:n * segment].reshape(n, segment)
    e = r - est[:n * segment].reshape(n, segment)
    sig = np.sum(r * r, axis=1)
    err = np.sum(e * e, axis=1)
    keep = sig > 0
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(sig[keep] / np.maximum(err[keep], 1e-300))
    return float(np.mean(np.clip(snr, floor, ceiling)))
