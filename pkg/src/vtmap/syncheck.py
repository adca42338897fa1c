"""Audiovisual desynchronization screening from frame-to-frame image change.

A jump in the video stream (a dropped or repeated block of frames) shows up
as an isolated spike in the mean absolute pixel difference between
consecutive frames. Spikes are flagged with a robust median/MAD rule.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import FRAME_RATE, speaker_dir
from .formats import atomic_write, read_mrif, write_kv

log = logging.getLogger(__name__)

MAD_FLOOR = 1e-6


def frame_diff_curve(frames):
    """``d[t] = mean |frame[t+1] - frame[t]|`` for ``t = 0 .. T-2``."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim < 2 or frames.shape[0] < 2:
        raise ValueError(f"frame_diff_curve needs at least two frames, got shape {frames.shape}")
    diff = np.abs(np.diff(frames, axis=0))
    return diff.reshape(diff.shape[0], -1).mean(axis=1)


def flag_discontinuities(curve, k=8.0):
    """Ascending indices with ``curve > median + k * max(MAD, 1e-6)``.

    Index ``i`` denotes the transition from frame ``i`` to frame ``i + 1``.
    """
    curve = np.asarray(curve, dtype=np.float64)
    if curve.ndim != 1 or curve.size < 3:
        raise ValueError("flag_discontinuities needs a curve of at least three values")
    med = np.median(curve)
    mad = max(float(np.median(np.abs(curve - med))), MAD_FLOOR)
    return np.flatnonzero(curve > med + k * mad)


@dataclass
class SyncReport:
    flagged: dict = field(default_factory=dict)     # utt -> flagged transition indices
    curves: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)      # utt -> load error message
    frame_rate: float = FRAME_RATE

    @property
    def out_of_sync(self):
        return {u: len(v) > 0 for u, v in self.flagged.items()}

    @property
    def fraction(self):
        if not self.flagged:
            return 0.0
        return sum(self.out_of_sync.values()) / len(self.flagged)

    def timestamps(self, utt_id):
        """Seconds of the frame following each flagged transition."""
        return [(int(i) + 1) / self.frame_rate for i in self.flagged[utt_id]]

    def items(self):
        out = []
        for u in sorted(self.flagged):
            idx = [int(i) + 1 for i in self.flagged[u]]
            out.append((f"flagged.{u}", ",".join(str(i) for i in idx)))
            out.append((f"seconds.{u}", ",".join(f"{t:.2f}" for t in self.timestamps(u))))
        for u in sorted(self.errors):
            out.append((f"error.{u}", self.errors[u]))
        out += [("recordings", len(self.flagged)),
                ("out_of_sync", int(sum(self.out_of_sync.values()))),
                ("fraction", round(self.fraction, 6))]
        return out

    def write(self, path, curve_dir=None):
        write_kv(path, self.items())
        if curve_dir is not None:
            for u, c in self.curves.items():
                with atomic_write(f"{curve_dir}/{u}.curve.txt", "w") as fh:
                    fh.writelines(f"{v:.8f}\n" for v in c)


def corpus_sync_report(corpus_dir, speaker, k=8.0, utt_ids=None):
    """Screen every recording of a speaker; unreadable files are recorded, not fatal.

    Flags are reported as frame numbers: a transition ``i -> i+1`` is
    reported as frame ``i + 1`` (time ``(i + 1) / 23.18`` s), the first
    frame after the jump.
    """
    root = speaker_dir(corpus_dir, speaker)
    if utt_ids is None:
        utt_ids = sorted(p.stem for p in root.glob("*.mrif"))
    report = SyncReport()
    for utt_id in utt_ids:
        try:
            frames = read_mrif(root / f"{utt_id}.mrif")
            curve = frame_diff_curve(frames)
        except (OSError, ValueError) as err:
            log.warning("sync-check skipped %s: %s", utt_id, err)
            report.errors[utt_id] = str(err)
            continue
        report.curves[utt_id] = curve
        report.flagged[utt_id] = flag_discontinuities(curve, k)
    return report
