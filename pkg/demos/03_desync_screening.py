"""
Screening a corpus for audiovisual desynchronization
====================================================

A dropped block of video frames shows up as one isolated spike in the mean
absolute difference between consecutive frames. We build a synthetic corpus
where some recordings have such a jump and let ``corpus_sync_report`` find
them with a median + 8 MAD threshold.

Usage: python demos/03_desync_screening.py [out_dir]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from vtmap.corpus import SyntheticSpec, generate_synthetic_corpus
from vtmap.formats import read_kv
from vtmap.syncheck import corpus_sync_report

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="vtmap-sync-"))

# 20 recordings of 4 s, 15 of them with an injected jump.
spec = SyntheticSpec(n_utterances=20, duration=4.0, seed=3, n_desync=15)
generate_synthetic_corpus(spec, out)
truth = {k.split(".", 1)[1]: v for k, v in read_kv(out / spec.speaker / "cuts.txt").items()}

report = corpus_sync_report(out, spec.speaker)
for utt in sorted(report.flagged)[:6]:
    curve = report.curves[utt]
    flagged = [int(i) + 1 for i in report.flagged[utt]]
    print(f"{utt}: baseline {np.median(curve):.4f}, peak {curve.max():.4f},"
          f" flagged frames {flagged or '-'} (injected: {truth[utt] or '-'})")

print(f"out of sync: {sum(report.out_of_sync.values())} of {len(report.flagged)}"
      f" recordings, fraction {report.fraction:.2f}")

# The same report as key=value text, plus one curve file per recording.
report.write(out / "sync.txt", curve_dir=out)
print(open(out / "sync.txt").read().splitlines()[:2])
