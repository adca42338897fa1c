"""
From lip images to speech: train, evaluate and resynthesize
===========================================================

A small synthetic speaker (16 recordings of 3 s) is analyzed, split, and used
to train the frame-wise FC-DNN. Predicted MGC-LSP frames are scored with NMSE
and mel-cepstral distortion, then turned back into audio with the recorded
residual as excitation.

``acoustic_lag=3`` makes each image show the articulators three frames ahead
of the sound (anticipatory articulation), which is the case where the
windowed CNN-LSTM has an edge. Pass ``cnn_lstm`` as the second argument to
train it instead; it takes several minutes on one core.

Usage: python demos/04_train_and_resynthesize.py [out_dir] [fc_dnn|cnn|cnn_lstm]
"""

import logging
import sys
import tempfile
from pathlib import Path

from vtmap import models as M, pipeline as P
from vtmap.corpus import SplitSpec, SyntheticSpec, fit_normalizer, generate_synthetic_corpus
from vtmap.formats import write_wav

logging.basicConfig(level=logging.INFO, format="%(message)s")
out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="vtmap-train-"))
arch = sys.argv[2] if len(sys.argv) > 2 else "fc_dnn"

spec = SyntheticSpec(n_utterances=16, duration=3.0, seed=4, acoustic_lag=3)
generate_synthetic_corpus(spec, out)
P.analyze_corpus(out, spec.speaker)

train, val, test = P.split_speaker(out, spec.speaker, SplitSpec(12, 2, 2, seed=0))
normalizer = fit_normalizer([u.targets for u in train])

model = M.build_model(arch, seed=0)
print(arch, "parameters:", M.count_parameters(model))
model, history = M.train_model(model, train, val, normalizer, M.TrainConfig(max_epochs=30, seed=0))
print(f"best epoch {history.best_epoch}, stopped: {history.stop_reason}")

report = P.evaluate_model(model, normalizer, test)
print(f"test NMSE {report.nmse_mean:.3f}, MCD {report.mcd_mean:.2f} dB")

# Speech from the images of the first test recording.
utt = test[0]
pred = M.predict_utterance(model, utt.frames, normalizer)
residual = P.load_residual(out / spec.speaker / f"{utt.utt_id}.res.npy")
write_wav(out / f"{utt.utt_id}.predicted.wav", P.resynthesize(pred, residual))
M.save_checkpoint(out / f"{arch}.vtmm", model, normalizer)
print("wrote", out / f"{utt.utt_id}.predicted.wav")
