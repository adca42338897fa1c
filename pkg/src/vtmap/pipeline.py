"""Multi-step workflows shared by the command line and the demos."""

import logging

import numpy as np

from . import lsp, metrics, models, vocoder
from .corpus import list_utterances, load_corpus, speaker_dir, split_corpus
from .formats import atomic_write, read_wav, write_mgcf

log = logging.getLogger(__name__)


def analyze_audio(audio, config=vocoder.DEFAULT_CONFIG):
    """Return ``(mgclsp [T, 25], f0 [T], residual [N])`` for one waveform."""
    mgc = vocoder.analyze(audio, config)
    feats = lsp.track_to_mgclsp(mgc, config)
    f0 = vocoder.extract_f0(audio, config)
    residual = vocoder.inverse_filter(audio, mgc, config)
    return feats, f0, residual


def analyze_corpus(corpus_dir, speaker, utt_ids=None, write_residual=True):
    """Write ``<utt>.mgcf`` (and ``<utt>.res.npy``) for every utterance."""
    root = speaker_dir(corpus_dir, speaker)
    if utt_ids is None:
        utt_ids = list_utterances(corpus_dir, speaker)
    for utt_id in utt_ids:
        audio = read_wav(root / f"{utt_id}.wav")
        feats, f0, residual = analyze_audio(audio)
        write_mgcf(root / f"{utt_id}.mgcf", feats, f0)
        if write_residual:
            save_residual(root / f"{utt_id}.res.npy", residual)
        log.info("analyzed %s: %d frames", utt_id, feats.shape[0])
    return utt_ids


def save_residual(path, residual):
    with atomic_write(path) as fh:
        np.save(fh, np.asarray(residual, dtype=np.float64))


def load_residual(path):
    return np.load(path, allow_pickle=False)


def split_speaker(corpus_dir, speaker, split):
    """Load an analyzed speaker and split it; returns ``(train, val, test)``."""
    utts = load_corpus(corpus_dir, speaker, with_audio=False)
    return split_corpus(utts, split)


def evaluate_model(model, normalizer, utterances, label="test"):
    """Predict every utterance and collect NMSE/MCD into an :class:`EvalReport`."""
    report = metrics.EvalReport(label)
    for utt in utterances:
        pred = models.predict_utterance(model, utt.frames, normalizer)
        report.add(utt.utt_id,
                   metrics.compute_nmse(normalizer.apply(pred), normalizer.apply(utt.targets)),
                   metrics.compute_mcd(pred, utt.targets), pred.shape[0])
    return report


def resynthesize(pred_mgclsp, residual, config=vocoder.DEFAULT_CONFIG):
    """Render predicted MGC-LSP frames through the MGLSA filter."""
    mgc = lsp.track_from_mgclsp(pred_mgclsp, config)
    expected = vocoder.frame_count(residual.size, config)
    if mgc.shape[0] < expected:
        pad = np.repeat(mgc[-1:], expected - mgc.shape[0], axis=0)
        mgc = np.concatenate([mgc, pad])
    return vocoder.mglsa_synthesize(residual, mgc[:expected], config)
