"""Command-line entry point: ``vtmap <command> [options]``.

Commands
--------
gen-synthetic  write a synthetic corpus (MRIF + WAV)
analyze        audio -> MGCF features (+ residual .npy)
train          train one architecture on a speaker -> VTMM checkpoint
synthesize     frames + checkpoint + residual -> WAV
evaluate       checkpoint + corpus split -> key=value NMSE/MCD report
sync-check     corpus -> key=value desynchronization report

Options may also come from ``--config FILE`` (``key=value`` lines, keys named
like the long options with ``_`` for ``-``); command-line flags win. The seed
falls back to the ``VTMAP_SEED`` environment variable, then 0.
Exit status: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

log = logging.getLogger("vtmap")

DEFAULTS = {
    "speaker": "synth",
    "utts": 12,
    "duration": 4.0,
    "desync": 0,
    "lag": 0,
    "arch": "cnn-lstm",
    "epochs": 100,
    "patience": 5,
    "batch_size": 128,
    "lr": 1e-3,
    "chunk": 16,
    "split": None,
    "split_name": "test",
    "excitation": "residual",
    "k": 8.0,
}


class UsageError(Exception):
    """Bad option values detected after parsing; reported with exit status 2."""


def _parser():
    p = argparse.ArgumentParser(prog="vtmap", description="Articulatory-to-acoustic mapping toolkit.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def command(name, help_text):
        sp = sub.add_parser(name, help=help_text, argument_default=None)
        sp.add_argument("--config", help="key=value file with option defaults")
        sp.add_argument("--seed", type=int, help="random seed (default: $VTMAP_SEED or 0)")
        return sp

    g = command("gen-synthetic", "write a synthetic corpus")
    g.add_argument("--out", help="corpus directory")
    g.add_argument("--speaker")
    g.add_argument("--utts", type=int, help="number of utterances")
    g.add_argument("--duration", type=float, help="seconds per utterance")
    g.add_argument("--desync", type=int, help="number of recordings with an injected video jump")
    g.add_argument("--lag", type=int, help="frames by which the audio trails the images")

    a = command("analyze", "extract MGC-LSP features, F0 and residuals")
    a.add_argument("--corpus", help="corpus directory (analyze every utterance of --speaker)")
    a.add_argument("--speaker")
    a.add_argument("--audio", help="single WAV file instead of a corpus")
    a.add_argument("--out", help="MGCF output for --audio")
    a.add_argument("--residual", help="residual .npy output for --audio")

    t = command("train", "train a model on one speaker")
    t.add_argument("--corpus")
    t.add_argument("--speaker")
    t.add_argument("--arch", choices=["fc", "cnn", "cnn-lstm"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--chunk", type=int, help="window shuffling run length (cnn-lstm)")
    t.add_argument("--split", help="train,validation,test counts (default: 430/20/10 proportions)")
    t.add_argument("--out", help="output directory")

    s = command("synthesize", "render speech from frames and a checkpoint")
    s.add_argument("--checkpoint")
    s.add_argument("--frames", help="MRIF file")
    s.add_argument("--residual", help="residual .npy written by analyze")
    s.add_argument("--excitation", choices=["residual", "noise"])
    s.add_argument("--out", help="output WAV")

    e = command("evaluate", "score a checkpoint on a corpus split")
    e.add_argument("--checkpoint")
    e.add_argument("--corpus")
    e.add_argument("--speaker")
    e.add_argument("--split", help="train,validation,test counts (default: from the training run)")
    e.add_argument("--split-name", choices=["train", "validation", "test"])
    e.add_argument("--out", help="report file")

    c = command("sync-check", "flag frame-stream discontinuities")
    c.add_argument("--corpus")
    c.add_argument("--speaker")
    c.add_argument("--k", type=float, help="threshold in MADs above the median")
    c.add_argument("--out", help="report file")
    c.add_argument("--curves", help="directory for per-utterance difference curves")
    return p


def _coerce(parser, command, key, value):
    """Convert a config-file string with the type of the matching option."""
    for action in _subparser(parser, command)._actions:
        if action.dest == key:
            if action.type is not None:
                return action.type(value)
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"config: {key}={value} not in {sorted(action.choices)}")
            return value
    raise UsageError(f"config: unknown option {key!r} for {command}")


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def resolve(parser, args):
    """Merge defaults < config file < environment seed < command-line flags."""
    given = {k: v for k, v in vars(args).items() if v is not None}
    cfg = {}
    if args.config:
        from .formats import read_kv
        try:
            raw = read_kv(args.config)
        except OSError as err:
            raise UsageError(f"cannot read config file: {err}") from None
        for key, value in raw.items():
            key = key.replace("-", "_")
            try:
                cfg[key] = _coerce(parser, args.command, key, value)
            except ValueError as err:
                raise UsageError(f"config: bad value for {key}: {err}") from None
    out = dict(DEFAULTS)
    if "VTMAP_SEED" in os.environ:
        try:
            out["seed"] = int(os.environ["VTMAP_SEED"])
        except ValueError:
            raise UsageError(f"VTMAP_SEED must be an integer, got {os.environ['VTMAP_SEED']!r}") from None
    else:
        out["seed"] = 0
    out.update(cfg)
    out.update(given)
    keys = set(vars(args)) | {"seed"}
    return argparse.Namespace(**{k: out.get(k) for k in sorted(keys)})


def _require(opts, *names):
    missing = [n for n in names if getattr(opts, n, None) in (None, "")]
    if missing:
        raise UsageError(f"{opts.command}: missing required option(s): "
                         + ", ".join("--" + m.replace("_", "-") for m in missing))


def _write_config(path, opts):
    from .formats import write_kv
    skip = {"config", "verbose"}
    write_kv(path, [(k, v) for k, v in sorted(vars(opts).items())
                    if k not in skip and not k.startswith("_") and v is not None])


def _parse_split(text):
    try:
        counts = [int(x) for x in str(text).split(",")]
    except ValueError:
        raise UsageError(f"--split expects three integers, got {text!r}") from None
    if len(counts) != 3:
        raise UsageError(f"--split expects three integers, got {text!r}")
    return counts


def _split_spec(opts):
    from .corpus import SplitSpec
    if opts.split is None:
        return SplitSpec(seed=opts.seed, proportional=True)
    tr, va, te = _parse_split(opts.split)
    return SplitSpec(tr, va, te, seed=opts.seed)


def _ensure_features(corpus_dir, speaker):
    from .corpus import list_utterances, speaker_dir
    from .pipeline import analyze_corpus
    root = speaker_dir(corpus_dir, speaker)
    todo = [u for u in list_utterances(corpus_dir, speaker) if not (root / f"{u}.mgcf").exists()]
    if todo:
        log.info("analyzing %d utterance(s) without features", len(todo))
        analyze_corpus(corpus_dir, speaker, todo)


# ---------------------------------------------------------------- commands


def cmd_gen_synthetic(opts):
    from .corpus import SyntheticSpec, generate_synthetic_corpus, speaker_dir
    _require(opts, "out")
    spec = SyntheticSpec(n_utterances=opts.utts, duration=opts.duration, seed=opts.seed,
                         speaker=opts.speaker, n_desync=opts.desync, acoustic_lag=opts.lag)
    ids = generate_synthetic_corpus(spec, opts.out)
    _write_config(speaker_dir(opts.out, opts.speaker) / "synthetic.config.txt", opts)
    log.info("wrote %d utterances to %s", len(ids), speaker_dir(opts.out, opts.speaker))
    return 0


def cmd_analyze(opts):
    from .formats import read_wav, write_mgcf
    from .pipeline import analyze_audio, analyze_corpus, save_residual
    from .corpus import speaker_dir
    if opts.audio:
        _require(opts, "out")
        feats, f0, residual = analyze_audio(read_wav(opts.audio))
        write_mgcf(opts.out, feats, f0)
        if opts.residual:
            save_residual(opts.residual, residual)
        out = Path(opts.out)
        _write_config(out.parent / (out.stem + ".config.txt"), opts)
        return 0
    _require(opts, "corpus", "speaker")
    ids = analyze_corpus(opts.corpus, opts.speaker)
    _write_config(speaker_dir(opts.corpus, opts.speaker) / "analyze.config.txt", opts)
    log.info("analyzed %d utterances", len(ids))
    return 0


def cmd_train(opts):
    from . import models
    from .corpus import fit_normalizer, load_corpus, split_corpus
    from .formats import write_kv
    _require(opts, "corpus", "out")
    split = _split_spec(opts)
    _ensure_features(opts.corpus, opts.speaker)
    utts = load_corpus(opts.corpus, opts.speaker, with_audio=False)
    train, val, test = split_corpus(utts, split)
    if not train or not val:
        raise ValueError(f"split {split.counts} leaves an empty training or validation set")
    normalizer = fit_normalizer([u.targets for u in train])
    model = models.build_model(opts.arch, seed=opts.seed)
    config = models.TrainConfig(lr=opts.lr, max_epochs=opts.epochs, patience=opts.patience,
                                batch_size=opts.batch_size, seed=opts.seed, chunk=opts.chunk)
    start = time.perf_counter()
    model, history = models.train_model(model, train, val, normalizer, config)
    log.info("trained %s in %.1f s; best epoch %d (%s)", model.kind,
             time.perf_counter() - start, history.best_epoch, history.stop_reason)
    out = Path(opts.out)
    out.mkdir(parents=True, exist_ok=True)
    models.save_checkpoint(out / "model.vtmm", model, normalizer)
    rows = [("arch", model.kind), ("parameters", model.count_parameters()),
            ("epochs_run", len(history.val_loss)), ("best_epoch", history.best_epoch),
            ("stop_reason", history.stop_reason),
            ("best_val_loss", history.best_val_loss),
            ("train_loss", [f"{v:.8g}" for v in history.train_loss]),
            ("val_loss", [f"{v:.8g}" for v in history.val_loss]),
            ("train_utts", [u.utt_id for u in train]),
            ("validation_utts", [u.utt_id for u in val]),
            ("test_utts", [u.utt_id for u in test])]
    write_kv(out / "history.txt", rows)
    if opts.split is None:
        opts.split = ",".join(str(len(s)) for s in (train, val, test))
    _write_config(out / "config.txt", opts)
    return 0


def cmd_evaluate(opts):
    from .corpus import load_corpus, split_corpus
    from .formats import read_kv
    from .models import load_checkpoint
    from .pipeline import evaluate_model
    _require(opts, "checkpoint", "corpus", "out")
    run_cfg = Path(opts.checkpoint).parent / "config.txt"
    if run_cfg.exists():
        # default to the split the checkpoint was trained with
        trained = read_kv(run_cfg)
        if opts.split is None:
            opts.split = trained.get("split")
        if not opts._seed_from_flags and "seed" in trained:
            opts.seed = int(trained["seed"])
    model, normalizer = load_checkpoint(opts.checkpoint)
    _ensure_features(opts.corpus, opts.speaker)
    utts = load_corpus(opts.corpus, opts.speaker, with_audio=False)
    parts = dict(zip(("train", "validation", "test"), split_corpus(utts, _split_spec(opts))))
    chosen = parts[opts.split_name]
    if not chosen:
        raise ValueError(f"the {opts.split_name} split is empty")
    report = evaluate_model(model, normalizer, chosen, opts.split_name)
    report.write(opts.out)
    out = Path(opts.out)
    _write_config(out.parent / (out.stem + ".config.txt"), opts)
    log.info("%s: nmse %.4f, mcd %.4f dB", opts.split_name, report.nmse_mean, report.mcd_mean)
    return 0


def cmd_synthesize(opts):
    from .formats import read_mrif, write_wav
    from .models import load_checkpoint, predict_utterance
    from .pipeline import load_residual, resynthesize
    _require(opts, "checkpoint", "frames", "out")
    model, normalizer = load_checkpoint(opts.checkpoint)
    frames = read_mrif(opts.frames)
    pred = predict_utterance(model, frames, normalizer)
    if opts.excitation == "noise":
        from .vocoder import DEFAULT_CONFIG as cfg
        n = (pred.shape[0] - 1) * cfg.frame_shift + cfg.frame_length
        excitation = np.random.default_rng(opts.seed).normal(0.0, 1.0, n)
    else:
        _require(opts, "residual")
        excitation = load_residual(opts.residual)
    audio = resynthesize(pred, excitation)
    peak = np.max(np.abs(audio))
    if opts.excitation == "noise" and peak > 0:
        audio = audio * (0.5 / peak)
    write_wav(opts.out, audio)
    out = Path(opts.out)
    _write_config(out.parent / (out.stem + ".config.txt"), opts)
    return 0


def cmd_sync_check(opts):
    from .syncheck import corpus_sync_report
    _require(opts, "corpus", "out")
    report = corpus_sync_report(opts.corpus, opts.speaker, k=opts.k)
    if opts.curves:
        Path(opts.curves).mkdir(parents=True, exist_ok=True)
    report.write(opts.out, curve_dir=opts.curves)
    out = Path(opts.out)
    _write_config(out.parent / (out.stem + ".config.txt"), opts)
    log.info("%d of %d recordings flagged", sum(report.out_of_sync.values()), len(report.flagged))
    return 0


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "analyze": cmd_analyze,
    "train": cmd_train,
    "synthesize": cmd_synthesize,
    "evaluate": cmd_evaluate,
    "sync-check": cmd_sync_check,
}


def dispatch(argv=None):
    """Run one command; returns the process exit status."""
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        opts = resolve(parser, args)
        opts._seed_from_flags = args.seed is not None
        return COMMANDS[args.command](opts)
    except UsageError as err:
        _subparser(parser, args.command).print_usage(sys.stderr)
        print(f"vtmap {args.command}: error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # reported, not re-raised: the exit status carries it
        log.debug("traceback", exc_info=True)
        print(f"vtmap {args.command}: error: {err}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
