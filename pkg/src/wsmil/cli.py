"""Command-line entry point: ``wsmil <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error. Failures print a single
``error: <kind>: <message>`` line on stderr.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_run_config
from .data import FeatureCache, frames_from_annotation, load_strong_annotations, load_weak_manifest
from .errors import ParameterError, WsmilError
from .evaluate import frame_metrics, read_metric_log, transcription_export, write_curves, write_transcriptions
from .model import load_model, threshold
from .synth import SynthConfig, generate_corpus
from .train import predict_batched, train

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _require_config(args) -> RunConfig:
    if not args.config:
        raise UsageError(f"{args.command} needs --config")
    rc = load_run_config(args.config)
    if args.seed is not None:
        rc.train.seed = args.seed
    return rc


def _manifest_dir(rc: RunConfig, manifest: Path):
    return rc.audio_root if rc.audio_root is not None else manifest.parent


def _cache(rc: RunConfig, manifest: Path) -> FeatureCache:
    return FeatureCache(rc.feature_cache, rc.features, _manifest_dir(rc, manifest))


def cmd_features(args) -> int:
    rc = _require_config(args)
    manifests = [m for m in (rc.train_manifest, rc.val_manifest) if m is not None]
    if not manifests:
        raise ParameterError("[paths] needs train_manifest and/or val_manifest")
    total = 0
    for m in manifests:
        written = _cache(rc, m).build(load_weak_manifest(m), force=args.force)
        total += len(written)
    print(f"features: {total} file(s) written to {rc.feature_cache}")
    return 0


def _load_bags(rc: RunConfig, manifest: Path):
    return _cache(rc, manifest).bags(load_weak_manifest(manifest), rc.label_map)


def cmd_train(args) -> int:
    rc = _require_config(args)
    if rc.train_manifest is None:
        raise ParameterError("[paths] train_manifest is required for training")
    bags = _load_bags(rc, rc.train_manifest)
    validation = None
    if rc.val_manifest is not None and rc.val_annotations is not None:
        vbags = _load_bags(rc, rc.val_manifest)
        ann = load_strong_annotations(rc.val_annotations)
        truths = [frames_from_annotation(ann[b.id].events if b.id in ann else [], b.M, b.features.frame_hop_seconds)
                  for b in vbags]
        validation = ([b.features.frames for b in vbags], truths)
    rc.train.threshold = rc.threshold
    result = train(bags, rc.train, model_config=rc.model, validation=validation, out_dir=rc.output_dir)
    last = result.history[-1]
    msg = f"train: {rc.train.epochs} epochs, final loss {last.train_loss:.6f}"
    if result.best_f1 is not None:
        msg += f", best val F1 {result.best_f1:.4f} at epoch {result.best_epoch}"
    print(msg + f"; outputs in {rc.output_dir}")
    return 0


def cmd_predict(args) -> int:
    rc = _require_config(args)
    if not args.checkpoint:
        raise UsageError("predict needs --checkpoint")
    manifest = Path(args.manifest) if args.manifest else rc.val_manifest
    if manifest is None:
        raise UsageError("predict needs --manifest or [paths] val_manifest")
    model = load_model(args.checkpoint, rc.model)
    entries = load_weak_manifest(manifest)
    cache = _cache(rc, manifest)
    cache.build(entries)
    feats = [cache.load(e.id) for e in entries]
    scores = predict_batched(model, [f.frames for f in feats])
    out = Path(args.out) if args.out else rc.output_dir / "predictions"
    out.mkdir(parents=True, exist_ok=True)
    transcriptions = {}
    for e, f, s in zip(entries, feats, scores):
        with open(out / f"{e.id}.scores.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "score"])
            w.writerows([j, repr(float(v))] for j, v in enumerate(s))
        transcriptions[e.id] = transcription_export(s, f.frame_hop_seconds, rc.threshold)
    write_transcriptions(out / "transcriptions.csv", transcriptions)
    print(f"predict: {len(entries)} recording(s) written to {out}")
    return 0


def _read_scores(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "score" not in rows[0]:
        raise ParameterError(f"{path}: expected a frame,score CSV")
    return np.array([float(r["score"]) for r in rows])


def cmd_eval(args) -> int:
    rc = _require_config(args)
    if not args.predictions:
        raise UsageError("eval needs --predictions")
    pred_dir = Path(args.predictions)
    ann_path = Path(args.annotations) if args.annotations else rc.val_annotations
    if ann_path is None:
        raise UsageError("eval needs --annotations or [paths] val_annotations")
    files = sorted(pred_dir.glob("*.scores.csv"))
    if not files:
        raise ParameterError(f"no *.scores.csv files in {pred_dir}")
    ann = load_strong_annotations(ann_path)
    hop = rc.features.hop_seconds
    preds, truths = {}, {}
    for p in files:
        rid = p.name[: -len(".scores.csv")]
        scores = _read_scores(p)
        preds[rid] = threshold(scores, rc.threshold)
        truths[rid] = frames_from_annotation(ann[rid].events if rid in ann else [], len(scores), hop)
    report = frame_metrics(preds, truths)
    out = Path(args.out) if args.out else pred_dir / "report"
    out.with_suffix(".csv").write_text(report.to_csv())
    out.with_suffix(".txt").write_text(report.to_text())
    sys.stdout.write(report.to_text())
    return 0


def cmd_plot(args) -> int:
    if not args.logs:
        raise UsageError("plot needs at least one metric log")
    labels = args.labels.split(",") if args.labels else [Path(p).resolve().parent.name for p in args.logs]
    if len(labels) != len(args.logs):
        raise UsageError("--labels must name every log")
    runs = {}
    for label, p in zip(labels, args.logs):
        runs[label] = read_metric_log(p)
    try:
        csv_path, svg_path = write_curves(Path(args.out), runs)
    except ValueError as exc:
        raise ParameterError(str(exc)) from exc
    print(f"plot: {len(runs)} series -> {csv_path}, {svg_path}")
    return 0


def cmd_synth(args) -> int:
    if not args.out:
        raise UsageError("synth needs --out")
    kw = {}
    if args.snr:
        kw["burst_snr_db"] = tuple(float(v) for v in args.snr.split(","))
    cfg = SynthConfig(n_positive=args.n_positive, n_negative=args.n_negative, duration=args.duration,
                      sample_rate=args.sample_rate, label=args.label, prefix=args.prefix, **kw)
    manifest, strong = generate_corpus(args.out, cfg, seed=args.seed or 0)
    print(f"synth: {cfg.n_positive + cfg.n_negative} clips, manifest {manifest}, annotations {strong}")
    return 0


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands re-declare the global flags without defaults so they do not
    # overwrite values given before the subcommand name
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p = _Parser(add_help=False)
    p.add_argument("--config", help="run config (INI)", **kw)
    p.add_argument("--seed", type=int, help="override the random seed", **kw)
    p.add_argument("--force", action="store_true", help="recompute outputs that look up to date", **kw)
    p.add_argument("-v", "--verbose", action="store_true", **kw)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wsmil", description=__doc__.splitlines()[0], parents=[_global_flags(False)])
    common = _global_flags(True)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    sub.add_parser("features", parents=[common], help="extract and cache log-mel features")
    sub.add_parser("train", parents=[common], help="train a detector from weak labels")

    p = sub.add_parser("predict", parents=[common], help="frame scores and transcriptions")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--out")

    p = sub.add_parser("eval", parents=[common], help="frame-level precision / recall / F1")
    p.add_argument("--predictions")
    p.add_argument("--annotations")
    p.add_argument("--out")

    p = sub.add_parser("plot", parents=[common], help="F1-vs-epoch curves from metric logs")
    p.add_argument("logs", nargs="*")
    p.add_argument("--labels")
    p.add_argument("--out", default="curves")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic tone-burst corpus")
    p.add_argument("--out")
    p.add_argument("--n-positive", type=int, default=40)
    p.add_argument("--n-negative", type=int, default=40)
    p.add_argument("--duration", type=float, default=5.0)
    p.add_argument("--sample-rate", type=int, default=44100)
    p.add_argument("--snr", help="comma-separated burst SNRs in dB, one burst per value")
    p.add_argument("--label", default="tone")
    p.add_argument("--prefix", default="clip", help="recording id prefix")
    return parser


COMMANDS = {
    "features": cmd_features,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "plot": cmd_plot,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WsmilError as exc:
        print(f"error: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
