"""``seizuredet`` command line: synth, split, train, detect, evaluate.

Exit codes: 0 ok, 2 input error (bad flags, config or files), 3 state
error (e.g. a checkpoint built for another window length).

Every command accepts ``--config FILE`` with ``key = value`` lines using
the long flag names (``window_s = 4``). Explicit flags win over the file.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

from . import io as sio
from .datasets import SplitSpec, SynthConfig, subject_split, synth_generate
from .errors import IncompatibleCheckpoint, InputError, StateError
from .labels import MODEL, SEIZURE, EventLabel
from .neural.models import MODEL_KINDS, load_config
from .neural.training import TrainConfig, train
from .pipeline import (
    MODEL_RATE_HZ,
    detect,
    predict,
    preprocess_classification,
    training_windows,
)
from .scoring import (
    ConfusionCounts,
    EvalConfig,
    evaluate_segments,
    match_events,
    metrics_document,
)
from .windowing import SegmentationConfig

log = logging.getLogger("seizuredet")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_STATE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(f"{self.prog}: {message}")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _add_common(p):
    p.add_argument("--config", help="key = value file supplying defaults for any flag")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_segmentation(p, shift_default: float):
    p.add_argument("--window-s", type=float, default=4.0)
    p.add_argument("--shift-s", type=float, default=shift_default)


def _add_output_format(p):
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="metrics output format")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seizuredet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic recording with planted seizures")
    _add_common(p)
    p.add_argument("--out", help="output prefix; writes .f32, .json and .labels.csv")
    p.add_argument("--duration-s", type=float, default=600.0)
    p.add_argument("--rate-hz", type=float, default=512.0)
    p.add_argument("--n-seizures", type=int, default=3)
    p.add_argument("--amplitude-ratio", type=float, default=4.0)
    p.add_argument("--min-gap-s", type=float, default=20.0)
    p.add_argument("--lead-in-s", type=float, default=0.0)
    p.add_argument("--recording-id", default=None)
    p.add_argument("--subject-id", default=None)

    p = sub.add_parser("split", help="subject-exclusive train/val/test split")
    _add_common(p)
    p.add_argument("--metadata",
                   help="CSV recording_id,subject_id,duration_s[,seizure_s,background_s]")
    p.add_argument("--fractions", type=_floats, default=(0.7, 0.15, 0.15))
    p.add_argument("--out", help="manifest JSON path")

    p = sub.add_parser("train", help="train a detector on pre-processing C windows")
    _add_common(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--signal", nargs="+", help="signal files (with --labels)")
    src.add_argument("--windows", nargs="+", help="pre-cut labelled window batch files")
    p.add_argument("--labels", help="label CSV covering every --signal recording")
    p.add_argument("--val-signal", nargs="*", default=[], help="validation signals (with --labels)")
    p.add_argument("--model", choices=MODEL_KINDS, default="cnn-transformer")
    _add_segmentation(p, 2.0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--stop-loss", type=float, default=None,
                   help="stop once an epoch's mean training loss is below this")
    p.add_argument("--no-balance", action="store_true", help="keep all background windows")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--loss-csv", help="per-epoch log (default: <out>.loss.csv)")

    p = sub.add_parser("detect", help="run a checkpoint on one recording")
    _add_common(p)
    p.add_argument("--signal")
    p.add_argument("--checkpoint")
    p.add_argument("--labels", help="label CSV; enables scoring")
    p.add_argument("--task", choices=("detection", "classification"), default="detection")
    _add_segmentation(p, 0.5)
    p.add_argument("--bin-s", type=float, default=None, help="track resolution (default: shift)")
    p.add_argument("--min-duration-s", type=float, default=0.0)
    p.add_argument("--merge-gap-s", type=float, default=0.0)
    p.add_argument("--tolerance-s", type=float, default=1.0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", help="events CSV (segments CSV for classification)")
    p.add_argument("--metrics", help="metrics output path (default: stdout)")
    _add_output_format(p)

    p = sub.add_parser("evaluate", help="re-score a hypothesis CSV against a truth CSV")
    _add_common(p)
    p.add_argument("--truth")
    p.add_argument("--hyp")
    p.add_argument("--mode", choices=("segments", "events"), default="events")
    p.add_argument("--tolerance-s", type=float, default=1.0)
    p.add_argument("--out", help="metrics output path (default: stdout)")
    _add_output_format(p)
    return parser


_BOOLS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}

# checked after --config is merged so the file may supply them
REQUIRED = {"synth": ["out"], "split": ["metadata", "out"], "train": ["out"],
            "detect": ["signal", "checkpoint", "out"], "evaluate": ["truth", "hyp"]}


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = sio.read_kv_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions}
        unknown = sorted(set(values) - set(actions) - {"config"})
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        defaults = {}
        for key, text in values.items():
            action = actions.get(key)
            if key == "config":
                continue
            if isinstance(action, argparse._StoreTrueAction):
                if text.lower() not in _BOOLS:
                    raise InputError(f"config key {key}: expected true/false, got {text!r}")
                defaults[key] = _BOOLS[text.lower()]
            elif action.nargs in ("+", "*"):
                defaults[key] = text.split()
            else:
                # argparse applies the flag's ``type`` to string defaults
                defaults[key] = text
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    missing = [f"--{d.replace('_', '-')}" for d in REQUIRED[args.command] if getattr(args, d) is None]
    if missing:
        raise InputError(f"{args.command}: missing required option(s) {', '.join(missing)}")
    if args.command == "train" and (args.signal is None) == (args.windows is None):
        raise InputError("train: give exactly one of --signal or --windows")
    return args


# ------------------------------------------------------------------ helpers

def _emit(text: str, path):
    if path:
        sio.atomic_write(path, text)
    else:
        sys.stdout.write(text)


def _format_metrics(doc: dict, fmt: str) -> str:
    if fmt == "json":
        return sio.dumps_json(doc)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["tp", "tn", "fp", "fn"]
    mets = ["recall", "precision", "f1", "accuracy"]
    w.writerow(["task"] + cols + mets)
    w.writerow([doc["task"]] + [doc["counts"][c] for c in cols]
               + [doc["metrics"].get(m, "") for m in mets])
    return buf.getvalue()


def _labels_for(path, recording_id: str) -> list[EventLabel]:
    table = sio.read_events(path)
    if recording_id not in table:
        raise InputError(f"{path} has no rows for recording {recording_id!r}")
    return table[recording_id]


def _labelled_recordings(signals, labels_path):
    if not labels_path:
        raise InputError("--labels is required with --signal")
    table = sio.read_events(labels_path)
    out = []
    for path in signals:
        sig = sio.read_signal(path)
        if sig.recording_id not in table:
            raise InputError(f"{labels_path} has no rows for recording {sig.recording_id!r}")
        out.append((sig, table[sig.recording_id]))
    return out


# ----------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    rec = args.recording_id or f"synth-{args.seed:03d}"
    cfg = SynthConfig(duration_s=args.duration_s, sample_rate_hz=args.rate_hz,
                      n_seizures=args.n_seizures, amplitude_ratio=args.amplitude_ratio,
                      min_gap_s=args.min_gap_s, lead_in_s=args.lead_in_s, seed=args.seed,
                      subject_id=args.subject_id or rec, recording_id=rec)
    sig, events = synth_generate(cfg)
    sio.write_signal(args.out, sig)
    sio.write_events(f"{args.out}.labels.csv", rec, events)
    log.info("wrote %s (%d seizures)", args.out, len(events))
    return EXIT_OK


def cmd_split(args) -> int:
    metas = sio.read_metadata(args.metadata)
    split = subject_split(metas, SplitSpec(tuple(args.fractions), args.seed))
    sio.atomic_write(args.out, sio.dumps_json(split.manifest()))
    return EXIT_OK


def cmd_train(args) -> int:
    seg = SegmentationConfig(args.window_s, args.shift_s)
    if args.windows:
        windows = []
        for path in args.windows:
            header, batch = sio.decode_windows(Path(path).read_bytes())
            windows += batch
    else:
        recs = _labelled_recordings(args.signal, args.labels)
        windows = training_windows(recs, seg, balance=not args.no_balance, seed=args.seed)
    if not windows:
        raise InputError("no training windows")
    window_s = windows[0].samples.size / MODEL_RATE_HZ
    val = []
    if args.val_signal:
        for sig, truth in _labelled_recordings(args.val_signal, args.labels):
            val += preprocess_classification(sig, truth, seg)
    cfg = TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate,
                      batch_size=args.batch_size, seed=args.seed, stop_loss=args.stop_loss)
    result = train(args.model, windows, cfg, model_config=load_config(args.model, window_s=window_s),
                   val_windows=val)
    sio.save_checkpoint(args.out, result.model,
                        extra={"window_s": window_s, "train": asdict(cfg), "n_windows": len(windows)})
    sio.atomic_write(args.loss_csv or f"{args.out}.loss.csv", sio.format_train_log(result.log_rows))
    log.info("trained %s on %d windows; final loss %.5f", args.model, len(windows), result.losses[-1])
    return EXIT_OK


def cmd_detect(args) -> int:
    seg = SegmentationConfig(args.window_s, args.shift_s)
    model, _ = sio.load_checkpoint(args.checkpoint)
    expected = int(round(args.window_s * MODEL_RATE_HZ))
    if model.input_len != expected:
        raise IncompatibleCheckpoint(
            f"checkpoint expects {model.input_len} samples per window but "
            f"--window-s {args.window_s} gives {expected}")
    sig = sio.read_signal(args.signal)
    rec = sig.recording_id
    truth = _labels_for(args.labels, rec) if args.labels else None
    run_config = {"window_s": args.window_s, "shift_s": args.shift_s, "model": model.kind,
                  "tolerance_s": args.tolerance_s, "seed": args.seed,
                  "checkpoint": str(args.checkpoint)}

    if args.task == "classification":
        if truth is None:
            raise InputError("classification needs --labels (activity ranges drive pre-processing)")
        windows = preprocess_classification(sig, truth, seg)
        preds = predict(model, windows, args.threshold)
        rows = [(rec, EventLabel(p.window.start_s, p.window.end_s, p.predicted_class, MODEL))
                for p in preds]
        sio.atomic_write(args.out, sio.format_events(rows))
        counts = evaluate_segments(preds, [w.label for w in windows])
        _emit(_format_metrics(metrics_document("classification", counts, run_config), args.format),
              args.metrics)
        return EXIT_OK

    if sig.duration_s < seg.window_s:
        warnings.warn(f"{rec}: signal ({sig.duration_s:.3f} s) is shorter than one window "
                      f"({seg.window_s} s); no events", stacklevel=1)
    result = detect(model, sig, seg, bin_s=args.bin_s, min_duration_s=args.min_duration_s,
                    merge_gap_s=args.merge_gap_s, threshold=args.threshold)
    sio.write_events(args.out, rec, [EventLabel(e.onset_s, e.offset_s, SEIZURE, MODEL)
                                     for e in result.events])
    if truth is not None:
        run_config.update(bin_s=args.bin_s or args.shift_s, min_duration_s=args.min_duration_s,
                          merge_gap_s=args.merge_gap_s)
        counts = match_events(truth, result.events, EvalConfig(args.tolerance_s))
        _emit(_format_metrics(metrics_document("detection", counts, run_config), args.format),
              args.metrics)
    return EXIT_OK


def _segment_key(rec: str, ev: EventLabel):
    return rec, round(ev.onset_s, 6), round(ev.offset_s, 6)


def cmd_evaluate(args) -> int:
    if args.mode == "events":
        truth = sio.read_events(args.truth)
        hyp = sio.read_events(args.hyp)
        counts = ConfusionCounts()
        cfg = EvalConfig(args.tolerance_s)
        for rec in sorted(set(truth) | set(hyp)):
            counts = counts + match_events(truth.get(rec, []), hyp.get(rec, []), cfg)
        task = "detection"
    else:
        truth_rows = sio.read_label_rows(args.truth)
        hyp_map = {}
        for rec, ev in sio.read_label_rows(args.hyp):
            hyp_map[_segment_key(rec, ev)] = ev.label
        missing = [k for k in (_segment_key(r, e) for r, e in truth_rows) if k not in hyp_map]
        if missing or len(hyp_map) != len(truth_rows):
            raise InputError(f"hypothesis segments do not line up with truth "
                             f"({len(truth_rows)} truth rows, {len(hyp_map)} hyp rows, "
                             f"{len(missing)} truth rows unmatched)")
        counts = evaluate_segments([hyp_map[_segment_key(r, e)] for r, e in truth_rows],
                                   [e.label for _, e in truth_rows])
        task = "classification"
    doc = metrics_document(task, counts, {"mode": args.mode, "tolerance_s": args.tolerance_s})
    _emit(_format_metrics(doc, args.format), args.out)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "split": cmd_split, "train": cmd_train,
            "detect": cmd_detect, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except StateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STATE
    except (ValueError, OSError) as exc:
        # InputError is a ValueError; plain ValueErrors come from config validation
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
