"""Command line entry point: ``labelleak {generate,train,attack,sweep,report}``.

Experiment flags mirror :class:`~labelleak.harness.ExperimentConfig`. When
``--config FILE`` is given the JSON file is the whole configuration and the
experiment flags are ignored.
"""

import argparse
import csv
import json
import logging
import os
import sys

from .datagen import write_csv_stream
from .exceptions import DomainError, LabelLeakError, NumericError
from .harness import (ExperimentConfig, aggregate_summaries, build_clients, run_experiment, run_sweep,
                      train_checkpoints, write_report)

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _csv_list(text):
    return [t for t in text.split(",") if t]


def _ldp_setting(text):
    """``none``, ``clip=0.1``, ``noise=0.1`` or ``clip=0.1+noise=0.1``."""
    if text == "none":
        return None
    out = {}
    for part in text.split("+"):
        key, _, value = part.partition("=")
        field = {"clip": "clip_norm", "noise": "noise_sigma"}.get(key)
        if field is None or not value:
            raise argparse.ArgumentTypeError(f"bad LDP setting {text!r}")
        out[field] = float(value)
    return out


def _add_experiment_flags(p):
    g = p.add_argument_group("experiment (ignored when --config is given)")
    g.add_argument("--config", help="JSON experiment config; overrides every other flag")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--clients", type=int, default=10, dest="client_count")
    g.add_argument("--classes", type=int, default=5, help="class count including NULL")
    g.add_argument("--feature-dim", type=int, default=3)
    g.add_argument("--length", type=int, default=20_000, help="samples per synthetic client")
    g.add_argument("--null-weight", type=float, default=0.4)
    g.add_argument("--dwell", type=float, default=20.0, help="mean activity dwell in windows")
    g.add_argument("--null-dwell", type=float, default=None)
    g.add_argument("--subject-shift", type=float, default=0.5)
    g.add_argument("--csv", nargs="+", dest="csv_paths", help="client CSV files instead of synthetic data")
    g.add_argument("--label-column", default="label")
    g.add_argument("--window", type=int, default=50, dest="window_length")
    g.add_argument("--overlap", type=float, default=0.5)
    g.add_argument("--sampling", default="shuffled", choices=["sequential", "shuffled", "balanced"])
    g.add_argument("--batch-size", type=int, default=100)
    g.add_argument("--steps", type=int, default=1)
    g.add_argument("--hidden", type=_csv_list, default=["64", "32"], help="comma separated widths")
    g.add_argument("--no-bias", action="store_true", help="final layer without bias")
    g.add_argument("--init-gain", type=float, default=0.5)
    g.add_argument("--trained", action="store_true")
    g.add_argument("--epochs", type=int, default=100)
    g.add_argument("--lr", type=float, default=0.01)
    g.add_argument("--train-batch-size", type=int, default=100)
    g.add_argument("--checkpoint-dir")
    g.add_argument("--attacks", type=_csv_list, default=None)
    g.add_argument("--probes", type=int, default=10, help="LLG* dummy batches")
    g.add_argument("--clip", type=float, default=None)
    g.add_argument("--sigma", type=float, default=None)
    g.add_argument("--leacc-mismatch", action="store_true", help="report LeAcc as the raw mismatch rate")
    g.add_argument("--allow-single-batch", action="store_true")


def config_from_args(args, extra=None):
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            d = json.load(fh)
        if extra is not None:
            extra.update(d.pop("sweep", None) or {})
        return ExperimentConfig.from_dict(d)
    ldp = None
    if args.clip is not None or args.sigma is not None:
        ldp = {"clip_norm": args.clip, "noise_sigma": args.sigma}
    cfg = ExperimentConfig(
        stream={"class_count": args.classes, "feature_dim": args.feature_dim, "length": args.length,
                "null_weight": args.null_weight, "mean_dwell_windows": args.dwell,
                "null_dwell_windows": args.null_dwell, "subject_shift": args.subject_shift},
        csv_paths=args.csv_paths, csv_label_column=args.label_column, client_count=args.client_count,
        window_length=args.window_length, overlap=args.overlap, sampling=args.sampling,
        batch_size=args.batch_size, steps=args.steps, hidden_dims=[int(h) for h in args.hidden],
        final_layer_has_bias=not args.no_bias, init_gain=args.init_gain, trained=args.trained,
        epochs=args.epochs, learning_rate=args.lr, train_batch_size=args.train_batch_size,
        checkpoint_dir=args.checkpoint_dir, llg_star_probes=args.probes, ldp=ldp,
        leacc_complement=not args.leacc_mismatch, allow_single_batch=args.allow_single_batch,
        seed=args.seed)
    if args.attacks:
        cfg.attacks = args.attacks
    return cfg


def _out_dir(cfg, args):
    out = cfg.output_dir if args.config and cfg.output_dir else args.out
    if not out:
        raise DomainError("no output directory: pass --out or set output_dir in the config")
    return out


def cmd_generate(args):
    cfg = config_from_args(args)
    out = _out_dir(cfg, args)
    os.makedirs(out, exist_ok=True)
    for stream in build_clients(cfg):
        path = write_csv_stream(stream, os.path.join(out, f"{stream.client_id}.csv"))
        print(path)


def cmd_train(args):
    cfg = config_from_args(args)
    for path in train_checkpoints(cfg, _out_dir(cfg, args)):
        print(path)


def _print_aggregates(report):
    cfg = report.config
    print(f"# {cfg.sampling} {'trained' if cfg.trained else 'untrained'} ldp={cfg.ldp_label}")
    for name, agg in report.aggregates().items():
        vals = " ".join(f"{m}={v:.4f}" if v is not None else f"{m}=skipped" for m, v in agg.items())
        print(f"{name:9s} {vals}")


def cmd_attack(args):
    cfg = config_from_args(args)
    out = _out_dir(cfg, args)
    report = run_experiment(cfg)
    write_report(report, out)
    _print_aggregates(report)


def cmd_sweep(args):
    extra = {}
    cfg = config_from_args(args, extra)
    out = _out_dir(cfg, args)
    strategies = extra.get("strategies") or args.strategies
    ldp = extra["ldp"] if "ldp" in extra else args.ldp
    states = extra.get("model_states") or args.model_states
    trained = [{"trained": True, "untrained": False}[s] for s in states] if states else None
    for report in run_sweep(cfg, strategies, ldp, trained, directory=out):
        _print_aggregates(report)


def cmd_report(args):
    rows = aggregate_summaries(args.summaries)
    cols = ["attack", "strategy", "model_state", "ldp", "clients", "leacc", "lnacc", "classacc"]
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in cols])
    finally:
        if fh is not sys.stdout:
            fh.close()


def build_parser():
    parser = argparse.ArgumentParser(prog="labelleak", description="Label leakage experiments on HAR-style streams")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic client streams as CSV")
    _add_experiment_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train and save the leave-one-subject-out models")
    _add_experiment_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run one experiment and write its report")
    _add_experiment_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="run a grid of sampling strategies, LDP settings and model states")
    _add_experiment_flags(p)
    p.add_argument("--out")
    p.add_argument("--strategies", type=_csv_list, default=["sequential", "balanced", "shuffled"])
    p.add_argument("--ldp", type=_ldp_setting, nargs="+", default=None,
                   help="settings such as none clip=0.1 noise=0.1 clip=0.1+noise=0.1")
    p.add_argument("--model-states", type=_csv_list, default=None, help="untrained,trained")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="aggregate summary.csv files")
    p.add_argument("summaries", nargs="+")
    p.add_argument("--out", help="write the table here instead of stdout")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericError as exc:
        print(f"labelleak: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LabelLeakError, ValueError, LookupError, KeyError, TypeError, OSError) as exc:
        print(f"labelleak: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
