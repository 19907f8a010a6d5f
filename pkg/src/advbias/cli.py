"""Command-line entry point: ``prepare``, ``attack``, ``train``, ``grid``, ``report``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .attack import LAMBDA_PRESETS, AttackConfig, run_attack
from .data import DataSplits, load_saved, save_dataset, split_manifest, write_manifest
from .errors import ConfigError, DataError, FeasibleSetExhausted, NumericalError
from .fairtrain import FairnessSpec, train_fair

from .harness import (AttackSpec, ExperimentConfig, write_records, emit_results, load_results,
                      prepare_splits, preset_config, run_grid, summarize, summary_columns)
from .linmodel import expected_accuracy, fairness_gap, save_model, train_unconstrained

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
PARTS = ("clean", "test", "attack", "hard")


class _Parser(argparse.ArgumentParser):
    # bad arguments are configuration errors, not data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _load_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("pass either --config or --preset, not both")
    if args.config:
        config = ExperimentConfig.from_json(args.config)
    else:
        config = preset_config(args.preset or "synthetic-small")
    if args.seed is not None:
        config.seed = args.seed
    return config


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    return out


def _load_prepared(path) -> DataSplits:
    d = Path(path)
    return DataSplits(*(load_saved(d / f"{p}.csv", p) for p in PARTS))


def _write_json(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def cmd_prepare(args) -> None:
    config = _load_config(args)
    splits = prepare_splits(config, args.repetition)
    out = _out_dir(args)
    for p in PARTS:
        save_dataset(getattr(splits, p), out / f"{p}.csv")
    write_manifest(split_manifest(splits, config.seed, config.ratios,
                                  {"repetition": args.repetition, "config": config.to_dict()}),
                   out / "manifest.json")
    print(f"wrote {', '.join(f'{p}.csv' for p in PARTS)} and manifest.json to {out}")


def cmd_attack(args) -> None:
    config = _load_config(args)
    splits = _load_prepared(args.data) if args.data else prepare_splits(config, 0)
    if args.attack in LAMBDA_PRESETS:
        spec = AttackSpec(args.attack, preset=args.attack, mode=args.mode, eta=args.eta)
    else:
        spec = AttackSpec(args.attack, algorithm=args.attack, mode=args.mode,
                          lam_factor=args.lam_factor, eta=args.eta)
    seed = config.seed if args.seed is None else args.seed
    attack_config: AttackConfig = spec.config(args.epsilon, seed)
    run = run_attack(attack_config, splits.clean, splits.attack, splits.hard)
    out = _out_dir(args)
    run.save(out / "poison.csv", out / "trace.json")
    _write_json({"config": attack_config.to_dict(), "size": len(run), "digest": run.digest()},
                out / "run.json")
    print(f"wrote {len(run)} poisoning points to {out / 'poison.csv'} (digest {run.digest()})")


def cmd_train(args) -> None:
    if not args.data:
        raise ConfigError("train needs --data (a directory written by prepare)")
    splits = _load_prepared(args.data)
    train = splits.clean
    if args.poison:
        train = train.concat(load_saved(args.poison, "poison"))
    if args.model == "unconstrained":
        clf = train_unconstrained(train)
    else:
        delta = 0.0 if args.model == "postprocess" else args.delta
        clf = train_fair(train, FairnessSpec(delta, args.model))
    out = _out_dir(args)
    save_model(clf, out / "model.json")
    metrics = {"model": args.model, "delta": args.delta if args.model == "reductions" else None,
               "train_size": len(train),
               "test_acc": expected_accuracy(clf, splits.test),
               "train_gap": fairness_gap(clf, train),
               "test_gap": fairness_gap(clf, splits.test)}
    _write_json(metrics, out / "metrics.json")
    print(json.dumps(metrics))


def cmd_grid(args) -> None:
    config = _load_config(args)
    if args.repetitions is not None:
        if args.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        config.repetitions = args.repetitions
    out = _out_dir(args)

    def progress(row):
        logging.getLogger("advbias.grid").info("%s %s", row.run_id, row.status)

    rows = run_grid(config, progress)
    raw, summary = emit_results(rows, args.format, out / f"results.{args.format}")
    _write_json(config.to_dict(), out / "config.json")
    failed = sum(r.status != "ok" for r in rows)
    print(f"{len(rows)} rows ({failed} failed) -> {raw}, {summary}")


def cmd_report(args) -> None:
    if not args.input:
        raise ConfigError("report needs --in (a results file written by grid)")
    rows = load_results(args.input)
    if not rows:
        raise DataError(f"{args.input} has no rows")
    out = Path(args.out)
    if out.suffix == "":
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"summary.{args.format}"
    write_records(summarize(rows), summary_columns(), args.format, out)
    print(f"summarized {len(rows)} rows -> {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="advbias", description="Poisoning attacks on fair linear classifiers.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_default):
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--preset", choices=("compas", "adult", "synthetic-small"))
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--format", choices=("csv", "jsonl"), default="csv")

    p = sub.add_parser("prepare", help="ingest, filter and split; write the parts and a manifest")
    common(p, "prepared")
    p.add_argument("--repetition", type=int, default=0, help="which repetition's split to write")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("attack", help="generate one poisoning set")
    common(p, "attack-out")
    p.add_argument("--data", help="directory written by prepare (default: prepare in memory)")
    p.add_argument("--attack", default="alg2",
                   help="lambda preset (alg1-compas, alg1-adult, alg2, alg2-lambda0) or algorithm")
    p.add_argument("--mode", choices=("sampling", "labeling"), default="sampling")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--lam-factor", type=float, default=0.0, help="lambda / epsilon without a preset")
    p.add_argument("--eta", type=float, default=0.001)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("train", help="train one model on a prepared (optionally poisoned) set")
    common(p, "train-out")
    p.add_argument("--data", help="directory written by prepare")
    p.add_argument("--poison", help="poison.csv written by attack")
    p.add_argument("--model", choices=("unconstrained", "reductions", "postprocess"),
                   default="unconstrained")
    p.add_argument("--delta", type=float, default=0.01)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="run the full experiment grid")
    common(p, "grid-out")
    p.add_argument("--repetitions", type=int, help="override the number of repetitions")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("report", help="aggregate a results file into per-cell mean/std")
    common(p, "report-out")
    p.add_argument("--in", dest="input", help="results file written by grid")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FeasibleSetExhausted) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
