"""Command-line interface: ``openapmax <command> [options]``.

Commands: gen, ranges, train, fit-open, predict, eval, fig-distances.
Exit status is 0 on success, 1 on a usage error and 2 on a data or model
error. ``ranges``, ``train`` and ``fit-open`` split the input cohort at
subject level with ``--seed`` and ``--fractions``, so the same flags give
the same split in every step.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .classifier import ClassifierModel, TrainConfig, train_classifier
from .data_model import DataError, Dataset, parse_dataset, split_dataset, write_dataset
from .evaluation import (
    BootstrapConfig,
    align_truth,
    evaluate,
    read_predictions,
    write_distances,
    write_predictions,
)
from .evt import ConvergenceError
from .openset import (
    DEFAULT_ALPHA,
    DEFAULT_QUANTILE,
    ModelError,
    OpenApMaxModel,
    fit_openapmax,
    predict_many,
    predict_softmax_threshold,
)
from .pattern import RangeTable, estimate_normal_ranges, load_overrides, table1_ranges
from .synth import PRESETS, default_spec, generate_cohort

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; we reserve 2 for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def builtin_overrides_path():
    return resources.files("openapmax").joinpath("data/guideline_overrides.json")


# --- argument helpers -----------------------------------------------------------


def _int_list(text: str, n: Optional[int] = None) -> list[int]:
    try:
        out = [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if n is not None and len(out) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated integers, got {text!r}")
    return out


def _counts(text: str) -> list[int]:
    out = _int_list(text, 3)
    if any(c < 0 for c in out):
        raise argparse.ArgumentTypeError("counts must be nonnegative")
    return out


def _fractions(text: str) -> tuple[float, float, float]:
    try:
        out = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}") from None
    if len(out) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return out


def _per_category(text: str, cast):
    parts = text.split(",")
    try:
        vals = [cast(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
    if len(vals) == 1:
        return vals[0]
    if len(vals) == 2:
        return vals
    raise argparse.ArgumentTypeError("give one value, or two in AD,CN order")


def _add_split(p: argparse.ArgumentParser, required_seed: bool = True) -> None:
    p.add_argument("--seed", type=int, required=required_seed, help="seed for the subject-level split and any fitting")
    p.add_argument(
        "--fractions",
        type=_fractions,
        default=(0.8, 0.05, 0.15),
        help="train,validation,test fractions for the split (default 0.8,0.05,0.15)",
    )


def _select(ds: Dataset, args) -> Dataset:
    which = getattr(args, "split", "all")
    if which == "all":
        return ds
    train, val, test = split_dataset(ds, args.fractions, args.seed)
    return {"train": train, "validation": val, "test": test}[which]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="openapmax", description="Abnormal-pattern open-set recognition for AD/CN/Unknown.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen", help="generate a synthetic cohort")
    p.add_argument("--preset", choices=PRESETS, default="multi-strategy", help="indicator acquisition setting")
    p.add_argument("--counts", type=_counts, default=[400, 400, 200], help="AD,CN,Unknown subject counts")
    p.add_argument("--seed", type=int, required=True, help="sampling seed")
    p.add_argument("--out", required=True, help="output dataset (.csv, or .jsonl for JSON lines)")

    p = sub.add_parser("ranges", help="estimate per-category normal ranges from the training split")
    p.add_argument("--data", required=True, help="cohort file")
    _add_split(p)
    p.add_argument(
        "--overrides",
        help="JSON file of ranges that replace the estimates (default: built-in MMSE/MOCA guideline bounds)",
    )
    p.add_argument("--no-overrides", action="store_true", help="estimate every entry from data")
    p.add_argument(
        "--table1",
        action="store_true",
        help="skip estimation and use the clinical reference range for every entry",
    )
    p.add_argument(
        "--fallback-table1",
        action="store_true",
        help="use the clinical reference range where an entry has fewer than 20 observations",
    )
    p.add_argument("--out", required=True, help="output range table JSON")

    p = sub.add_parser("train", help="train the closed-set AD/CN classifier")
    p.add_argument("--data", required=True, help="cohort file")
    _add_split(p)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs, help="maximum epochs (default 500)")
    p.add_argument("--patience", type=int, default=TrainConfig.patience, help="early-stopping patience (default 50)")
    p.add_argument("--out", required=True, help="output classifier JSON")

    p = sub.add_parser("fit-open", help="fit the open-set model on the training split")
    p.add_argument("--data", required=True, help="cohort file")
    _add_split(p)
    p.add_argument("--classifier", required=True, help="classifier JSON from `train`")
    p.add_argument("--ranges", required=True, help="range table JSON from `ranges`")
    p.add_argument("--n-centers", type=lambda t: _per_category(t, int), default=3, help="centers per category (N)")
    p.add_argument(
        "--quantile", type=lambda t: _per_category(t, float), default=DEFAULT_QUANTILE, help="threshold quantile (Q)"
    )
    p.add_argument("--alpha", type=int, default=DEFAULT_ALPHA, help="number of top classes revised")
    p.add_argument("--no-flag-f", action="store_true", help="disable the threshold-distance correction")
    p.add_argument("--tail-size", type=int, help="Weibull tail size (default min(20, ceil(n/2)))")
    p.add_argument("--out", required=True, help="output model JSON")

    p = sub.add_parser("predict", help="open-set predictions for every record")
    p.add_argument("--model", required=True, help="model JSON from `fit-open`")
    p.add_argument("--in", dest="input", required=True, help="cohort file")
    p.add_argument("--out", required=True, help="output predictions CSV")
    p.add_argument("--split", choices=("all", "train", "validation", "test"), default="all", help="records to predict")
    _add_split(p, required_seed=False)
    p.add_argument(
        "--tau",
        type=float,
        help="use the softmax-threshold baseline with this threshold instead of the open-set model",
    )

    p = sub.add_parser("eval", help="sensitivity and AUC with bootstrap intervals")
    p.add_argument("--pred", required=True, help="predictions CSV from `predict`")
    p.add_argument("--truth", required=True, help="labeled cohort file")
    p.add_argument("--out", help="output report JSON (default: print to stdout)")
    p.add_argument("--seed", type=int, default=0, help="bootstrap seed (default 0)")
    p.add_argument("--resample-n", type=int, default=BootstrapConfig.resample_n, help="cases per resample")
    p.add_argument("--trials", type=int, default=BootstrapConfig.trials, help="bootstrap trials")

    p = sub.add_parser("fig-distances", help="per-record distances to both categories, for a scatter plot")
    p.add_argument("--model", required=True, help="model JSON from `fit-open`")
    p.add_argument("--in", dest="input", required=True, help="labeled cohort file")
    p.add_argument("--out", required=True, help="output CSV (dist_AD, dist_CN, label)")
    p.add_argument("--split", choices=("all", "train", "validation", "test"), default="all", help="records to export")
    _add_split(p, required_seed=False)
    return parser


# --- commands -------------------------------------------------------------------


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return path


def cmd_gen(args) -> None:
    ds = generate_cohort(default_spec(args.preset, args.counts, args.seed))
    write_dataset(ds, args.out)


def cmd_ranges(args) -> None:
    train, _, _ = split_dataset(parse_dataset(_require(args.data)), args.fractions, args.seed)
    if args.table1:
        RangeTable(table1_ranges()).save(args.out)
        return
    if args.no_overrides:
        overrides = {}
    else:
        overrides = load_overrides(_require(args.overrides) if args.overrides else builtin_overrides_path())
    fallback = table1_ranges() if args.fallback_table1 else None
    estimate_normal_ranges(train, overrides, fallback).save(args.out)


def cmd_train(args) -> None:
    train, val, _ = split_dataset(parse_dataset(_require(args.data)), args.fractions, args.seed)
    config = TrainConfig(epochs=args.epochs, patience=args.patience, seed=args.seed)
    train_classifier(train, val, config).save(args.out)


def cmd_fit_open(args) -> None:
    ranges = RangeTable.load(_require(args.ranges))
    classifier = ClassifierModel.load(_require(args.classifier))
    train, _, _ = split_dataset(parse_dataset(_require(args.data)), args.fractions, args.seed)
    model = fit_openapmax(
        train,
        classifier,
        ranges,
        n_centers=args.n_centers,
        quantiles=args.quantile,
        tail_size=args.tail_size,
        seed=args.seed,
        alpha=args.alpha,
        flag_f=not args.no_flag_f,
    )
    model.save(args.out, args.classifier)


def _records_for(args):
    if args.split != "all" and args.seed is None:
        raise UsageError("--split requires --seed")
    return _select(parse_dataset(_require(args.input)), args).records


def cmd_predict(args) -> None:
    model = OpenApMaxModel.load(_require(args.model))
    records = _records_for(args)
    if args.tau is None:
        preds = predict_many(model, records)
    else:
        acts = model.classifier.activations_matrix(np.stack([r.as_array() for r in records])) if records else []
        preds = [predict_softmax_threshold(model.classifier, r, args.tau, v) for r, v in zip(records, acts)]
    write_predictions(args.out, records, preds)


def cmd_eval(args) -> None:
    table = read_predictions(_require(args.pred))
    truth = align_truth(table, parse_dataset(_require(args.truth)))
    config = BootstrapConfig(resample_n=args.resample_n, trials=args.trials)
    report = evaluate(table.decisions, table.probs, truth, config, args.seed)
    text = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)


def cmd_fig_distances(args) -> None:
    model = OpenApMaxModel.load(_require(args.model))
    records = _records_for(args)
    write_distances(args.out, records, predict_many(model, records))


COMMANDS = {
    "gen": cmd_gen,
    "ranges": cmd_ranges,
    "train": cmd_train,
    "fit-open": cmd_fit_open,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "fig-distances": cmd_fig_distances,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"openapmax {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelError, ConvergenceError, ValueError, KeyError, OSError) as exc:
        print(f"openapmax {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
