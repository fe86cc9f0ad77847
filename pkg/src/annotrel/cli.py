"""Command-line front end: ``annotrel <command> ...``.

Exit codes: 0 success, 2 input/validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .aggregate import (
    accuracy,
    histogram_series,
    label_statistics,
    majority_vote,
    union_vote,
    write_decisions,
    write_label_table,
)
from .agreement import (
    alpha_by_class,
    alpha_threshold_sweep,
    competence_thresholds,
    matrix_alpha,
    write_alpha_table,
    write_sweep,
)
from .core import AnnotationFormatError, filter_annotators, read_matrix, read_vocabulary, write_long_matrix
from .mace import EmptyMatrixError, MaceConfig, em_fit, model_to_dict, predict, read_competence, threshold_at, write_competence
from .simulate import CampaignSpec, generate_campaign, generate_spammers, read_truth, write_truth

log = logging.getLogger("annotrel")

EXIT_INPUT = 2
EXIT_NUMERIC = 3

REPORT_ARTIFACTS = (
    "label_stats.csv",
    "alpha_by_class.csv",
    "labels_per_file.json",
    "competence.csv",
    "alpha_sweep.csv",
)


class Run:
    """Collects inputs and outputs of one command and writes its manifest."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.out = Path(args.out)
        self.seed = getattr(args, "seed", None)
        # output location and verbosity do not affect results
        self.config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "verbose", "needs_seed")}
        self.inputs: Dict[str, str] = {}
        self.outputs: List[str] = []
        self.extra: dict = {}
        self.started = time.perf_counter()

    def read_text(self, path: str) -> str:
        data = Path(path).read_bytes()
        self.inputs[str(path)] = hashlib.sha256(data).hexdigest()
        return data.decode("utf-8")

    def write(self, name: str, text: str) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(text, encoding="utf-8")
        self.outputs.append(name)
        log.info("wrote %s", self.out / name)

    def write_json(self, name: str, obj) -> None:
        self.write(name, json.dumps(obj, indent=2, sort_keys=False) + "\n")

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "tool_version": __version__,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            **self.extra,
            "duration_seconds": round(time.perf_counter() - self.started, 6),
        }
        self.write_json("manifest.json", manifest)


def _csv(writer, *args) -> str:
    buf = io.StringIO()
    writer(*args, buf)
    return buf.getvalue()


def _load_matrix(run: Run, args):
    vocab = None
    if getattr(args, "vocab", None):
        vocab = read_vocabulary(io.StringIO(run.read_text(args.vocab)))
    return read_matrix(io.StringIO(run.read_text(args.matrix)), vocab)


def _load_competence(run: Run, path: str) -> Dict[str, float]:
    return read_competence(io.StringIO(run.read_text(path)))


def _thresholds(text: str) -> List[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid threshold list {text!r}") from None
    return values


def _mace_config(args) -> MaceConfig:
    return MaceConfig(
        restarts=args.restarts,
        max_iterations=args.iterations,
        tolerance=args.tolerance,
        smoothing=args.smoothing,
        seed=args.seed,
    )


def _alpha_reports_json(reports) -> list:
    return [r.to_dict() for r in reports]


def cmd_expand(args) -> None:
    run = Run("expand", args)
    matrix, _ = _load_matrix(run, args)
    run.write("matrix.csv", _csv(write_long_matrix, matrix))
    run.extra["items"] = len(matrix.items)
    run.extra["annotators"] = len(matrix.annotators)
    run.extra["cells"] = matrix.num_cells
    run.finish()


def cmd_alpha(args) -> None:
    run = Run("alpha", args)
    matrix, vocab = _load_matrix(run, args)
    reports = alpha_by_class(matrix, vocab) if args.by_class else [matrix_alpha(matrix)]
    sweep = None
    if args.competence:
        competence = _load_competence(run, args.competence)
        thresholds = args.thresholds if args.thresholds is not None else competence_thresholds(competence)
        sweep = alpha_threshold_sweep(matrix, competence, thresholds)
    elif args.thresholds is not None:
        raise ValueError("--thresholds requires --competence")

    if args.format == "json":
        payload = {"reports": _alpha_reports_json(reports)}
        if sweep is not None:
            payload["sweep"] = [
                {"threshold": p.threshold, "annotators_kept": p.annotators_kept, **p.report.to_dict()} for p in sweep
            ]
        run.write_json("alpha.json", payload)
    else:
        run.write("alpha.csv", _csv(write_alpha_table, {"all": reports}))
        if sweep is not None:
            run.write("alpha_sweep.csv", _csv(write_sweep, sweep))
    run.finish()


def cmd_mace(args) -> None:
    run = Run("mace", args)
    matrix, _ = _load_matrix(run, args)
    model = em_fit(matrix, _mace_config(args))
    estimate = predict(model)
    if args.keep_percent is not None:
        estimate = threshold_at(estimate, args.keep_percent)
    run.write_json("model.json", model_to_dict(model, estimate))
    run.write("competence.csv", _csv(write_competence, model.competence()))
    run.write("labels.csv", _csv(write_decisions, estimate))
    run.extra["log_likelihood"] = model.log_likelihood
    run.finish()


def _estimate(matrix, method: str, args):
    if method == "union":
        return union_vote(matrix), None
    if method == "majority":
        return majority_vote(matrix), None
    if method == "mace" or method.startswith("mace@"):
        if args.seed is None:
            raise ValueError("--seed is required for MACE aggregation")
        model = em_fit(matrix, _mace_config(args))
        estimate = predict(model)
        if method != "mace":
            estimate = threshold_at(estimate, float(method.split("@", 1)[1]))
        return estimate, model
    raise ValueError(f"unknown method {method!r}")


def cmd_aggregate(args) -> None:
    run = Run("aggregate", args)
    matrix, vocab = _load_matrix(run, args)
    estimate, _ = _estimate(matrix, args.method, args)
    stats = {args.method: label_statistics(estimate, vocab)}
    run.write("labels.csv", _csv(write_decisions, estimate))
    run.write("stats.csv", _csv(write_label_table, stats))
    run.write_json("histogram.json", histogram_series(stats))
    run.finish()


def cmd_filter(args) -> None:
    run = Run("filter", args)
    matrix, _ = _load_matrix(run, args)
    if args.keep:
        keep = [a.strip() for a in args.keep.split(",") if a.strip()]
    elif args.competence is not None and args.min_competence is not None:
        competence = _load_competence(run, args.competence)
        missing = [a for a in matrix.annotators if a not in competence]
        if missing:
            raise KeyError(f"no competence for annotators: {missing[:5]}")
        keep = [a for a in matrix.annotators if competence[a] >= args.min_competence]
    else:
        raise ValueError("filter needs --keep or both --competence and --min-competence")
    filtered = filter_annotators(matrix, keep)
    run.write("matrix.csv", _csv(write_long_matrix, filtered))
    run.extra["annotators_kept"] = len(filtered.annotators)
    run.finish()


def cmd_simulate(args) -> None:
    run = Run("simulate", args)
    if args.spec:
        data = json.loads(run.read_text(args.spec))
        data["seed"] = args.seed
        campaign = generate_campaign(CampaignSpec.from_dict(data))
    else:
        campaign = generate_spammers(seed=args.seed)
    run.write("campaign.csv", _csv(write_long_matrix, campaign.matrix))
    run.write("truth.csv", _csv(write_truth, campaign))
    run.extra["campaign_spec"] = campaign.spec.to_dict()
    run.extra["items"] = len(campaign.matrix.items)
    run.finish()


def cmd_report(args) -> None:
    run = Run("report", args)
    matrix, vocab = _load_matrix(run, args)
    model = em_fit(matrix, _mace_config(args))
    competence = _load_competence(run, args.competence) if args.competence else model.competence()

    mace_est = predict(model)
    estimates = {
        "union": union_vote(matrix),
        "majority": majority_vote(matrix),
        "mace": mace_est,
        f"mace@{args.keep_percent:g}": threshold_at(mace_est, args.keep_percent),
    }
    stats = {name: label_statistics(est, vocab) for name, est in estimates.items()}
    run.write("label_stats.csv", _csv(write_label_table, stats))

    missing = [a for a in matrix.annotators if a not in competence]
    if missing:
        raise KeyError(f"no competence for annotators: {missing[:5]}")
    columns = {"all": alpha_by_class(matrix, vocab)}
    for t in args.thresholds:
        keep = [a for a in matrix.annotators if competence[a] >= t]
        columns[f"competence>={t:g}"] = alpha_by_class(filter_annotators(matrix, keep), vocab)
    run.write("alpha_by_class.csv", _csv(write_alpha_table, columns))

    run.write_json("labels_per_file.json", histogram_series(stats))
    run.write("competence.csv", _csv(write_competence, {a: competence[a] for a in matrix.annotators}))
    sweep = alpha_threshold_sweep(matrix, competence, competence_thresholds(competence))
    run.write("alpha_sweep.csv", _csv(write_sweep, sweep))

    if args.truth:
        truth = read_truth(io.StringIO(run.read_text(args.truth)))
        unknown = [item for item in matrix.items if item not in truth]
        if unknown:
            raise KeyError(f"truth file lacks items, e.g. {unknown[0]}")
        run.write_json(
            "recovery.json",
            {name: {"accuracy": accuracy(est, truth, only_kept=True), "items_scored": int(est.kept.sum())}
             for name, est in estimates.items()},
        )
    run.extra["log_likelihood"] = model.log_likelihood
    run.finish()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, default=None, help="random seed; required by stochastic commands")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("-v", "--verbose", action="store_true")

    matrix_in = argparse.ArgumentParser(add_help=False)
    matrix_in.add_argument("matrix", help="campaign CSV or long item-matrix CSV")
    matrix_in.add_argument("--vocab", help="label vocabulary, one per line (required for campaign CSV)")

    mace_flags = argparse.ArgumentParser(add_help=False)
    mace_flags.add_argument("--restarts", type=int, default=10)
    mace_flags.add_argument("--iterations", type=int, default=50)
    mace_flags.add_argument("--tolerance", type=float, default=1e-6)
    mace_flags.add_argument("--smoothing", type=float, default=0.1)

    parser = argparse.ArgumentParser(prog="annotrel", description="Annotation reliability toolkit")
    parser.add_argument("--version", action="version", version=f"annotrel {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("expand", parents=[common, matrix_in], help="binarize a campaign into a long item matrix")
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("alpha", parents=[common, matrix_in], help="Krippendorff's nominal alpha")
    p.add_argument("--by-class", action="store_true")
    p.add_argument("--competence", help="CSV annotator_id,theta")
    p.add_argument("--thresholds", type=_thresholds, default=None, help="comma-separated, ascending")
    p.set_defaults(func=cmd_alpha)

    p = sub.add_parser("mace", parents=[common, matrix_in, mace_flags], help="fit MACE competence model")
    p.add_argument("--keep-percent", type=float, default=None)
    p.set_defaults(func=cmd_mace, needs_seed=True)

    p = sub.add_parser("aggregate", parents=[common, matrix_in, mace_flags], help="aggregate labels")
    p.add_argument("--method", required=True, help="union, majority, mace or mace@P")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("filter", parents=[common, matrix_in], help="drop annotators")
    p.add_argument("--keep", help="comma-separated annotator ids to keep")
    p.add_argument("--competence", help="CSV annotator_id,theta")
    p.add_argument("--min-competence", type=float)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic campaign")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--spec", help="JSON campaign spec")
    group.add_argument("--spammers-preset", action="store_true", help="150 coin-flip annotators x 130 of 3930 files")
    p.set_defaults(func=cmd_simulate, needs_seed=True)

    p = sub.add_parser("report", parents=[common, matrix_in, mace_flags], help="all tables and figure data")
    p.add_argument("--competence", help="CSV annotator_id,theta (default: fitted MACE competence)")
    p.add_argument("--truth", help="truth CSV file_id,label,value for recovery accuracy")
    p.add_argument("--thresholds", type=_thresholds, default=[0.6, 0.8])
    p.add_argument("--keep-percent", type=float, default=90.0)
    p.set_defaults(func=cmd_report, needs_seed=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "needs_seed", False) and args.seed is None:
        parser.error(f"{args.command} requires --seed")
    try:
        args.func(args)
    except EmptyMatrixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (AnnotationFormatError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
