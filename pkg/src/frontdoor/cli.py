"""Command-line interface: ``estimate`` on a CSV, ``simulate`` a study, ``report`` a saved study."""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Optional, Sequence

import numpy as np

from .api import estimate
from .data import ESTIMATOR_NAMES, Estimator, EstimatorConfig, MediatorKind, OutcomeKind, Schema, load_csv, read_ratio_csv
from .errors import FrontDoorError, ValidationError
from .nuisance import LearnerSpec
from .sim import DGP_NAMES, DgpSpec, SimReport, run_study

EXIT_VALIDATION = 2
EXIT_ESTIMATION = 3

LEARNERS = ("main", "interactions", "intercept")
DENSITIES = ("kernel", "normal")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _split(text: Optional[str]) -> list:
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump(payload: dict, out: Optional[str]) -> None:
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _learner(args) -> LearnerSpec:
    return LearnerSpec.from_name(args.learner, density=args.density)


def _add_model_flags(p):
    p.add_argument("--learner", default="main", choices=LEARNERS,
                   help="working-model terms for every nuisance regression (default: main)")
    p.add_argument("--density", default="kernel", choices=DENSITIES,
                   help="continuous-mediator density estimator (default: kernel)")
    p.add_argument("--folds", type=int, default=1, help="cross-fitting folds; 1 disables (default: 1)")
    p.add_argument("--seed", type=int, default=0, help="seed for fold splits and simulation streams")
    p.add_argument("--max-iter", type=int, default=500, help="cap on targeting iterations")


def build_parser() -> argparse.ArgumentParser:
    est_list = ", ".join(ESTIMATOR_NAMES)
    dgp_list = ", ".join(DGP_NAMES)
    parser = _Parser(
        prog="frontdoor",
        description="Front-door effect estimation with one-step and targeted estimators.",
        epilog=f"estimators: {est_list}\ndgps: {dgp_list}",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pe = sub.add_parser("estimate", help="estimate a counterfactual mean or the ACE from a CSV",
                        epilog=f"estimators: {est_list}", formatter_class=argparse.RawDescriptionHelpFormatter)
    pe.add_argument("--data", required=True, help="CSV with a header row")
    pe.add_argument("--y", help="outcome column")
    pe.add_argument("--a", help="binary treatment column")
    pe.add_argument("--m", help="mediator column(s), comma separated")
    pe.add_argument("--x", help="covariate column(s), comma separated")
    pe.add_argument("--mediator-kind", choices=[k.value for k in MediatorKind],
                    help="override mediator type inference")
    pe.add_argument("--outcome-kind", default="continuous", choices=[k.value for k in OutcomeKind])
    pe.add_argument("--estimator", default="tmle-1", choices=ESTIMATOR_NAMES, metavar="NAME",
                    help=f"one of: {est_list}")
    target = pe.add_mutually_exclusive_group()
    target.add_argument("--a0", type=int, choices=(0, 1), default=1, help="treatment level (default: 1)")
    target.add_argument("--ace", action="store_true", help="estimate E[Y^1] - E[Y^0]")
    pe.add_argument("--ratio-file", help="CSV with an fm_ratio column of per-row mediator density ratios")
    pe.add_argument("--out", help="write JSON here instead of stdout")
    _add_model_flags(pe)

    ps = sub.add_parser("simulate", help="run a Monte Carlo study on a built-in DGP",
                        epilog=f"estimators: {est_list}\ndgps: {dgp_list}",
                        formatter_class=argparse.RawDescriptionHelpFormatter)
    ps.add_argument("--dgp", required=True, metavar="NAME", help=f"one of: {dgp_list}")
    ps.add_argument("--n", type=int, required=True, help="rows per replicate")
    ps.add_argument("--reps", type=int, default=200, help="replicates (default: 200)")
    ps.add_argument("--estimators", default="tmle-1,onestep-1", help=f"comma separated; from: {est_list}")
    ps.add_argument("--target", default="ace", choices=("ace", "0", "1"), help="ACE or one treatment level")
    ps.add_argument("--oracle", action="store_true", help="plug in the generating nuisance functions")
    ps.add_argument("--out", default="sim_report", help="output prefix; writes PREFIX.csv and PREFIX.json")
    _add_model_flags(ps)

    pr = sub.add_parser("report", help="format a saved study report")
    pr.add_argument("--in", dest="path", required=True, help="report JSON written by simulate")
    pr.add_argument("--format", default="text", choices=("text", "markdown"))
    return parser


def _config(args, estimator: str, outcome_kind: OutcomeKind, a0: int = 1) -> EstimatorConfig:
    if args.folds < 1:
        raise ValidationError("--folds must be at least 1")
    return EstimatorConfig(a0=a0, estimator=Estimator(estimator), outcome_kind=outcome_kind,
                           crossfit_folds=args.folds, seed=args.seed, max_tmle_iter=args.max_iter)


def cmd_estimate(args) -> dict:
    for flag, role in (("y", "outcome"), ("a", "treatment"), ("m", "mediator"), ("x", "covariate")):
        if not getattr(args, flag):
            raise ValidationError(f"{role} column required (--{flag})")
    kind = MediatorKind(args.mediator_kind) if args.mediator_kind else None
    schema = Schema(y=args.y, a=args.a, m=_split(args.m), x=_split(args.x), mediator_kind=kind)
    try:
        data = load_csv(args.data, schema)
    except OSError as exc:
        raise ValidationError(f"cannot read {args.data}: {exc.strerror}") from None
    ratio = None
    if args.ratio_file:
        try:
            ratio = read_ratio_csv(args.ratio_file, data.n)
        except OSError as exc:
            raise ValidationError(f"cannot read {args.ratio_file}: {exc.strerror}") from None
    cfg = _config(args, args.estimator, OutcomeKind(args.outcome_kind), args.a0)
    result = estimate(data, cfg, _learner(args), ratio_values=ratio, ace_effect=args.ace)
    payload = result.to_dict()
    payload.update({
        "schema": 1,
        "estimator": cfg.estimator.value,
        "target": "ace" if args.ace else "a0",
        "a0": None if args.ace else cfg.a0,
        "n": data.n,
        "config": {
            "estimator": cfg.estimator.value,
            "ace": bool(args.ace),
            "a0": None if args.ace else cfg.a0,
            "learner": args.learner,
            "density": args.density,
            "folds": cfg.crossfit_folds,
            "seed": cfg.seed,
            "max_iter": cfg.max_tmle_iter,
            "outcome_kind": cfg.outcome_kind.value,
            "mediator_kind": data.mediator_kind.value,
            "ratio_file": bool(args.ratio_file),
            "score_tolerance": cfg.score_tolerance(data.n),
        },
    })
    _dump(payload, args.out)
    return payload


def cmd_simulate(args) -> SimReport:
    spec = DgpSpec(args.dgp, args.n, args.seed)
    names = _split(args.estimators)
    if not names:
        raise ValidationError("at least one estimator required (--estimators)")
    for e in names:
        if e not in ESTIMATOR_NAMES:
            raise ValidationError(f"unknown estimator {e!r}; valid names: {', '.join(ESTIMATOR_NAMES)}")
    if args.reps < 2:
        raise ValidationError("--reps must be at least 2")
    cfg = _config(args, names[0], spec.dgp.outcome_kind)
    target = args.target if args.target == "ace" else int(args.target)
    report = run_study(spec, names, args.reps, _learner(args), cfg, target=target, oracle=args.oracle)
    report.write_csv(f"{args.out}.csv")
    report.write_json(f"{args.out}.json")
    sys.stdout.write(format_report(report, "text"))
    return report


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.4f}"
    return str(v)


def format_report(report: SimReport, fmt: str = "text") -> str:
    cols = SimReport.CSV_COLUMNS
    cells = [[_fmt(getattr(r, c)) for c in cols] for r in report.rows]
    head = (f"dgp={report.dgp} n={report.n} target={report.target} truth={report.truth:.6f} "
            f"replicates={report.replicates}\n")
    if fmt == "markdown":
        lines = ["| " + " | ".join(cols) + " |", "|" + "|".join("---" for _ in cols) + "|"]
        lines += ["| " + " | ".join(row) + " |" for row in cells]
        return head + "\n" + "\n".join(lines) + "\n"
    widths = [max(len(c), *(len(row[j]) for row in cells)) if cells else len(c) for j, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return head + "\n".join(line.rstrip() for line in lines) + "\n"


def cmd_report(args) -> str:
    text = format_report(SimReport.read_json(args.path), args.format)
    sys.stdout.write(text)
    return text


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FrontDoorError as exc:
        print(f"estimation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    return 0


if __name__ == "__main__":
    sys.exit(main())
