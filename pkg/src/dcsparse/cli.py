"""Command line interface: gen / train / path / report subcommands."""

from __future__ import annotations

import argparse
import json
import math
import sys
import traceback
from pathlib import Path

from . import data as data_mod
from . import harness, mlr


def _parse_q(text: str):
    if text == "inf":
        return math.inf
    if text in ("1", "2"):
        return int(text)
    raise argparse.ArgumentTypeError("q must be 1, 2 or inf")


_PENALTY_ALIASES = {"exp": "exponential", "exponential": "exponential",
                    "capl1": "capped_l1", "capped_l1": "capped_l1"}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcsparse",
        description="Group-sparse multinomial logistic regression via "
                    "stochastic difference-of-convex solvers.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--kind", choices=("sim1", "sim2", "sim3"))
    gen.add_argument("--n", type=int, help="total sample count")
    gen.add_argument("--d", type=int, help="dimension (sim3 only)")
    gen.add_argument("--n-per-class", type=int, help="per-class count (sim3)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--spec", help="key=value generator spec file")
    gen.add_argument("--format", choices=("libsvm", "csv"), default="libsvm")
    gen.add_argument("--out", required=True)

    train = sub.add_parser("train", help="one training run")
    train.add_argument("--data", required=True)
    train.add_argument("--format", choices=("libsvm", "csv"), default="libsvm")
    train.add_argument("--label-column", default="label")
    train.add_argument("--algo", choices=harness.ALGORITHMS, default="sdca")
    train.add_argument("--q", type=_parse_q, default=2)
    train.add_argument("--penalty", choices=sorted(_PENALTY_ALIASES), default="exp")
    train.add_argument("--alpha", type=float, default=1.0)
    train.add_argument("--lambda", dest="lam", type=float, default=0.01)
    train.add_argument("--batch-frac", type=float, default=0.1)
    train.add_argument("--patience", type=int, default=5)
    train.add_argument("--eps-stop", type=float, default=1e-6)
    train.add_argument("--max-epochs", type=int, default=200)
    train.add_argument("--time-limit", type=float, default=7200.0)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--no-standardize", action="store_true")
    train.add_argument("--out", help="model file to write")
    train.add_argument("--trace-out", help="objective trace CSV to write")

    path = sub.add_parser("path", help="full protocol from a spec file")
    path.add_argument("--spec", required=True, help="experiment spec JSON")
    path.add_argument("--out", required=True, help="report directory")
    path.add_argument("--no-figures", action="store_true")

    report = sub.add_parser("report", help="re-render summaries from a manifest")
    report.add_argument("--run-dir", required=True)
    report.add_argument("--out", help="target directory (defaults to run dir)")
    report.add_argument("--replay", action="store_true",
                        help="re-run the experiment instead of reloading records")
    report.add_argument("--no-figures", action="store_true")
    return parser


def _cmd_gen(args) -> dict:
    if args.spec:
        spec = data_mod.parse_generator_spec(args.spec)
        kind = spec.pop("kind")
        dataset = data_mod.generate(kind, **spec)
    else:
        if not args.kind:
            raise ValueError("either --kind or --spec is required")
        dataset = data_mod.generate(args.kind, seed=args.seed, n=args.n,
                                    d=args.d, n_per_class=args.n_per_class)
    data_mod.write_sparse_text(dataset, args.out, args.format)
    return {"path": args.out, "n": dataset.n, "d": dataset.d, "Q": dataset.Q,
            "format": args.format}


def _cmd_train(args) -> dict:
    dataset = data_mod.load_sparse_text(args.data, args.format, args.label_column)
    tr, va, te = data_mod.split(dataset, data_mod.SplitSpec(seed=args.seed))
    standardized = not args.no_standardize
    if standardized:
        (tr, va, te), _ = data_mod.standardize(tr, va, te)
    penalty_kind = _PENALTY_ALIASES[args.penalty]
    model, trace = harness.run_single(
        args.algo, tr, va, q=args.q, penalty_kind=penalty_kind,
        alpha=args.alpha, lam=args.lam, batch_fraction=args.batch_frac,
        patience=args.patience, eps_stop=args.eps_stop,
        max_epochs=args.max_epochs, time_limit_seconds=args.time_limit,
        seed=args.seed)
    result = {
        "algorithm": args.algo,
        "q": "inf" if args.q == math.inf else args.q,
        "penalty": penalty_kind,
        "alpha": args.alpha,
        "lambda": args.lam,
        "standardized": standardized,
        "test_accuracy": harness.accuracy_metric(model, te),
        "val_accuracy": harness.accuracy_metric(model, va),
        "sparsity": harness.sparsity_metric(model),
        "epochs": trace.epochs_completed(),
        "wall_seconds": trace.wall_time[-1],
        "stop_reason": trace.stop_reason,
    }
    if args.out:
        penalty = mlr.PenaltyConfig(kind=penalty_kind, alpha=args.alpha,
                                    lam=args.lam, q=args.q)
        rho = (mlr.build_problem(tr, penalty).spec.rho
               if args.algo != "spgd" else 0.0)
        mlr.save_model(args.out, model, penalty, rho,
                       {"algorithm": args.algo,
                        "standardized": str(standardized).lower()})
        result["model"] = args.out
    if args.trace_out:
        import csv
        with open(args.trace_out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(harness.TRACE_COLUMNS)
            for row in trace.to_rows():
                writer.writerow([row[0], row[1], repr(row[2]), repr(row[3]),
                                 repr(row[4])])
        result["trace"] = args.trace_out
    return result


def _cmd_path(args) -> dict:
    spec = harness.ExperimentSpec.from_json(Path(args.spec).read_text())
    report = harness.run_path(spec)
    written = harness.emit_report(report, args.out, figures=not args.no_figures)
    return {"out": args.out, "records": len(report.records),
            "files": [str(p) for p in written]}


def _cmd_report(args) -> dict:
    if args.replay:
        report = harness.replay(args.run_dir)
    else:
        report = harness.load_report(args.run_dir)
    out = args.out or args.run_dir
    written = harness.emit_report(report, out, figures=not args.no_figures)
    return {"out": str(out), "files": [str(p) for p in written]}


_COMMANDS = {"gen": _cmd_gen, "train": _cmd_train, "path": _cmd_path,
             "report": _cmd_report}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        result = _COMMANDS[args.command](args)
    except Exception as exc:  # emit a machine-readable error record
        record = {"error": type(exc).__name__, "message": str(exc),
                  "command": args.command}
        if "--debug" in (argv or sys.argv):
            record["traceback"] = traceback.format_exc()
        print(json.dumps(record), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
