"""Experiment orchestration: trade-off paths, metrics and report emission.

A run walks a decreasing ladder of trade-off values lam with warm starts,
one solver run per (repetition, alpha, lam) cell, early stopping on
validation accuracy for the stochastic methods and the objective-difference
rule for the full-batch one.  Reports carry per-run records, mean/std
aggregates, objective traces and a manifest sufficient for exact replay.
"""

from __future__ import annotations

import csv as _csv
import json
import math
import os
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import baselines, mlr
from .data import Dataset, SplitSpec, generate, load_sparse_text, split, standardize
from .dc import (ConvergenceTrace, NonFiniteObjectiveError, SolverConfig,
                 run_dca, run_isdca, run_sdca)
from .mlr import ModelState, PenaltyConfig, build_problem

__all__ = [
    "ALGORITHMS",
    "lambda_path",
    "sparsity_metric",
    "selected_rows",
    "accuracy_metric",
    "predict",
    "EarlyStopping",
    "ExperimentSpec",
    "RunRecord",
    "RunReport",
    "run_single",
    "run_path",
    "emit_report",
    "load_report",
    "replay",
]

ALGORITHMS = ("dca", "sdca", "isdca", "spgd")
SPARSITY_THRESHOLD = 1e-8

RUNS_COLUMNS = ("repetition", "alpha", "lambda", "test_accuracy", "sparsity",
                "wall_seconds", "epochs", "stop_reason", "val_accuracy", "trace")
SUMMARY_COLUMNS = ("algorithm", "q", "penalty", "alpha", "lambda", "repetitions",
                   "accuracy_mean", "accuracy_std", "sparsity_mean", "sparsity_std",
                   "seconds_mean", "seconds_std")
TRACE_COLUMNS = ("iteration", "epoch", "objective", "surrogate_gap", "wall_time")


def lambda_path(head: float = 1e4, tail: float = 1e-3) -> Tuple[float, ...]:
    """Decade ladder {1, 3} * 10^k from head down to tail, e.g.
    1e4, 3e3, 1e3, ..., 3e-3, 1e-3; strictly decreasing."""
    if not head > tail > 0:
        raise ValueError(f"need head > tail > 0, got {head}, {tail}")
    k_hi = math.log10(head)
    k_lo = math.log10(tail)
    if not (math.isclose(k_hi, round(k_hi), abs_tol=1e-9)
            and math.isclose(k_lo, round(k_lo), abs_tol=1e-9)):
        raise ValueError("head and tail must be powers of ten")
    k_hi, k_lo = int(round(k_hi)), int(round(k_lo))
    values = []
    for k in range(k_hi, k_lo, -1):
        values.append(10.0 ** k)
        values.append(3.0 * 10.0 ** (k - 1))
    values.append(10.0 ** k_lo)
    return tuple(values)


# ---------------------------------------------------------------------------
# metrics


def predict(model: ModelState, X) -> np.ndarray:
    """Argmax class labels in {1..Q}; ties resolve to the smallest index."""
    Z = mlr._logits_matrix(X, model.W, model.b)
    return np.argmax(Z, axis=1) + 1


def accuracy_metric(model: ModelState, dataset: Dataset) -> float:
    """Percentage of correctly classified points."""
    return 100.0 * float(np.mean(predict(model, dataset.X) == dataset.y))


def sparsity_metric(model: ModelState) -> float:
    """Percentage of selected rows: a row counts when any entry exceeds
    1e-8 in magnitude."""
    selected = np.abs(model.W).max(axis=1) > SPARSITY_THRESHOLD
    return 100.0 * float(selected.sum()) / model.d


def selected_rows(model: ModelState) -> np.ndarray:
    return np.nonzero(np.abs(model.W).max(axis=1) > SPARSITY_THRESHOLD)[0]


class EarlyStopping:
    """Stop once the score has not strictly improved for ``patience``
    consecutive epochs."""

    def __init__(self, score_fn, patience: int = 5):
        self.score_fn = score_fn
        self.patience = patience
        self.best = -math.inf
        self.bad_epochs = 0

    def __call__(self, epoch, payload, trace) -> bool:
        score = self.score_fn(payload)
        if score > self.best:
            self.best = score
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


# ---------------------------------------------------------------------------
# experiment specification


@dataclass
class ExperimentSpec:
    data: dict = field(default_factory=dict)
    algorithm: str = "sdca"
    q: float = 2
    penalty: str = "exponential"
    alpha_grid: Tuple[float, ...] = (0.5, 1.0, 2.0, 5.0)
    lambdas: Tuple[float, ...] = ()
    batch_fraction: float = 0.1
    patience: int = 5
    eps_stop: float = 1e-6
    max_epochs: int = 200
    time_limit_seconds: float = 7200.0
    repetitions: int = 10
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if not self.lambdas:
            self.lambdas = lambda_path()
        self.lambdas = tuple(float(v) for v in self.lambdas)
        self.alpha_grid = tuple(float(v) for v in self.alpha_grid)

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.q not in (1, 2, math.inf):
            raise ValueError(f"q must be 1, 2 or inf, got {self.q}")
        if self.penalty not in mlr.PENALTY_KINDS:
            raise ValueError(f"penalty must be one of {mlr.PENALTY_KINDS}")
        if not all(a > b for a, b in zip(self.lambdas, self.lambdas[1:])):
            raise ValueError("lambda ladder must be strictly decreasing")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not 0 < self.batch_fraction <= 1:
            raise ValueError("batch_fraction must be in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["q"] = "inf" if self.q == math.inf else self.q
        d["alpha_grid"] = list(self.alpha_grid)
        d["lambdas"] = list(self.lambdas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        if d.get("q") == "inf":
            d["q"] = math.inf
        spec = cls(**d)
        spec.validate()
        return spec

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        return cls.from_dict(json.loads(text))


def load_dataset_from_source(data: dict) -> Dataset:
    if "generator" in data:
        return generate(**data["generator"])
    if "path" in data:
        return load_sparse_text(data["path"], data.get("format", "libsvm"),
                                data.get("label_column", "label"))
    raise ValueError("data source needs a 'generator' or 'path' entry")


# ---------------------------------------------------------------------------
# single run


def run_single(algorithm: str, train: Dataset, validation: Dataset, *,
               q=2, penalty_kind: str = "exponential", alpha: float = 1.0,
               lam: float = 0.0, batch_fraction: float = 0.1, patience: int = 5,
               eps_stop: float = 1e-6, max_epochs: int = 200,
               time_limit_seconds: float = math.inf, seed: int = 0,
               warm: Optional[ModelState] = None,
               ) -> Tuple[ModelState, ConvergenceTrace]:
    """One solver run.

    The stochastic methods stop early on validation accuracy (patience
    epochs without strict improvement); the full-batch method stops on the
    objective-difference rule.  ``warm`` seeds the initial point.
    """
    if algorithm == "spgd":
        cfg = baselines.SpgdConfig(lam=lam, batch_fraction=batch_fraction,
                                   max_epochs=max_epochs, patience=patience,
                                   seed=seed, time_limit_seconds=time_limit_seconds)
        stopper = EarlyStopping(lambda st: accuracy_metric(st, validation), patience)
        return baselines.run_spgd(train, cfg, warm, callback=stopper)
    if algorithm not in ("dca", "sdca", "isdca"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    penalty = PenaltyConfig(kind=penalty_kind, alpha=alpha, lam=lam, q=q)
    problem = build_problem(train, penalty)
    x0 = problem.pack_state(warm) if warm is not None else problem.initial_point()
    if algorithm == "dca":
        cfg = SolverConfig(max_epochs=max_epochs, batch_fraction=1.0,
                           eps_stop=eps_stop, rng_seed=seed,
                           time_limit_seconds=time_limit_seconds)
        x, trace = run_dca(problem, x0, cfg)
    else:
        cfg = SolverConfig(max_epochs=max_epochs, batch_fraction=batch_fraction,
                           eps_stop=None, rng_seed=seed, patience=patience,
                           time_limit_seconds=time_limit_seconds)
        stopper = EarlyStopping(
            lambda x_: accuracy_metric(problem.unpack_state(x_), validation),
            patience)
        runner = run_sdca if algorithm == "sdca" else run_isdca
        x, trace = runner(problem, x0, cfg, callback=stopper)
    return problem.unpack_state(x), trace


# ---------------------------------------------------------------------------
# report containers


@dataclass
class RunRecord:
    repetition: int
    alpha: Optional[float]
    lam: float
    test_accuracy: float
    sparsity: float
    wall_seconds: float
    epochs: int
    stop_reason: str
    val_accuracy: float
    trace_key: str


@dataclass
class RunReport:
    spec: ExperimentSpec
    records: List[RunRecord]
    traces: Dict[str, ConvergenceTrace]
    meta: dict = field(default_factory=dict)

    def alphas(self) -> Tuple[Optional[float], ...]:
        return self.spec.alpha_grid if self.spec.algorithm != "spgd" else (None,)

    def summary_rows(self) -> List[dict]:
        """One aggregated row per (alpha, lambda) with mean/std triples."""
        rows = []
        for alpha in self.alphas():
            for lam in self.spec.lambdas:
                cell = [r for r in self.records
                        if r.alpha == alpha and r.lam == lam]
                if not cell:
                    continue
                acc = np.array([r.test_accuracy for r in cell])
                spa = np.array([r.sparsity for r in cell])
                sec = np.array([r.wall_seconds for r in cell])
                rows.append({
                    "algorithm": self.spec.algorithm,
                    "q": "inf" if self.spec.q == math.inf else self.spec.q,
                    "penalty": self.spec.penalty,
                    "alpha": alpha,
                    "lambda": lam,
                    "repetitions": len(cell),
                    "accuracy_mean": float(acc.mean()),
                    "accuracy_std": float(acc.std()),
                    "sparsity_mean": float(spa.mean()),
                    "sparsity_std": float(spa.std()),
                    "seconds_mean": float(sec.mean()),
                    "seconds_std": float(sec.std()),
                })
        return rows

    def best_by_validation(self) -> List[RunRecord]:
        """Per (repetition, alpha): the record with the best validation
        accuracy; ties go to the larger lam (the sparser model)."""
        best = []
        for rep in sorted({r.repetition for r in self.records}):
            for alpha in self.alphas():
                cell = [r for r in self.records
                        if r.repetition == rep and r.alpha == alpha]
                if not cell:
                    continue
                # lambdas run large to small, strict > keeps the larger lam on ties
                winner = cell[0]
                for r in cell[1:]:
                    if r.val_accuracy > winner.val_accuracy:
                        winner = r
                best.append(winner)
        return best


def _cell_seed(base: int, repetition: int, alpha_index: int) -> int:
    return int(np.random.SeedSequence((base, repetition, alpha_index))
               .generate_state(1)[0])


def run_path(spec: ExperimentSpec, dataset: Optional[Dataset] = None) -> RunReport:
    """Full protocol: per repetition reseed the split, then for every alpha
    walk the lam ladder with warm starts and record the three criteria.

    A solver abort is recorded with its reason (metrics fall back to the
    last valid model) and the run matrix continues.
    """
    spec.validate()
    if dataset is None:
        dataset = load_dataset_from_source(spec.data)
    records: List[RunRecord] = []
    traces: Dict[str, ConvergenceTrace] = {}
    alphas = spec.alpha_grid if spec.algorithm != "spgd" else (None,)
    for rep in range(spec.repetitions):
        tr, va, te = split(dataset, SplitSpec(seed=spec.seed + rep))
        if spec.standardize:
            (tr, va, te), _ = standardize(tr, va, te)
        for a_idx, alpha in enumerate(alphas):
            warm: Optional[ModelState] = None
            seed = _cell_seed(spec.seed, rep, a_idx)
            for l_idx, lam in enumerate(spec.lambdas):
                key = f"rep{rep}_a{a_idx}_l{l_idx:02d}"
                started = time.perf_counter()
                try:
                    model, trace = run_single(
                        spec.algorithm, tr, va, q=spec.q,
                        penalty_kind=spec.penalty,
                        alpha=alpha if alpha is not None else 1.0, lam=lam,
                        batch_fraction=spec.batch_fraction,
                        patience=spec.patience, eps_stop=spec.eps_stop,
                        max_epochs=spec.max_epochs,
                        time_limit_seconds=spec.time_limit_seconds,
                        seed=seed, warm=warm)
                    stop_reason = trace.stop_reason
                    epochs = trace.epochs_completed()
                    wall = trace.wall_time[-1]
                except NonFiniteObjectiveError as exc:
                    model = warm if warm is not None else ModelState.zeros(
                        tr.d, tr.Q)
                    trace = ConvergenceTrace()
                    trace.stop_reason = stop_reason = f"aborted: {exc}"
                    epochs = 0
                    wall = time.perf_counter() - started
                records.append(RunRecord(
                    repetition=rep, alpha=alpha, lam=lam,
                    test_accuracy=accuracy_metric(model, te),
                    sparsity=sparsity_metric(model),
                    wall_seconds=float(wall), epochs=int(epochs),
                    stop_reason=stop_reason,
                    val_accuracy=accuracy_metric(model, va),
                    trace_key=key))
                traces[key] = trace
                if not stop_reason.startswith("aborted"):
                    warm = model
    meta = {
        "dataset": {k: v for k, v in dataset.provenance.items()},
        "n": dataset.n, "d": dataset.d, "Q": dataset.Q,
        "standardized": spec.standardize,
        "split": {"train_fraction": 0.8, "validation_fraction": 0.2,
                  "seeds": [spec.seed + r for r in range(spec.repetitions)]},
    }
    return RunReport(spec, records, traces, meta)


# ---------------------------------------------------------------------------
# emission / loading


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(report: RunReport, outdir, figures: bool = True) -> List[Path]:
    """Write runs.csv, per-run traces, manifest.json, summary.csv and the
    rendered figures under ``outdir``; raises before writing anything if the
    sink is unusable."""
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        probe = outdir / ".write_probe"
        probe.write_text("ok")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"report sink {outdir} is not writable: {exc}") from exc
    written: List[Path] = []

    runs_path = outdir / "runs.csv"
    with open(runs_path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(RUNS_COLUMNS)
        for r in report.records:
            writer.writerow([r.repetition, _fmt(r.alpha), _fmt(r.lam),
                             _fmt(r.test_accuracy), _fmt(r.sparsity),
                             _fmt(r.wall_seconds), r.epochs, r.stop_reason,
                             _fmt(r.val_accuracy), r.trace_key])
    written.append(runs_path)

    trace_dir = outdir / "traces"
    trace_dir.mkdir(exist_ok=True)
    for key, trace in report.traces.items():
        tpath = trace_dir / f"{key}.csv"
        with open(tpath, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for row in trace.to_rows():
                writer.writerow([row[0], row[1], _fmt(row[2]), _fmt(row[3]),
                                 _fmt(row[4])])
        written.append(tpath)

    manifest_path = outdir / "manifest.json"
    manifest = {"format": "dcsparse-report 1", "spec": report.spec.to_dict(),
                "meta": report.meta}
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    written.append(manifest_path)

    summary_path = outdir / "summary.csv"
    tmp = outdir / ".summary.csv.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in report.summary_rows():
            writer.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    os.replace(tmp, summary_path)
    written.append(summary_path)

    if figures:
        from .figures import render_figures
        written.extend(render_figures(report, outdir / "figures"))
    return written


def _parse_opt_float(text: str) -> Optional[float]:
    return None if text == "" else float(text)


def load_report(outdir) -> RunReport:
    """Rebuild a report from an emitted directory (manifest + runs + traces)."""
    outdir = Path(outdir)
    manifest = json.loads((outdir / "manifest.json").read_text())
    spec = ExperimentSpec.from_dict(manifest["spec"])
    records: List[RunRecord] = []
    with open(outdir / "runs.csv", newline="") as fh:
        reader = _csv.DictReader(fh)
        for rec in reader:
            records.append(RunRecord(
                repetition=int(rec["repetition"]),
                alpha=_parse_opt_float(rec["alpha"]),
                lam=float(rec["lambda"]),
                test_accuracy=float(rec["test_accuracy"]),
                sparsity=float(rec["sparsity"]),
                wall_seconds=float(rec["wall_seconds"]),
                epochs=int(rec["epochs"]),
                stop_reason=rec["stop_reason"],
                val_accuracy=float(rec["val_accuracy"]),
                trace_key=rec["trace"]))
    traces: Dict[str, ConvergenceTrace] = {}
    trace_dir = outdir / "traces"
    if trace_dir.is_dir():
        for tpath in sorted(trace_dir.glob("*.csv")):
            trace = ConvergenceTrace()
            with open(tpath, newline="") as fh:
                reader = _csv.DictReader(fh)
                for rec in reader:
                    objective = float(rec["objective"])
                    gap = float(rec["surrogate_gap"])
                    trace.append(int(rec["iteration"]), int(rec["epoch"]),
                                 objective, objective + gap, math.nan,
                                 float(rec["wall_time"]))
            traces[tpath.stem] = trace
    return RunReport(spec, records, traces, manifest.get("meta", {}))


def replay(outdir) -> RunReport:
    """Re-run the experiment recorded in a manifest from scratch."""
    manifest = json.loads((Path(outdir) / "manifest.json").read_text())
    spec = ExperimentSpec.from_dict(manifest["spec"])
    return run_path(spec)
