"""Render report figures to files next to the delimited output."""

from __future__ import annotations

from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_figures"]


def _alpha_label(alpha) -> str:
    return "spgd" if alpha is None else f"alpha={alpha:g}"


def _metric_figure(report, metric: str, ylabel: str, path: Path,
                   logy: bool = False) -> None:
    rows = report.summary_rows()
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for alpha in report.alphas():
        cell = [r for r in rows if r["alpha"] == alpha]
        if not cell:
            continue
        lams = np.array([r["lambda"] for r in cell])
        mean = np.array([r[f"{metric}_mean"] for r in cell])
        std = np.array([r[f"{metric}_std"] for r in cell])
        ax.errorbar(lams, mean, yerr=std, marker="o", markersize=3,
                    capsize=2, label=_alpha_label(alpha))
    ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.invert_xaxis()  # the path walks from large to small lambda
    ax.set_xlabel("lambda")
    ax.set_ylabel(ylabel)
    ax.set_title(f"{report.spec.algorithm} / q={report.spec.q} / "
                 f"{report.spec.penalty}")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _trace_figure(report, path: Path) -> None:
    """Objective against wall time for the best-validation cell of every
    alpha (first repetition)."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    drew = False
    best = [r for r in report.best_by_validation() if r.repetition == 0]
    for record in best:
        trace = report.traces.get(record.trace_key)
        if trace is None or not len(trace):
            continue
        obj = np.asarray(trace.objective)
        wt = np.asarray(trace.wall_time)
        mask = np.isfinite(obj)
        if mask.sum() < 2:
            continue
        ax.plot(wt[mask], obj[mask], marker=".",
                label=f"{_alpha_label(record.alpha)}, lam={record.lam:g}")
        drew = True
    ax.set_xlabel("wall time [s]")
    ax.set_ylabel("objective")
    ax.set_title("objective trace at the selected lambda")
    if drew:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_figures(report, outdir) -> List[Path]:
    """Write the accuracy / sparsity / timing and trace figures as PNGs."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for metric, ylabel, logy in (("accuracy", "test accuracy [%]", False),
                                 ("sparsity", "selected variables [%]", False),
                                 ("seconds", "training time [s]", True)):
        path = outdir / f"{metric}_vs_lambda.png"
        _metric_figure(report, metric, ylabel, path, logy=logy)
        paths.append(path)
    tpath = outdir / "objective_traces.png"
    _trace_figure(report, tpath)
    paths.append(tpath)
    return paths
