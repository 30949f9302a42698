"""Stochastic proximal gradient baseline for the convex row-norm model.

Minimizes the mean multinomial logistic loss plus lam * sum_j ||W_j||_2:
each iteration takes a minibatch gradient step on W and b with step size
n / (10 l), then applies the group soft-threshold to every row of W.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .data import Dataset
from .dc import ConfigurationError, ConvergenceTrace, NonFiniteObjectiveError, sample_blocks
from .mlr import ModelState, _log_softmax_losses, _logits_matrix, _softmax
from .prox import prox_rows

__all__ = ["SpgdConfig", "run_spgd", "objective_l21"]


@dataclass
class SpgdConfig:
    lam: float = 0.0
    batch_fraction: float = 0.1
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    time_limit_seconds: float = math.inf
    step_rule: str = "n_over_10l"   # or "constant" with step_size set
    step_size: Optional[float] = None

    def validate(self) -> None:
        if self.lam < 0:
            raise ConfigurationError(f"lam must be nonnegative, got {self.lam}")
        if not 0 < self.batch_fraction <= 1:
            raise ConfigurationError(
                f"batch_fraction must be in (0, 1], got {self.batch_fraction}")
        if self.step_rule not in ("n_over_10l", "constant"):
            raise ConfigurationError(f"unknown step rule {self.step_rule!r}")
        if self.step_rule == "constant" and not (self.step_size and self.step_size > 0):
            raise ConfigurationError("constant step rule needs a positive step_size")
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be >= 1")


def step_size(config: SpgdConfig, n: int, iteration: int) -> float:
    """Step at the 1-based global iteration counter."""
    if iteration < 1:
        raise ConfigurationError("iterations are 1-based")
    if config.step_rule == "constant":
        return float(config.step_size)
    return n / (10.0 * iteration)


def objective_l21(model: ModelState, dataset: Dataset, lam: float) -> float:
    """Mean negative log-likelihood plus lam * sum of row l2 norms."""
    Z = _logits_matrix(dataset.X, model.W, model.b)
    losses = _log_softmax_losses(Z, dataset.y - 1)
    return float(losses.mean()) + lam * float(np.linalg.norm(model.W, axis=1).sum())


def run_spgd(dataset: Dataset, config: SpgdConfig, model0: Optional[ModelState] = None,
             callback=None) -> Tuple[ModelState, ConvergenceTrace]:
    """Run the minibatch proximal gradient method.

    The trace records the regularized objective at epoch boundaries; the
    callback is invoked once per epoch and a truthy return stops the run.
    Zero-threshold rows come out as exact zeros.
    """
    config.validate()
    n = dataset.n
    if model0 is None:
        model0 = ModelState.zeros(dataset.d, dataset.Q)
    W = np.array(model0.W, dtype=float)
    b = np.array(model0.b, dtype=float)
    y0 = dataset.y - 1
    schedule = sample_blocks(n, config.batch_fraction, config.seed)
    t0 = time.perf_counter()
    trace = ConvergenceTrace()
    f_init = objective_l21(ModelState.from_wb(W, b, 2), dataset, config.lam)
    if not math.isfinite(f_init):
        raise NonFiniteObjectiveError(0)
    trace.append(0, 0, f_init, math.nan, math.nan, 0.0)
    l = 1
    reason = ""
    epoch = 0
    while not reason:
        epoch += 1
        order = schedule.epoch_order()
        for pos, k in enumerate(order):
            if time.perf_counter() - t0 >= config.time_limit_seconds:
                reason = "time_limit"
                break
            idx = schedule.blocks[k]
            Xb = dataset.X[idx]
            P = _softmax(_logits_matrix(Xb, W, b))
            P[np.arange(len(idx)), y0[idx]] -= 1.0
            alpha_l = step_size(config, n, l)
            scale = alpha_l / len(idx)
            U_bar = W - scale * np.asarray(Xb.T @ P)
            W_new = prox_rows(U_bar, alpha_l * config.lam, 1.0, 2)
            b_new = b - scale * P.sum(axis=0)
            if not (np.all(np.isfinite(W_new)) and np.all(np.isfinite(b_new))):
                raise NonFiniteObjectiveError(l, "iterate")
            step = math.hypot(float(np.linalg.norm(W_new - W)),
                              float(np.linalg.norm(b_new - b)))
            last_in_epoch = pos == len(order) - 1
            f_l = math.nan
            if last_in_epoch:
                f_l = objective_l21(ModelState.from_wb(W_new, b_new, 2), dataset,
                                    config.lam)
                if not math.isfinite(f_l):
                    raise NonFiniteObjectiveError(l)
            trace.append(l, epoch, f_l, math.nan, step,
                         time.perf_counter() - t0)
            W, b = W_new, b_new
            l += 1
        if reason:
            break
        state = ModelState.from_wb(W, b, 2)
        if callback is not None and callback(epoch, state, trace):
            reason = "early_stopping"
        elif epoch >= config.max_epochs:
            reason = "max_epochs"
    trace.stop_reason = reason
    return ModelState.from_wb(W, b, 2), trace
