"""Engines for minimizing a large mean of difference-of-convex functions.

The target is

    F(x) = (1/n) sum_i F_i(x),    F_i = g_i - h_i,   g_i, h_i convex.

Each iteration replaces every concave part ``-h_i`` by the affine majorant
built from a (possibly stale) subgradient ``v_i`` of ``h_i`` and minimizes
the resulting convex surrogate.  The stochastic engine refreshes the
subgradients of a single randomly ordered block of samples per iteration
and keeps block-wise aggregates, so one iteration touches roughly a
``batch_fraction`` share of the data.  The inexact engine tolerates
eps-subgradients and eps-approximate surrogate minimizers driven by a
summable tolerance sequence.
"""

from __future__ import annotations

import abc
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "ConfigurationError",
    "NonFiniteObjectiveError",
    "EpsSchedule",
    "inverse_square_schedule",
    "harmonic_schedule",
    "zero_schedule",
    "DcProblem",
    "SolverConfig",
    "ConvergenceTrace",
    "BlockSchedule",
    "sample_blocks",
    "AggregatedSubgradient",
    "surrogate_value",
    "check_eps_subgradient",
    "run_dca",
    "run_sdca",
    "run_isdca",
]

logger = logging.getLogger("dcsparse")


class ConfigurationError(ValueError):
    """Invalid solver configuration."""


class NonFiniteObjectiveError(RuntimeError):
    """A non-finite value showed up while iterating; carries the iteration."""

    def __init__(self, iteration: int, what: str = "objective"):
        self.iteration = iteration
        super().__init__(f"non-finite {what} at iteration {iteration}")


# ---------------------------------------------------------------------------
# tolerance schedules


@dataclass(frozen=True)
class EpsSchedule:
    """Tolerance sequence ``l -> eps_l`` for the inexact engine.

    ``summable`` declares whether sum_l eps_l is finite; non-summable
    schedules break the convergence guarantee and are refused unless the
    caller sets ``SolverConfig.allow_nonsummable_eps``.
    """

    fn: Callable[[int], float]
    summable: bool = True
    description: str = ""

    def __call__(self, iteration: int) -> float:
        return float(self.fn(iteration))


def inverse_square_schedule(eps0: float) -> EpsSchedule:
    """eps_l = eps0 / (l+1)^2, summable by construction."""
    return EpsSchedule(lambda l: eps0 / (l + 1) ** 2, True, f"{eps0}/(l+1)^2")


def harmonic_schedule(eps0: float) -> EpsSchedule:
    """eps_l = eps0 / (l+1); diverging sum, only usable with an override."""
    return EpsSchedule(lambda l: eps0 / (l + 1), False, f"{eps0}/(l+1)")


def zero_schedule() -> EpsSchedule:
    return EpsSchedule(lambda l: 0.0, True, "0")


# ---------------------------------------------------------------------------
# problem interface


class DcProblem(abc.ABC):
    """A mean of DC components together with the oracles the engines use.

    Points and subgradients are flat float vectors; structured problems
    pack their variables.  Implementations must be safe for concurrent
    read-only evaluation at a fixed point.
    """

    n: int = 0
    strong_convexity_modulus: float = 0.0

    @abc.abstractmethod
    def objective(self, x: np.ndarray) -> float:
        """F(x) = (1/n) sum_i F_i(x)."""

    @abc.abstractmethod
    def component_objective(self, i: int, x: np.ndarray) -> float:
        """F_i(x)."""

    @abc.abstractmethod
    def g_objective(self, x: np.ndarray) -> float:
        """G(x) = (1/n) sum_i g_i(x), the convex part kept in the surrogate."""

    @abc.abstractmethod
    def component_h(self, i: int, x: np.ndarray) -> float:
        """h_i(x)."""

    @abc.abstractmethod
    def subgradient_h(self, i: int, x: np.ndarray) -> np.ndarray:
        """An exact element of the subdifferential of h_i at x."""

    def eps_subgradient_h(self, i: int, x: np.ndarray, eps: float) -> np.ndarray:
        """An element of the eps-subdifferential of h_i at x.

        The exact subgradient qualifies for every eps >= 0, which is the
        default; override to model genuinely approximate oracles.
        """
        return self.subgradient_h(i, x)

    @abc.abstractmethod
    def solve_surrogate(self, v: np.ndarray, eps: float) -> np.ndarray:
        """An eps-minimizer of the convex surrogate G(x) - <v, x>."""

    # block-sum hooks; the defaults accumulate per-sample calls in index
    # order, implementations override them with vectorized versions
    def subgradient_h_sum(self, idx, x: np.ndarray) -> np.ndarray:
        total = None
        for i in idx:
            v = self.subgradient_h(int(i), x)
            total = np.array(v, dtype=float) if total is None else total + v
        if total is None:
            raise ValueError("empty index block")
        return total

    def eps_subgradient_h_sum(self, idx, x: np.ndarray, eps: float) -> np.ndarray:
        if eps == 0.0:
            return self.subgradient_h_sum(idx, x)
        total = None
        for i in idx:
            v = self.eps_subgradient_h(int(i), x, eps)
            total = np.array(v, dtype=float) if total is None else total + v
        if total is None:
            raise ValueError("empty index block")
        return total

    def component_h_sum(self, idx, x: np.ndarray) -> float:
        return float(sum(self.component_h(int(i), x) for i in idx))


# ---------------------------------------------------------------------------
# block sampling


class BlockSchedule:
    """Fixed random partition of {0..n-1} plus per-epoch block visit orders."""

    def __init__(self, blocks: List[np.ndarray], rng: np.random.Generator):
        self.blocks = [np.asarray(b) for b in blocks]
        self._rng = rng

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def epoch_order(self) -> np.ndarray:
        """A fresh random visiting order over the blocks."""
        return self._rng.permutation(len(self.blocks))


def sample_blocks(n: int, fraction: float, seed: int) -> BlockSchedule:
    """Partition ``n`` sample indices into near-equal random blocks.

    The number of blocks is ceil(1/fraction) (sizes differ by at most one)
    and the partition plus the stream of per-epoch orders are deterministic
    under ``seed``.  A single block keeps the natural index order.
    """
    if not 0 < fraction <= 1:
        raise ConfigurationError(f"batch fraction must be in (0, 1], got {fraction}")
    if n < 1:
        raise ConfigurationError(f"need at least one sample, got n={n}")
    inv = 1.0 / fraction
    if math.isclose(inv, round(inv), rel_tol=1e-9):
        n_blocks = int(round(inv))
    else:
        n_blocks = int(math.ceil(inv))
    n_blocks = max(1, min(n, n_blocks))
    rng = np.random.Generator(np.random.Philox(seed))
    if n_blocks == 1:
        blocks = [np.arange(n)]
    else:
        blocks = np.array_split(rng.permutation(n), n_blocks)
    return BlockSchedule(blocks, rng)


# ---------------------------------------------------------------------------
# aggregated stale subgradients


class AggregatedSubgradient:
    """Block-partitioned storage of stale subgradient sums.

    ``contributions[k]`` is sum_{i in block k} v_i with every v_i evaluated
    at the block's last refresh point; ``aggregate`` is their mean over all
    n samples and is recomputed from scratch after every refresh.  A scalar
    per block tracks the affine offset of the block's majorant so the
    surrogate value can be reconstructed as

        T(x) = G(x) - <aggregate, x> + surrogate_constant.
    """

    def __init__(self, blocks: Sequence[np.ndarray], dim: int, n: int):
        self.blocks = [np.asarray(b) for b in blocks]
        self.n = n
        nb = len(self.blocks)
        self.contributions = np.zeros((nb, dim))
        self.last_touch = np.full(nb, -1, dtype=int)
        self._offsets = np.zeros(nb)   # sum_i [h_i(snap) - <snap, v_i>]
        self._eps_sums = np.zeros(nb)  # block size * eps at last refresh
        self._aggregate = np.zeros(dim)

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def aggregate(self) -> np.ndarray:
        return self._aggregate

    @property
    def surrogate_constant(self) -> float:
        return float((-self._offsets.sum() + 2.0 * self._eps_sums.sum()) / self.n)

    def set_block(self, k: int, v_sum: np.ndarray, h_sum: float,
                  x: np.ndarray, eps: float, iteration: int) -> None:
        self.contributions[k] = v_sum
        self._offsets[k] = h_sum - float(np.dot(x, v_sum))
        self._eps_sums[k] = self.blocks[k].size * eps
        self.last_touch[k] = iteration
        self._aggregate = self.contributions.sum(axis=0) / self.n

    def refresh(self, k: int, problem: DcProblem, x: np.ndarray,
                eps: float = 0.0, iteration: int = 0) -> None:
        """Recompute block ``k`` at the point ``x`` and re-aggregate."""
        idx = self.blocks[k]
        if eps == 0.0:
            v_sum = problem.subgradient_h_sum(idx, x)
        else:
            v_sum = problem.eps_subgradient_h_sum(idx, x, eps)
        self.set_block(k, v_sum, problem.component_h_sum(idx, x), x, eps, iteration)


def surrogate_value(problem: DcProblem, aggregate: np.ndarray,
                    constant: float, x: np.ndarray) -> float:
    """Value of the convex surrogate assembled from an aggregate state."""
    return problem.g_objective(x) - float(np.dot(aggregate, x)) + constant


# ---------------------------------------------------------------------------
# configuration and trace


@dataclass
class SolverConfig:
    max_epochs: int = 100
    batch_fraction: float = 0.1
    patience: int = 5  # consumed by early-stopping callbacks, kept here for convenience
    eps_stop: Optional[float] = 1e-6
    relative_stop: bool = False
    eps_schedule: Optional[EpsSchedule] = None
    allow_nonsummable_eps: bool = False
    rng_seed: int = 0
    time_limit_seconds: float = math.inf
    keep_iterates: bool = False
    diagnostic: bool = False
    certificate_probes: int = 10

    def validate(self) -> None:
        if not 0 < self.batch_fraction <= 1:
            raise ConfigurationError(
                f"batch_fraction must be in (0, 1], got {self.batch_fraction}")
        if self.max_epochs < 1:
            raise ConfigurationError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.eps_stop is not None and self.eps_stop < 0:
            raise ConfigurationError(f"eps_stop must be >= 0, got {self.eps_stop}")
        if self.time_limit_seconds <= 0:
            raise ConfigurationError("time_limit_seconds must be positive")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {self.patience}")


@dataclass
class ConvergenceTrace:
    """Per-iteration history of a solver run.

    ``objective`` holds the exact F(x^l), evaluated at epoch boundaries
    (every iteration in diagnostic mode) and NaN elsewhere; ``surrogate``
    holds the surrogate value at the incoming iterate.  ``stop_reason`` is
    always set when a run ends normally.
    """

    iteration: List[int] = field(default_factory=list)
    epoch: List[int] = field(default_factory=list)
    objective: List[float] = field(default_factory=list)
    surrogate: List[float] = field(default_factory=list)
    step_norm: List[float] = field(default_factory=list)
    wall_time: List[float] = field(default_factory=list)
    eps: List[float] = field(default_factory=list)
    stop_reason: str = ""
    warnings: List[str] = field(default_factory=list)
    certificate_checks: List[bool] = field(default_factory=list)
    iterates: List[np.ndarray] = field(default_factory=list)
    surrogate_models: List[Tuple[np.ndarray, float]] = field(default_factory=list)

    def append(self, iteration, epoch, objective, surrogate, step_norm,
               wall_time, eps=math.nan) -> None:
        self.iteration.append(int(iteration))
        self.epoch.append(int(epoch))
        self.objective.append(float(objective))
        self.surrogate.append(float(surrogate))
        self.step_norm.append(float(step_norm))
        self.wall_time.append(float(wall_time))
        self.eps.append(float(eps))

    def __len__(self) -> int:
        return len(self.iteration)

    def boundary_indices(self) -> np.ndarray:
        """Record positions where the exact objective was evaluated."""
        return np.nonzero(np.isfinite(np.asarray(self.objective)))[0]

    def surrogate_gaps(self) -> np.ndarray:
        """surrogate - objective at records where both are available."""
        obj = np.asarray(self.objective)
        sur = np.asarray(self.surrogate)
        mask = np.isfinite(obj) & np.isfinite(sur)
        return sur[mask] - obj[mask]

    def epochs_completed(self) -> int:
        return int(self.epoch[-1]) if self.epoch else 0

    def to_rows(self):
        """(iteration, epoch, objective, surrogate gap, wall time) tuples."""
        rows = []
        for i in range(len(self.iteration)):
            gap = self.surrogate[i] - self.objective[i]
            rows.append((self.iteration[i], self.epoch[i], self.objective[i],
                         gap, self.wall_time[i]))
        return rows


# ---------------------------------------------------------------------------
# eps-subgradient certificate


def check_eps_subgradient(f, x, v, eps, rho, probes) -> bool:
    """Certify that ``v`` acts as an eps-subgradient of the rho-convex ``f``.

    Returns True iff  2*eps + f(y) >= f(x) + <v, y-x> + (rho/4)||y-x||^2
    holds for every probe ``y`` within 1e-9 slack.  Probes where ``f`` is
    non-finite are skipped and reported through the module logger.
    """
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    if rho < 0:
        raise ValueError(f"rho must be nonnegative, got {rho}")
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    fx = float(f(x))
    if not math.isfinite(fx):
        raise ValueError("f is non-finite at the base point")
    skipped = 0
    for y in probes:
        y = np.asarray(y, dtype=float)
        fy = float(f(y))
        if not math.isfinite(fy):
            skipped += 1
            continue
        d = y - x
        rhs = fx + float(np.dot(v, d)) + 0.25 * rho * float(np.dot(d, d))
        if 2.0 * eps + fy < rhs - 1e-9:
            return False
    if skipped:
        logger.warning("check_eps_subgradient skipped %d non-finite probes", skipped)
    return True


# ---------------------------------------------------------------------------
# full-batch scheme


def run_dca(problem: DcProblem, x0, config: SolverConfig,
            callback=None) -> Tuple[np.ndarray, ConvergenceTrace]:
    """Full-batch scheme: every linearization is refreshed each iteration.

    One iteration equals one epoch; stops on the objective-difference rule,
    the callback, the epoch cap or the time limit.
    """
    config.validate()
    if problem.n < 1:
        raise ConfigurationError("problem has no components")
    x = np.array(x0, dtype=float).copy()
    n = problem.n
    all_idx = np.arange(n)
    t0 = time.perf_counter()
    f_prev = problem.objective(x)
    if not math.isfinite(f_prev):
        raise NonFiniteObjectiveError(0)
    trace = ConvergenceTrace()
    trace.append(0, 0, f_prev, math.nan, math.nan, 0.0)
    if config.keep_iterates:
        trace.iterates.append(x.copy())
    reason = ""
    it = 0
    while not reason:
        now = time.perf_counter() - t0
        if now >= config.time_limit_seconds:
            reason = "time_limit"
            break
        v_sum = problem.subgradient_h_sum(all_idx, x)
        v = v_sum / n
        constant = -(problem.component_h_sum(all_idx, x) - float(np.dot(x, v_sum))) / n
        x_new = problem.solve_surrogate(v, 0.0)
        it += 1
        if not np.all(np.isfinite(x_new)):
            raise NonFiniteObjectiveError(it, "iterate")
        surr = surrogate_value(problem, v, constant, x_new)
        f_new = problem.objective(x_new)
        if not math.isfinite(f_new):
            raise NonFiniteObjectiveError(it)
        step = float(np.linalg.norm(x_new - x))
        trace.append(it, it, f_new, surr, step, time.perf_counter() - t0)
        if config.keep_iterates:
            trace.iterates.append(x_new.copy())
        if config.diagnostic:
            trace.surrogate_models.append((v.copy(), constant))
        x = x_new
        if _objective_converged(f_new, f_prev, config):
            reason = "objective_converged"
        elif callback is not None and callback(it, x, trace):
            reason = "early_stopping"
        elif it >= config.max_epochs:
            reason = "max_epochs"
        f_prev = f_new
    trace.stop_reason = reason
    return x, trace


def _objective_converged(f_new: float, f_prev: float, config: SolverConfig) -> bool:
    if config.eps_stop is None:
        return False
    tol = config.eps_stop
    if config.relative_stop:
        tol = tol * (1.0 + abs(f_prev))
    return abs(f_new - f_prev) <= tol


# ---------------------------------------------------------------------------
# stochastic engines


def run_sdca(problem: DcProblem, x0, config: SolverConfig,
             callback=None) -> Tuple[np.ndarray, ConvergenceTrace]:
    """Stochastic engine with exact subgradients and exact surrogate solves."""
    return _stochastic_run(problem, x0, config, None, callback)


def run_isdca(problem: DcProblem, x0, config: SolverConfig,
              callback=None) -> Tuple[np.ndarray, ConvergenceTrace]:
    """Inexact stochastic engine driven by ``config.eps_schedule``.

    Defaults to eps_l = eps0/(l+1)^2 with eps0 = 1e-2 * (1 + |F(x^0)|);
    with an all-zero schedule the run coincides with :func:`run_sdca`.
    """
    return _stochastic_run(problem, x0, config, config.eps_schedule or "default",
                           callback)


def _resolve_schedule(schedule, f0: float, config: SolverConfig,
                      trace: ConvergenceTrace):
    if schedule is None:
        return None
    if schedule == "default":
        return inverse_square_schedule(1e-2 * (1.0 + abs(f0)))
    if not schedule.summable:
        if not config.allow_nonsummable_eps:
            raise ConfigurationError(
                "non-summable tolerance schedule; set allow_nonsummable_eps to force")
        msg = ("running with a non-summable tolerance schedule; "
               "convergence is no longer guaranteed")
        logger.warning(msg)
        trace.warnings.append(msg)
    return schedule


def _draw_eps(schedule, iteration: int) -> float:
    if schedule is None:
        return 0.0
    eps = schedule(iteration)
    if eps < 0:
        raise ConfigurationError(f"negative tolerance {eps} at iteration {iteration}")
    return eps


def _stochastic_run(problem, x0, config, schedule, callback):
    config.validate()
    n = problem.n
    if n < 1:
        raise ConfigurationError("problem has no components")
    x = np.array(x0, dtype=float).copy()
    t0 = time.perf_counter()
    f0 = problem.objective(x)
    if not math.isfinite(f0):
        raise NonFiniteObjectiveError(0)
    trace = ConvergenceTrace()
    trace.append(0, 0, f0, math.nan, math.nan, 0.0)
    if config.keep_iterates:
        trace.iterates.append(x.copy())
    schedule = _resolve_schedule(schedule, f0, config, trace)

    blocks = sample_blocks(n, config.batch_fraction, config.rng_seed)
    nb = blocks.num_blocks
    agg = AggregatedSubgradient(blocks.blocks, dim=x.size, n=n)
    diag_rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence((config.rng_seed, 0xD1A6))))

    eps_l = _draw_eps(schedule, 0)
    for k in range(nb):
        _refresh_block(agg, k, problem, x, eps_l, 0, config, diag_rng, trace)

    l = 0                 # index of the iteration whose refresh is in place
    completed = 0         # epochs completed
    f_prev = f0
    order = iter(())
    reason = ""
    while not reason:
        x_new = problem.solve_surrogate(agg.aggregate, eps_l)
        m = l + 1         # index of the incoming iterate
        if not np.all(np.isfinite(x_new)):
            raise NonFiniteObjectiveError(m, "iterate")
        surr = surrogate_value(problem, agg.aggregate, agg.surrogate_constant, x_new)
        if not math.isfinite(surr):
            raise NonFiniteObjectiveError(m, "surrogate value")
        step = float(np.linalg.norm(x_new - x))
        boundary = m == 1 or (m - 1) % nb == 0
        epoch_label = 1 + math.ceil((m - 1) / nb)
        f_m = math.nan
        if boundary or config.diagnostic:
            f_m = problem.objective(x_new)
            if not math.isfinite(f_m):
                raise NonFiniteObjectiveError(m)
        now = time.perf_counter() - t0
        trace.append(m, epoch_label, f_m, surr, step, now, eps_l)
        if config.keep_iterates:
            trace.iterates.append(x_new.copy())
        if config.diagnostic:
            trace.surrogate_models.append((agg.aggregate.copy(),
                                           agg.surrogate_constant))
        x = x_new
        if boundary:
            completed += 1
            if _objective_converged(f_m, f_prev, config):
                reason = "objective_converged"
            elif callback is not None and callback(completed, x, trace):
                reason = "early_stopping"
            elif completed >= config.max_epochs:
                reason = "max_epochs"
            f_prev = f_m
        if not reason and time.perf_counter() - t0 >= config.time_limit_seconds:
            reason = "time_limit"
        if reason:
            break
        l += 1
        eps_l = _draw_eps(schedule, l)
        try:
            k = next(order)
        except StopIteration:
            order = iter(blocks.epoch_order())
            k = next(order)
        _refresh_block(agg, k, problem, x, eps_l, l, config, diag_rng, trace)
    trace.stop_reason = reason
    return x, trace


def _refresh_block(agg, k, problem, x, eps, iteration, config, diag_rng, trace):
    """Refresh one block; in diagnostic mode use the per-sample path and
    certify one of the consumed (v, eps) pairs against random probes."""
    idx = agg.blocks[k]
    if not config.diagnostic:
        agg.refresh(k, problem, x, eps, iteration)
        return
    keep = int(diag_rng.choice(idx))
    kept_v = None
    total = None
    for i in idx:
        i = int(i)
        if eps > 0:
            v = problem.eps_subgradient_h(i, x, eps)
        else:
            v = problem.subgradient_h(i, x)
        total = np.array(v, dtype=float) if total is None else total + v
        if i == keep:
            kept_v = np.array(v, dtype=float)
    agg.set_block(k, total, problem.component_h_sum(idx, x), x, eps, iteration)
    scale = 1.0 + float(np.linalg.norm(x))
    probes = [
        x + scale * 10.0 ** diag_rng.uniform(-2.0, 0.5)
        * diag_rng.standard_normal(x.size) / math.sqrt(x.size)
        for _ in range(config.certificate_probes)
    ]
    ok = check_eps_subgradient(lambda y: problem.component_h(keep, y), x, kept_v,
                               eps, problem.strong_convexity_modulus, probes)
    trace.certificate_checks.append(ok)
