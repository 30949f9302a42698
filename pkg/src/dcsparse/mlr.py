"""Group-sparse multinomial logistic regression as a DC problem.

The model is a weight matrix W (d x Q) plus bias b (Q); feature selection
works on rows of W through a concave penalty eta_alpha applied to the group
norms ||W_j||_q, a smooth surrogate of counting nonzero rows.  Lifting the
group norms into auxiliary variables t_j subject to ||W_j||_q <= t_j makes
every per-sample term a difference of convex functions

    g_i(W, b, t) = (rho/2) ||(W, b)||^2 + indicator(||W_j||_q <= t_j for all j)
    h_i(W, b, t) = (rho/2) ||(W, b)||^2 - loss_i(W, b) - lam * sum_j eta(t_j)

with rho above the Lipschitz constant of the loss gradient, so the convex
surrogate minimizer is closed form: a row-wise scaled-norm prox for W, a
rescaled aggregate for b, and t_j = ||W_j||_q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .data import Dataset, is_sparse, row_sq_norms
from .dc import DcProblem
from .prox import prox_rows

__all__ = [
    "NonFiniteLogitError",
    "ModelState",
    "PenaltyConfig",
    "MlrDcSpec",
    "group_norms",
    "penalty_value",
    "penalty_slopes",
    "softmax_probabilities",
    "nll_loss",
    "component_subgradient",
    "solve_surrogate",
    "estimate_lipschitz",
    "build_problem",
    "MlrProblem",
    "objective_value",
    "save_model",
    "load_model",
]

PENALTY_KINDS = ("exponential", "capped_l1")
MODEL_MAGIC = "dcsparse-model 1"


class NonFiniteLogitError(ValueError):
    """A logit overflowed; carries the first offending class index."""

    def __init__(self, class_index: int):
        self.class_index = int(class_index)
        super().__init__(f"non-finite logit for class {self.class_index + 1}")


def group_norms(W: np.ndarray, q) -> np.ndarray:
    """Row-wise l_q norms of W for q in {1, 2, inf}."""
    if q == 1:
        return np.abs(W).sum(axis=1)
    if q == 2:
        return np.linalg.norm(W, axis=1)
    if q == math.inf:
        return np.abs(W).max(axis=1)
    raise ValueError(f"norm selector must be 1, 2 or inf, got {q}")


@dataclass
class ModelState:
    """Weights W (d x Q), biases b (Q) and group-norm auxiliaries t (d)."""

    W: np.ndarray
    b: np.ndarray
    t: np.ndarray

    @classmethod
    def zeros(cls, d: int, Q: int) -> "ModelState":
        return cls(np.zeros((d, Q)), np.zeros(Q), np.zeros(d))

    @classmethod
    def from_wb(cls, W, b, q) -> "ModelState":
        W = np.asarray(W, dtype=float)
        return cls(W, np.asarray(b, dtype=float), group_norms(W, q))

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def Q(self) -> int:
        return self.W.shape[1]

    def validate(self, q=None) -> None:
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.t))):
            raise ValueError("model state holds non-finite entries")
        if q is not None and not np.array_equal(self.t, group_norms(self.W, q)):
            raise ValueError("auxiliaries t do not equal the row norms of W")

    def copy(self) -> "ModelState":
        return ModelState(self.W.copy(), self.b.copy(), self.t.copy())


@dataclass(frozen=True)
class PenaltyConfig:
    """Concave row-selection penalty: kind, tightness alpha, trade-off lam,
    group norm selector q."""

    kind: str = "exponential"
    alpha: float = 1.0
    lam: float = 0.0
    q: float = 2

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"penalty kind must be one of {PENALTY_KINDS}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if self.q not in (1, 2, math.inf):
            raise ValueError(f"q must be 1, 2 or inf, got {self.q}")


def penalty_value(t, cfg: PenaltyConfig):
    """eta_alpha(t): 1 - exp(-alpha t) or min(1, alpha t); 0 at 0,
    nondecreasing, saturating at 1."""
    t = np.asarray(t, dtype=float)
    if cfg.kind == "exponential":
        out = 1.0 - np.exp(-cfg.alpha * t)
    else:
        out = np.minimum(1.0, cfg.alpha * t)
    return out if out.ndim else float(out)


def penalty_slopes(t, cfg: PenaltyConfig) -> np.ndarray:
    """The t-components of the h-subgradient: -lam * (a supergradient of
    eta_alpha at t); nonpositive everywhere.

    The capped penalty takes the steep branch at the kink alpha*t = 1.
    """
    t = np.asarray(t, dtype=float)
    if cfg.kind == "exponential":
        return -cfg.lam * cfg.alpha * np.exp(-cfg.alpha * t)
    return np.where(cfg.alpha * t <= 1.0, -cfg.lam * cfg.alpha, 0.0)


def penalty_total(t, cfg: PenaltyConfig) -> float:
    return cfg.lam * float(np.sum(penalty_value(t, cfg)))


# ---------------------------------------------------------------------------
# loss pieces


def _logits_matrix(X, W, b) -> np.ndarray:
    Z = X @ W
    if is_sparse(X):
        Z = np.asarray(Z)
    return Z + b


def _softmax(Z: np.ndarray) -> np.ndarray:
    P = np.exp(Z - Z.max(axis=1, keepdims=True))
    P /= P.sum(axis=1, keepdims=True)
    return P


def _log_softmax_losses(Z: np.ndarray, y0: np.ndarray) -> np.ndarray:
    Zs = Z - Z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(Zs).sum(axis=1))
    return lse - Zs[np.arange(Z.shape[0]), y0]


def _single_logits(model: ModelState, x) -> np.ndarray:
    if is_sparse(x):
        z = np.asarray(x @ model.W).ravel() + model.b
    else:
        x = np.asarray(x, dtype=float).ravel()
        if x.size > model.d:
            raise ValueError(f"input has {x.size} features, model has {model.d}")
        z = x @ model.W[:x.size] + model.b
    if not np.all(np.isfinite(z)):
        raise NonFiniteLogitError(int(np.nonzero(~np.isfinite(z))[0][0]))
    return z


def softmax_probabilities(model: ModelState, x) -> np.ndarray:
    """Class probabilities exp(logit_k) / sum_h exp(logit_h), computed with
    max-logit subtraction; strictly positive, summing to one."""
    z = _single_logits(model, x)
    p = np.exp(z - z.max())
    return p / p.sum()


def nll_loss(model: ModelState, x, y: int) -> float:
    """Negative log probability of the true class y in {1..Q}."""
    if not 1 <= y <= model.Q:
        raise ValueError(f"label {y} outside 1..{model.Q}")
    z = _single_logits(model, x)
    zs = z - z.max()
    return float(np.log(np.exp(zs).sum()) - zs[y - 1])


# ---------------------------------------------------------------------------
# DC specification


@dataclass(frozen=True)
class MlrDcSpec:
    """The DC decomposition data: dataset, penalty and curvature rho chosen
    above the loss-gradient Lipschitz estimate."""

    dataset: Dataset
    penalty: PenaltyConfig
    rho: float
    L_estimate: float

    def __post_init__(self):
        if not self.L_estimate > 0:
            raise ValueError(f"L_estimate must be positive, got {self.L_estimate}")
        if not self.rho > self.L_estimate:
            raise ValueError(
                f"rho={self.rho} must exceed L_estimate={self.L_estimate}")


def estimate_lipschitz(dataset: Dataset) -> float:
    """0.5 * max_i (||x_i||^2 + 1): the class-probability curvature is at
    most 1/2 and the bias acts as a constant appended feature."""
    return 0.5 * (float(row_sq_norms(dataset.X).max()) + 1.0)


def component_subgradient(i: int, model: ModelState,
                          spec: MlrDcSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact subgradient (U_i, v_i, z_i) of h_i at the current state.

    U_i[:, k] = rho W[:, k] - (p_k(x_i) - [k == y_i]) x_i, the bias part
    drops x_i, and z_i follows the penalty kind.
    """
    x = spec.dataset.X[i]
    p = softmax_probabilities(model, x)
    r = p.copy()
    r[spec.dataset.y[i] - 1] -= 1.0
    xd = x.toarray().ravel() if is_sparse(x) else np.asarray(x, dtype=float)
    U = spec.rho * model.W - np.outer(xd, r)
    v = spec.rho * model.b - r
    z = penalty_slopes(model.t, spec.penalty)
    return U, v, z


def solve_surrogate(aggregate: Tuple[np.ndarray, np.ndarray, np.ndarray],
                    spec: MlrDcSpec) -> ModelState:
    """Closed-form global minimizer of the convex surrogate built from the
    aggregated subgradient (U, v, z): row-wise prox for W, b = v / rho,
    t_j = ||W_j||_q."""
    U, v, z = aggregate
    z = np.asarray(z, dtype=float)
    if np.any(z > 1e-12):
        raise ValueError("aggregated z must be componentwise nonpositive")
    c = np.maximum(-z, 0.0)
    W = prox_rows(np.asarray(U, dtype=float), c, spec.rho, spec.penalty.q)
    b = np.asarray(v, dtype=float) / spec.rho
    return ModelState(W, b, group_norms(W, spec.penalty.q))


_closed_form_solve = solve_surrogate  # method below shadows the public name


def objective_value(model: ModelState, dataset: Dataset,
                    penalty: PenaltyConfig) -> float:
    """Mean negative log-likelihood plus the row-selection penalty evaluated
    at the row norms of W (the unlifted objective)."""
    Z = _logits_matrix(dataset.X, model.W, model.b)
    losses = _log_softmax_losses(Z, dataset.y - 1)
    return float(losses.mean()) + penalty_total(group_norms(model.W, penalty.q),
                                                penalty)


# ---------------------------------------------------------------------------
# packaged DC problem


class MlrProblem(DcProblem):
    """Flat-vector adapter exposing the regression to the DC engines.

    A point packs (W, b, t) as [W row-major, b, t].  All per-sample oracles
    are closed form, so the eps-tolerant hooks return the exact values
    (every exact element is a valid eps-element).
    """

    def __init__(self, spec: MlrDcSpec):
        self.spec = spec
        ds = spec.dataset
        self.n = ds.n
        self.d = ds.d
        self.Q = ds.Q
        self.dim = self.d * self.Q + self.Q + self.d
        self._y0 = ds.y - 1
        # curvature is limited to (W, b); the t block has none
        self.strong_convexity_modulus = 0.0

    # -- packing -----------------------------------------------------------
    def pack(self, W, b, t) -> np.ndarray:
        return np.concatenate([np.asarray(W, dtype=float).ravel(),
                               np.asarray(b, dtype=float),
                               np.asarray(t, dtype=float)])

    def unpack(self, x: np.ndarray):
        """Views (W, b, t) into the flat vector; treat them as read-only."""
        dQ = self.d * self.Q
        W = x[:dQ].reshape(self.d, self.Q)
        b = x[dQ:dQ + self.Q]
        t = x[dQ + self.Q:]
        return W, b, t

    def pack_state(self, model: ModelState) -> np.ndarray:
        return self.pack(model.W, model.b, model.t)

    def unpack_state(self, x: np.ndarray) -> ModelState:
        W, b, t = self.unpack(x)
        return ModelState(W.copy(), b.copy(), t.copy())

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.dim)

    # -- objective pieces ----------------------------------------------------
    def _feasible(self, W, t) -> bool:
        norms = group_norms(W, self.spec.penalty.q)
        return bool(np.all(norms <= t + 1e-9 * (1.0 + np.abs(t))))

    def objective(self, x: np.ndarray) -> float:
        W, b, t = self.unpack(x)
        if not self._feasible(W, t):
            return math.inf
        Z = _logits_matrix(self.spec.dataset.X, W, b)
        losses = _log_softmax_losses(Z, self._y0)
        return float(losses.mean()) + penalty_total(t, self.spec.penalty)

    def component_objective(self, i: int, x: np.ndarray) -> float:
        W, b, t = self.unpack(x)
        if not self._feasible(W, t):
            return math.inf
        model = ModelState(W, b, t)
        loss = nll_loss(model, self.spec.dataset.X[i], int(self.spec.dataset.y[i]))
        return loss + penalty_total(t, self.spec.penalty)

    def g_objective(self, x: np.ndarray) -> float:
        W, b, t = self.unpack(x)
        if not self._feasible(W, t):
            return math.inf
        return 0.5 * self.spec.rho * (float(np.dot(x[:W.size], x[:W.size]))
                                      + float(np.dot(b, b)))

    def component_h(self, i: int, x: np.ndarray) -> float:
        W, b, t = self.unpack(x)
        model = ModelState(W, b, t)
        loss = nll_loss(model, self.spec.dataset.X[i], int(self.spec.dataset.y[i]))
        quad = 0.5 * self.spec.rho * (float(np.dot(x[:W.size], x[:W.size]))
                                      + float(np.dot(b, b)))
        return quad - loss - penalty_total(t, self.spec.penalty)

    def component_h_sum(self, idx, x: np.ndarray) -> float:
        W, b, t = self.unpack(x)
        Z = _logits_matrix(self.spec.dataset.X[idx], W, b)
        losses = _log_softmax_losses(Z, self._y0[idx])
        m = len(idx)
        quad = 0.5 * self.spec.rho * (float(np.dot(x[:W.size], x[:W.size]))
                                      + float(np.dot(b, b)))
        return m * (quad - penalty_total(t, self.spec.penalty)) - float(losses.sum())

    # -- subgradients --------------------------------------------------------
    def subgradient_h(self, i: int, x: np.ndarray) -> np.ndarray:
        W, b, t = self.unpack(x)
        U, v, z = component_subgradient(i, ModelState(W, b, t), self.spec)
        return self.pack(U, v, z)

    def subgradient_h_sum(self, idx, x: np.ndarray) -> np.ndarray:
        W, b, t = self.unpack(x)
        Xb = self.spec.dataset.X[idx]
        Z = _logits_matrix(Xb, W, b)
        P = _softmax(Z)
        m = len(idx)
        P[np.arange(m), self._y0[idx]] -= 1.0
        rho = self.spec.rho
        U = m * rho * W - np.asarray(Xb.T @ P)
        v = m * rho * b - P.sum(axis=0)
        z = m * penalty_slopes(t, self.spec.penalty)
        return self.pack(U, v, z)

    def eps_subgradient_h_sum(self, idx, x: np.ndarray, eps: float) -> np.ndarray:
        return self.subgradient_h_sum(idx, x)

    # -- surrogate -----------------------------------------------------------
    def solve_surrogate(self, v: np.ndarray, eps: float) -> np.ndarray:
        U, vb, z = self.unpack(np.asarray(v, dtype=float))
        model = _closed_form_solve((U, vb, z), self.spec)
        return self.pack_state(model)


def build_problem(dataset: Dataset, penalty: PenaltyConfig,
                  rho_margin: float = 1e-3) -> MlrProblem:
    """Assemble the DC problem with rho = (1 + rho_margin) * L_estimate."""
    bad = np.nonzero((dataset.y < 1) | (dataset.y > dataset.Q))[0]
    if bad.size:
        raise ValueError(f"label {dataset.y[bad[0]]} at row {int(bad[0])} "
                         f"outside 1..{dataset.Q}")
    L = estimate_lipschitz(dataset)
    spec = MlrDcSpec(dataset, penalty, (1.0 + rho_margin) * L, L)
    return MlrProblem(spec)


# ---------------------------------------------------------------------------
# model serialization


def _q_str(q) -> str:
    return "inf" if q == math.inf else str(int(q))


def _q_parse(text: str):
    return math.inf if text == "inf" else int(text)


def save_model(path, model: ModelState, penalty: PenaltyConfig, rho: float,
               extra: dict | None = None) -> None:
    """Single self-describing file: text header with the dimensions and the
    penalty configuration, then W and b as little-endian float64."""
    lines = [
        MODEL_MAGIC,
        f"d {model.d}",
        f"Q {model.Q}",
        f"q {_q_str(penalty.q)}",
        f"penalty {penalty.kind}",
        f"alpha {penalty.alpha!r}",
        f"lambda {penalty.lam!r}",
        f"rho {float(rho)!r}",
        "dtype <f8",
        "layout W(d,Q) row-major then b(Q)",
    ]
    for key in sorted(extra or {}):
        lines.append(f"meta.{key} {(extra or {})[key]}")
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(model.W, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.b, dtype="<f8").tobytes())


def load_model(path) -> Tuple[ModelState, PenaltyConfig, float, dict]:
    """Inverse of :func:`save_model`; t is recomputed from W and q."""
    with open(path, "rb") as fh:
        header = {}
        magic = fh.readline().decode("ascii").rstrip("\n")
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: not a model file (magic {magic!r})")
        extra = {}
        while True:
            line = fh.readline().decode("ascii").rstrip("\n")
            if line == "end":
                break
            if not line:
                raise ValueError(f"{path}: truncated header")
            key, _, value = line.partition(" ")
            if key.startswith("meta."):
                extra[key[5:]] = value
            else:
                header[key] = value
        d, Q = int(header["d"]), int(header["Q"])
        W = np.frombuffer(fh.read(8 * d * Q), dtype="<f8").reshape(d, Q).astype(float)
        b = np.frombuffer(fh.read(8 * Q), dtype="<f8").astype(float)
    penalty = PenaltyConfig(kind=header["penalty"], alpha=float(header["alpha"]),
                            lam=float(header["lambda"]), q=_q_parse(header["q"]))
    model = ModelState(W, b, group_norms(W, penalty.q))
    return model, penalty, float(header["rho"]), extra
