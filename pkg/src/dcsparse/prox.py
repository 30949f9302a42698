"""Closed-form proximal operators of scaled l1 / l2 / l-inf norms.

Each operator evaluates, for a vector ``u``, a nonnegative scale ``c`` and a
quadratic modulus ``rho > 0``,

    prox_{(c/rho) ||.||_q}(u / rho)
        = argmin_w  0.5 ||w - u/rho||^2 + (c/rho) ||w||_q,

which is also the unique minimizer of (rho/2)||w||^2 + c||w||_q - <u, w>.
Thresholded coordinates / rows come out as literal zeros so that sparsity
counts downstream are exact.  The l-inf case goes through the Moreau
identity and a sort-based Euclidean projection onto the l1 ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ProxQuery",
    "prox",
    "prox_l1",
    "prox_l2",
    "prox_linf",
    "project_l1_ball",
    "prox_rows",
    "project_l1_ball_rows",
]


@dataclass(frozen=True)
class ProxQuery:
    """One row subproblem: vector ``u``, scale ``c >= 0``, modulus ``rho > 0``,
    norm selector ``q`` in {1, 2, math.inf}."""

    u: np.ndarray
    c: float
    rho: float
    q: float

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        object.__setattr__(self, "u", u)
        if not np.all(np.isfinite(u)):
            raise ValueError("prox input vector must be finite")
        if self.c < 0:
            raise ValueError(f"prox scale must be nonnegative, got {self.c}")
        if self.rho <= 0:
            raise ValueError(f"prox modulus must be positive, got {self.rho}")
        if self.q not in (1, 2, math.inf):
            raise ValueError(f"norm selector must be 1, 2 or inf, got {self.q}")


def prox(query: ProxQuery) -> np.ndarray:
    """Dispatch a :class:`ProxQuery` to the matching closed form."""
    if query.q == 1:
        return prox_l1(query.u, query.c, query.rho)
    if query.q == 2:
        return prox_l2(query.u, query.c, query.rho)
    return prox_linf(query.u, query.c, query.rho)


def prox_objective(w, u, c, rho, q) -> float:
    """0.5||w - u/rho||^2 + (c/rho)||w||_q, the value the operators minimize."""
    w = np.asarray(w, dtype=float)
    v = np.asarray(u, dtype=float) / rho
    if q == 1:
        pen = np.abs(w).sum()
    elif q == 2:
        pen = float(np.linalg.norm(w))
    else:
        pen = float(np.abs(w).max()) if w.size else 0.0
    return 0.5 * float(np.dot(w - v, w - v)) + (c / rho) * pen


def prox_l1(u, c, rho=1.0) -> np.ndarray:
    """Componentwise soft-thresholding of u/rho at level c/rho."""
    u = np.asarray(u, dtype=float)
    if c == 0:
        return u / rho
    out = np.sign(u) * np.maximum((np.abs(u) - c) / rho, 0.0)
    return out + 0.0  # normalize -0.0 from sign products


def prox_l2(u, c, rho=1.0) -> np.ndarray:
    """Block soft-thresholding: 0 when ||u||_2 <= c, else (1 - c/||u||_2) u/rho."""
    u = np.asarray(u, dtype=float)
    nrm = float(np.linalg.norm(u))
    if nrm <= c:
        return np.zeros_like(u)
    return (1.0 - c / nrm) * u / rho


def project_l1_ball(w, radius) -> np.ndarray:
    """Euclidean projection onto {v : ||v||_1 <= radius}.

    Interior points pass through unchanged; otherwise the output is
    (|w| - delta)_+ * sign(w) with delta the unique root of
    sum_k (|w_k| - delta)_+ = radius, located exactly by sorting the
    magnitudes (O(Q log Q)).
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    w = np.asarray(w, dtype=float)
    a = np.abs(w)
    if a.sum() <= radius:
        return w.copy()
    s = np.sort(a)[::-1]
    cums = np.cumsum(s)
    k = np.arange(1, s.size + 1)
    active = s - (cums - radius) / k > 0
    n_active = int(np.nonzero(active)[0].max()) + 1
    delta = (cums[n_active - 1] - radius) / n_active
    return np.sign(w) * np.maximum(a - delta, 0.0) + 0.0


def prox_linf(u, c, rho=1.0) -> np.ndarray:
    """Prox of the scaled max norm via the Moreau identity.

    prox_{(c/rho)||.||_inf}(u/rho) = (u - c * P(u/c)) / rho with P the
    projection onto the unit l1 ball; returns exact zeros when
    ||u||_1 <= c and u/rho when c = 0.
    """
    u = np.asarray(u, dtype=float)
    if c == 0:
        return u / rho
    if np.abs(u).sum() <= c:
        return np.zeros_like(u)
    return (u - c * project_l1_ball(u / c, 1.0)) / rho


def project_l1_ball_rows(W, radius=1.0) -> np.ndarray:
    """Row-wise projection onto the l1 ball of the given radius."""
    W = np.asarray(W, dtype=float)
    a = np.abs(W)
    out = W.copy()
    outside = a.sum(axis=1) > radius
    if not np.any(outside):
        return out
    ao = a[outside]
    s = -np.sort(-ao, axis=1)
    cums = np.cumsum(s, axis=1)
    k = np.arange(1, s.shape[1] + 1)
    active = s - (cums - radius) / k > 0
    # the active set is a prefix of the sorted coordinates
    n_active = active.shape[1] - 1 - np.argmax(active[:, ::-1], axis=1)
    delta = (cums[np.arange(s.shape[0]), n_active] - radius) / (n_active + 1)
    out[outside] = np.sign(W[outside]) * np.maximum(ao - delta[:, None], 0.0) + 0.0
    return out


def prox_rows(U, c, rho, q) -> np.ndarray:
    """Apply the scaled-norm prox to every row of ``U`` with per-row scales ``c``.

    Matches calling the single-row operators row by row; used where the
    surrogate subproblem separates over rows.
    """
    U = np.asarray(U, dtype=float)
    c = np.broadcast_to(np.asarray(c, dtype=float), (U.shape[0],))
    if np.any(c < 0):
        raise ValueError("row scales must be nonnegative")
    if q == 1:
        out = np.sign(U) * np.maximum((np.abs(U) - c[:, None]) / rho, 0.0) + 0.0
        out[c == 0] = U[c == 0] / rho
        return out
    if q == 2:
        nrm = np.linalg.norm(U, axis=1)
        out = np.zeros_like(U)
        live = nrm > c
        out[live] = (1.0 - c[live] / nrm[live])[:, None] * U[live] / rho
        return out
    if q == math.inf:
        out = np.zeros_like(U)
        identity = c == 0
        out[identity] = U[identity] / rho
        live = (~identity) & (np.abs(U).sum(axis=1) > c)
        if np.any(live):
            V = U[live] / c[live, None]
            out[live] = (U[live] - c[live, None] * project_l1_ball_rows(V, 1.0)) / rho
        return out
    raise ValueError(f"norm selector must be 1, 2 or inf, got {q}")
