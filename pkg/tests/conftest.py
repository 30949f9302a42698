"""Shared fixtures: tiny datasets and synthetic DC problems for the engines."""

import numpy as np
import pytest

from dcsparse.data import Dataset
from dcsparse.dc import DcProblem


def make_blobs(n=200, d=10, Q=3, seed=7, shift=1.2, band=3):
    """Gaussian classes with mean `shift` on disjoint feature bands."""
    rng = np.random.Generator(np.random.Philox(seed))
    y = rng.integers(1, Q + 1, n)
    for k in range(1, Q + 1):
        if not np.any(y == k):  # tiny n: force every class to appear
            y[k - 1] = k
    X = rng.standard_normal((n, d))
    for k in range(1, Q + 1):
        lo = (k - 1) * band
        X[y == k, lo:lo + band] += shift
    return Dataset(X, y, {"generator": "blobs", "n": n, "d": d, "seed": seed})


class QuadraticSumProblem(DcProblem):
    """Mean of smooth DC components with strongly convex concave parts.

    F_i(x) = 0.5 a_i ||x - p_i||^2 - 0.5 c_i ||x - m_i||^2 with a_i > c_i,
    so F is bounded below and every surrogate solve is a closed form.  The
    eps-tolerant oracles inject genuine perturbations sized so membership
    in the eps-subdifferential / eps-argmin is guaranteed.
    """

    def __init__(self, n=12, dim=4, seed=0, curvature_gap=1.0):
        rng = np.random.Generator(np.random.Philox(seed))
        self.n = n
        self.dim = dim
        self.c = rng.uniform(0.5, 2.0, n)
        self.a = self.c + curvature_gap
        self.p = rng.standard_normal((n, dim))
        self.m = rng.standard_normal((n, dim))
        self.strong_convexity_modulus = float(self.c.min())
        self.abar = float(self.a.mean())
        self.ap_mean = (self.a[:, None] * self.p).mean(axis=0)
        self._rng = np.random.Generator(np.random.Philox(seed + 9999))

    def _g(self, i, x):
        diff = x - self.p[i]
        return 0.5 * self.a[i] * float(np.dot(diff, diff))

    def component_h(self, i, x):
        diff = x - self.m[i]
        return 0.5 * self.c[i] * float(np.dot(diff, diff))

    def component_objective(self, i, x):
        return self._g(i, x) - self.component_h(i, x)

    def objective(self, x):
        return float(np.mean([self.component_objective(i, x)
                              for i in range(self.n)]))

    def g_objective(self, x):
        return float(np.mean([self._g(i, x) for i in range(self.n)]))

    def subgradient_h(self, i, x):
        return self.c[i] * (x - self.m[i])

    def eps_subgradient_h(self, i, x, eps):
        v = self.subgradient_h(i, x)
        if eps > 0:
            e = self._rng.standard_normal(self.dim)
            e *= 0.9 * np.sqrt(2.0 * self.c[i] * eps) / np.linalg.norm(e)
            v = v + e
        return v

    def solve_surrogate(self, v, eps):
        x = (np.asarray(v, dtype=float) + self.ap_mean) / self.abar
        if eps > 0:
            u = self._rng.standard_normal(self.dim)
            x = x + 0.9 * np.sqrt(2.0 * eps / self.abar) * u / np.linalg.norm(u)
        return x


class AbsValueToyProblem(DcProblem):
    """One-dimensional F(x) = x^2 - |x| with g = x^2, h = |x| (n = 1)."""

    n = 1
    dim = 1
    strong_convexity_modulus = 0.0

    def objective(self, x):
        v = float(x[0])
        return v * v - abs(v)

    def component_objective(self, i, x):
        return self.objective(x)

    def g_objective(self, x):
        v = float(x[0])
        return v * v

    def component_h(self, i, x):
        return abs(float(x[0]))

    def subgradient_h(self, i, x):
        return np.array([np.sign(x[0])])

    def solve_surrogate(self, v, eps):
        return np.array([0.5 * float(v[0])])


class PoisonedProblem(QuadraticSumProblem):
    """Returns a NaN iterate after a fixed number of surrogate solves."""

    def __init__(self, poison_after=3, **kwargs):
        super().__init__(**kwargs)
        self.poison_after = poison_after
        self._solves = 0

    def solve_surrogate(self, v, eps):
        self._solves += 1
        if self._solves > self.poison_after:
            return np.full(self.dim, np.nan)
        return super().solve_surrogate(v, eps)


@pytest.fixture
def blobs_small():
    return make_blobs(n=200, d=10, Q=3, seed=7)


@pytest.fixture
def quadratic_problem():
    return QuadraticSumProblem(n=12, dim=4, seed=0)
