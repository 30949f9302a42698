"""Acceptance suite: one test per criterion, pinned tolerances and budgets.

Each test prints a single PASS line (run with ``pytest -s``); a failure
shows up as a normal assertion error naming the violated bound.
"""

import math
import time

import numpy as np
import pytest

from dcsparse.data import (SplitSpec, generate_sim1, generate_sim2,
                           generate_sim3, split, standardize)
from dcsparse.dc import (SolverConfig, inverse_square_schedule, run_dca,
                         run_isdca, run_sdca)
from dcsparse.harness import (ExperimentSpec, accuracy_metric, lambda_path,
                              run_path, run_single, selected_rows)
from dcsparse.mlr import ModelState, PenaltyConfig, build_problem, nll_loss
from dcsparse.prox import ProxQuery, prox, prox_objective, prox_rows

from conftest import make_blobs
from oracles import central_difference_gradient, prox_oracle_subgradient

ALL_Q = (1, 2, math.inf)


def _report(name, elapsed, budget, detail=""):
    print(f"\n[acceptance] {name}: PASS ({elapsed:.1f}s / budget {budget}s)"
          + (f" {detail}" if detail else ""))
    assert elapsed < budget, f"{name} exceeded its runtime budget"


def toy_instance(seed=23):
    return make_blobs(n=200, d=10, Q=3, seed=seed, band=3, shift=1.2)


# ---------------------------------------------------------------------------


def test_c01_prox_oracle_equivalence():
    started = time.perf_counter()
    rng = np.random.Generator(np.random.Philox(1001))
    for q in ALL_Q:
        queries = []
        for _ in range(1000):
            dim = int(rng.integers(2, 21))
            u = 3.0 * rng.standard_normal(dim)
            c = float(rng.uniform(0.0, 2.5))
            rho = float(rng.uniform(0.2, 5.0))
            queries.append((u, c, rho))
        # one zero-padded batch in the rho = 1 frame, where the query
        # prox_{(c/rho)||.||_q}(u/rho) has data (u/rho, c/rho)
        U = np.zeros((len(queries), 20))
        for j, (u, c, rho) in enumerate(queries):
            U[j, :u.size] = u / rho
        C = np.array([c / rho for _, c, rho in queries])
        oracle_best, _ = prox_oracle_subgradient(U, C, 1.0, q, iters=10_000)
        for j, (u, c, rho) in enumerate(queries):
            ours = prox(ProxQuery(u, c, rho, q))
            ours_obj = prox_objective(ours, u / rho, c / rho, 1.0, q)
            assert ours_obj <= oracle_best[j] + 1e-9, (
                f"q={q}, query {j}: {ours_obj} > {oracle_best[j]} + 1e-9")
    _report("criterion 1 (prox oracle equivalence)",
            time.perf_counter() - started, 10)


def test_c02_gradient_correctness():
    started = time.perf_counter()
    ds = make_blobs(n=60, d=20, Q=4, seed=31, band=4)
    pen = PenaltyConfig("exponential", alpha=2.0, lam=0.1, q=2)
    prob = build_problem(ds, pen)
    spec = prob.spec
    rng = np.random.Generator(np.random.Philox(32))
    d, Q = 20, 4
    for probe in range(100):
        i = int(rng.integers(ds.n))
        W = rng.standard_normal((d, Q))
        b = rng.standard_normal(Q)
        model = ModelState.from_wb(W, b, 2)
        from dcsparse.mlr import component_subgradient
        U, v, _ = component_subgradient(i, model, spec)
        xi = np.asarray(ds.X[i], dtype=float)
        yi = int(ds.y[i])

        def smooth(wb):
            Wp = wb[:d * Q].reshape(d, Q)
            bp = wb[d * Q:]
            quad = 0.5 * spec.rho * (np.sum(Wp ** 2) + np.sum(bp ** 2))
            return quad - nll_loss(ModelState.from_wb(Wp, bp, 2), xi, yi)

        fd = central_difference_gradient(smooth, np.concatenate([W.ravel(), b]),
                                         step=1e-5)
        ana = np.concatenate([U.ravel(), v])
        rel = np.linalg.norm(ana - fd) / max(1.0, np.linalg.norm(ana))
        assert rel <= 1e-5, f"probe {probe}: relative error {rel}"
    _report("criterion 2 (gradient correctness)",
            time.perf_counter() - started, 5)


def test_c03_sdca_equals_dca_bitwise():
    started = time.perf_counter()
    ds = toy_instance()
    pen = PenaltyConfig("exponential", alpha=2.0, lam=0.05, q=2)
    prob = build_problem(ds, pen)
    x0 = prob.initial_point()
    cfg = SolverConfig(max_epochs=50, batch_fraction=1.0, eps_stop=None,
                       rng_seed=5, keep_iterates=True)
    _, trace_dca = run_dca(prob, x0, cfg)
    _, trace_sdca = run_sdca(prob, x0, cfg)
    assert len(trace_dca.iterates) == len(trace_sdca.iterates) == 51
    for l, (a, b) in enumerate(zip(trace_dca.iterates, trace_sdca.iterates)):
        assert np.array_equal(a, b), f"iterates diverge at iteration {l}"
    _report("criterion 3 (single-block run reproduces full-batch run bitwise)",
            time.perf_counter() - started, 5)


def test_c04_full_batch_descent_all_variants():
    started = time.perf_counter()
    ds = toy_instance()
    for q in ALL_Q:
        for kind in ("exponential", "capped_l1"):
            pen = PenaltyConfig(kind, alpha=2.0, lam=0.05, q=q)
            prob = build_problem(ds, pen)
            cfg = SolverConfig(max_epochs=200, eps_stop=None)
            _, trace = run_dca(prob, prob.initial_point(), cfg)
            obj = np.asarray(trace.objective)
            obj = obj[np.isfinite(obj)]
            assert obj.size == 201
            worst = float(np.max(np.diff(obj)))
            assert worst <= 1e-10, (
                f"q={q}, {kind}: objective increased by {worst}")
    _report("criterion 4 (exact full-batch descent, all q and penalties)",
            time.perf_counter() - started, 30)


def test_c05_majorization_on_sim1():
    started = time.perf_counter()
    ds = generate_sim1(n=10_000, seed=29)
    tr, va, te = split(ds, SplitSpec(seed=29))
    (tr, va, te), _ = standardize(tr, va, te)
    prob = build_problem(tr, PenaltyConfig("exponential", alpha=2.0,
                                           lam=0.01, q=2))
    cfg = SolverConfig(max_epochs=50, batch_fraction=0.1, eps_stop=None,
                       rng_seed=29)
    _, trace = run_sdca(prob, prob.initial_point(), cfg)
    gaps = trace.surrogate_gaps()
    assert gaps.size >= 50
    assert float(gaps.min()) >= -1e-9, f"surrogate gap dipped to {gaps.min()}"
    _report("criterion 5 (majorization along a 50-epoch stochastic run)",
            time.perf_counter() - started, 60,
            f"min gap {gaps.min():.2e}")


def test_c06_isdca_consistency():
    started = time.perf_counter()
    ds = toy_instance()
    pen = PenaltyConfig("exponential", alpha=2.0, lam=0.05, q=2)
    prob = build_problem(ds, pen)
    x0 = prob.initial_point()
    base = dict(max_epochs=40, batch_fraction=0.1, eps_stop=None, rng_seed=9,
                keep_iterates=True)
    _, tr_exact = run_sdca(prob, x0, SolverConfig(**base))
    from dcsparse.dc import zero_schedule
    _, tr_zero = run_isdca(prob, x0, SolverConfig(eps_schedule=zero_schedule(),
                                                  **base))
    assert len(tr_exact.iterates) == len(tr_zero.iterates)
    for a, b in zip(tr_exact.iterates, tr_zero.iterates):
        assert np.array_equal(a, b)
    _, tr_eps = run_isdca(prob, x0, SolverConfig(
        eps_schedule=inverse_square_schedule(0.1), **base))
    f_exact = [o for o in tr_exact.objective if math.isfinite(o)][-1]
    f_eps = [o for o in tr_eps.objective if math.isfinite(o)][-1]
    assert abs(f_exact - f_eps) <= 1e-3, f"objectives differ by {f_exact - f_eps}"
    _report("criterion 6 (inexact runs track the exact one)",
            time.perf_counter() - started, 30)


def test_c07_variable_recovery_sim1():
    started = time.perf_counter()
    ds_seed = 29
    ds = generate_sim1(n=10_000, seed=ds_seed)
    successes = 0
    outcomes = []
    for rep in range(10):
        tr, va, te = split(ds, SplitSpec(seed=ds_seed + rep))
        (tr, va, te), _ = standardize(tr, va, te)
        warm = None
        best_val, best_model = -1.0, None
        for lam in lambda_path():
            # alpha = 5 from the protocol grid: the tightest surrogate of
            # row counting, strongest noise-row suppression
            model, _ = run_single("sdca", tr, va, q=2,
                                  penalty_kind="exponential", alpha=5.0,
                                  lam=lam, batch_fraction=0.1, patience=5,
                                  max_epochs=200, seed=7919 * ds_seed + rep,
                                  warm=warm)
            warm = model
            acc = accuracy_metric(model, va)
            if acc > best_val:
                best_val, best_model = acc, model
        rows = selected_rows(best_model)
        informative = int(np.sum(rows < 40))
        noise = int(np.sum(rows >= 40))
        outcomes.append((informative, noise))
        if informative >= 36 and noise <= 3:
            successes += 1
    assert successes >= 8, f"only {successes}/10 repetitions recovered: {outcomes}"
    _report("criterion 7 (variable recovery on sim_1)",
            time.perf_counter() - started, 600,
            f"{successes}/10 repetitions, (informative, noise) = {outcomes}")


def _best_validation_test_accuracy(algorithm, tr, va, te, seed):
    warm = None
    best_val, best_test = -1.0, None
    for lam in lambda_path():
        model, _ = run_single(algorithm, tr, va, q=2,
                              penalty_kind="exponential", alpha=2.0, lam=lam,
                              batch_fraction=0.1, patience=5, eps_stop=1e-6,
                              max_epochs=2000, seed=seed, warm=warm)
        warm = model
        acc = accuracy_metric(model, va)
        if acc > best_val:
            best_val, best_test = acc, accuracy_metric(model, te)
    return best_test


def test_c08_sdca_dca_parity():
    started = time.perf_counter()
    diffs = {}
    for name, dataset in (("sim_1", generate_sim1(n=10_000, seed=29)),
                          ("sim_2", generate_sim2(n=10_000, seed=29))):
        tr, va, te = split(dataset, SplitSpec(seed=29))
        (tr, va, te), _ = standardize(tr, va, te)
        acc_sdca = _best_validation_test_accuracy("sdca", tr, va, te, seed=29)
        acc_dca = _best_validation_test_accuracy("dca", tr, va, te, seed=29)
        diffs[name] = abs(acc_sdca - acc_dca)
    elapsed = time.perf_counter() - started
    assert elapsed < 1200, "criterion 8 exceeded its runtime budget"
    for name, diff in diffs.items():
        assert diff <= 2.0, (
            f"{name}: best-validation test accuracies differ by "
            f"{diff:.2f} points (bound 2.0); all diffs: {diffs}")
    print(f"\n[acceptance] criterion 8 (stochastic vs full-batch parity): "
          f"PASS ({elapsed:.1f}s / budget 1200s) diffs {diffs}")


def test_c09_sdca_time_to_dca_objective():
    started = time.perf_counter()
    ds = generate_sim1(n=50_000, seed=29)
    tr, va, te = split(ds, SplitSpec(seed=29))
    (tr, va, te), _ = standardize(tr, va, te)
    prob = build_problem(tr, PenaltyConfig("exponential", alpha=2.0,
                                           lam=0.01, q=2))
    x0 = prob.initial_point()
    t0 = time.perf_counter()
    _, trace_dca = run_dca(prob, x0, SolverConfig(max_epochs=5000,
                                                  eps_stop=1e-6))
    dca_wall = time.perf_counter() - t0
    f_dca = [o for o in trace_dca.objective if math.isfinite(o)][-1]
    target = f_dca + 0.01 * abs(f_dca)

    reached = {"t": None}

    def stop_when_reached(epoch, x, trace):
        obj = np.asarray(trace.objective)
        wt = np.asarray(trace.wall_time)
        mask = np.isfinite(obj) & (obj <= target)
        if mask.any():
            reached["t"] = float(wt[mask][0])
            return True
        return False

    cfg = SolverConfig(max_epochs=5000, batch_fraction=0.1, eps_stop=None,
                       rng_seed=29)
    run_sdca(prob, x0, cfg, callback=stop_when_reached)
    assert reached["t"] is not None, "stochastic run never reached the target"
    ratio = reached["t"] / dca_wall
    assert ratio <= 0.5, (f"time-to-target ratio {ratio:.3f} exceeds 0.5 "
                          f"(SDCA {reached['t']:.1f}s vs DCA {dca_wall:.1f}s)")
    _report("criterion 9 (stochastic speed advantage)",
            time.perf_counter() - started, 900,
            f"ratio {ratio:.3f} (SDCA {reached['t']:.1f}s / DCA {dca_wall:.1f}s)")


def test_c10_spgd_full_path_and_prox_delegation():
    started = time.perf_counter()
    ds = generate_sim2(n=10_000, seed=29)
    spec = ExperimentSpec(algorithm="spgd", repetitions=1, seed=29,
                          max_epochs=200)
    report = run_path(spec, ds)
    assert len(report.records) == len(spec.lambdas)
    aborted = [r for r in report.records if r.stop_reason.startswith("aborted")]
    assert not aborted, f"aborted cells: {aborted}"
    # the W-update is exactly the row-wise group soft-threshold
    rng = np.random.Generator(np.random.Philox(71))
    for _ in range(200):
        U = 3.0 * rng.standard_normal((30, 4))
        c = float(rng.uniform(0.0, 2.0))
        norms = np.linalg.norm(U, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        direct = np.maximum(norms - c, 0.0)[:, None] * U / safe[:, None]
        delegated = prox_rows(U, c, 1.0, 2)
        assert np.max(np.abs(direct - delegated)) <= 1e-12
    _report("criterion 10 (proximal-gradient baseline sanity)",
            time.perf_counter() - started, 600)


def test_c11_generator_moments():
    # single-coordinate estimates carry the quoted 0.02 / 0.03 tolerances;
    # coordinate-wise sweeps use the 4 * std / sqrt(n_class) envelope
    started = time.perf_counter()
    # independent-feature generator: band means 0.5, the rest 0
    d1 = generate_sim1(n=100_000, seed=11)
    for k in range(1, 5):
        Xk = d1.X[d1.y == k]
        envelope = 4.0 / math.sqrt(Xk.shape[0])
        mk = Xk.mean(axis=0)
        band = slice(10 * (k - 1), 10 * k)
        assert abs(mk[band].mean() - 0.5) <= 0.02
        assert abs(mk[40:].mean()) <= 0.02
        assert np.abs(mk[band] - 0.5).max() <= envelope
        assert np.abs(mk[40:]).max() <= envelope
    # correlated generator: within-block covariance 0.6^|j-j'|, zero across
    d2 = generate_sim2(n=100_000, seed=11)
    X1 = d2.X[d2.y == 1]
    assert abs(float(np.cov(X1[:, 0], X1[:, 1])[0, 1]) - 0.6) <= 0.03
    assert abs(float(np.cov(X1[:, 4], X1[:, 14])[0, 1])) <= 0.03
    m3 = d2.X[d2.y == 3].mean(axis=0)
    assert abs(m3[0] - 0.8) <= 0.02
    m2 = d2.X[d2.y == 2].mean(axis=0)
    assert abs(m2[0] - 0.4) <= 0.02
    # one-dimensional-mean generator: class k mean (k-1)/3 on features 1..100
    d3 = generate_sim3(n_per_class=25_000, d=200, seed=11)
    envelope = 4.0 / math.sqrt(25_000)
    for k in range(1, 5):
        mk = d3.X[d3.y == k].mean(axis=0)
        assert abs(mk[0] - (k - 1) / 3.0) <= 0.02
        assert abs(mk[-1]) <= 0.02
        assert np.abs(mk[:100] - (k - 1) / 3.0).max() <= envelope
        assert np.abs(mk[100:]).max() <= envelope
    _report("criterion 11 (generator moments)",
            time.perf_counter() - started, 120)


def test_c12_eps_subgradient_certificates_during_isdca():
    started = time.perf_counter()
    ds = toy_instance()
    pen = PenaltyConfig("exponential", alpha=2.0, lam=0.05, q=2)
    prob = build_problem(ds, pen)
    # batch fraction 0.1 -> 10 blocks; 11 epochs -> 101 iterations
    cfg = SolverConfig(max_epochs=11, batch_fraction=0.1, eps_stop=None,
                       rng_seed=13, diagnostic=True, certificate_probes=10)
    _, trace = run_isdca(prob, prob.initial_point(), cfg)
    assert trace.iteration[-1] >= 100
    assert len(trace.certificate_checks) >= 100
    assert all(trace.certificate_checks), (
        f"{trace.certificate_checks.count(False)} certificate failures")
    _report("criterion 12 (eps-subgradient certificates)",
            time.perf_counter() - started, 30,
            f"{len(trace.certificate_checks)} checks")
