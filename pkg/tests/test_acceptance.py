"""Acceptance criteria 1-10, each checked at its stated tolerance.

Criteria 1-6 read the default simulation grid (8 cells x 20 datasets x 2
methods x 10 starts).  It is computed once per session with one worker per
CPU; on one core this takes about an hour.  Setting PF2NET_GRID_RESULTS to
the output directory of ``pf2net experiment`` with the default config reuses
that run instead (its config.json must match the default grid).

One PASS/FAIL line per criterion is printed at the end of the run.
"""
import json
import math
import os

import numpy as np
import pytest

from conftest import cp_truth, pf2_truth, record_criterion
from pf2net.cp import FitOptions, cp_als, cp_als_runs
from pf2net.falff import WindowSpec, falff_window, preprocess_tensor
from pf2net.harness.config import config_from_dict
from pf2net.harness.experiment import ResultsTable, aggregate, max_trace_increase, run_experiment
from pf2net.metrics import concat_evolving, fit_score, fms, match_components, two_sample_ttest
from pf2net.parafac2 import pf2_als, pf2_als_runs, pf2_constraint_gap
from pf2net.simgen import SimConfig, add_noise, gen_dataset
from pf2net.tensor import DenseTensor3, frobenius_norm

ETAS = (0.0, 0.33)
CS = ("Random", "Trends")
BS = ("Network", "Random")


def _comparable(d):
    return {k: v for k, v in d.items() if k not in ("output_dir", "workers")}


@pytest.fixture(scope="session")
def grid():
    cfg = config_from_dict({})
    cached = os.environ.get("PF2NET_GRID_RESULTS")
    if cached:
        with open(os.path.join(cached, "config.json")) as fh:
            saved = json.load(fh)
        assert _comparable(saved) == _comparable(json.loads(json.dumps(cfg.to_dict()))), "cached grid used another config"
        with open(os.path.join(cached, "records.jsonl")) as fh:
            records = [json.loads(line) for line in fh]
        return ResultsTable(aggregate(records, cfg.cells, cfg.methods, cfg.n_datasets), records)
    return run_experiment(cfg, workers=os.cpu_count() or 1)


def _fmt(r):
    return f"fit {r.fit:.2f} FMS {r.fms_A:.3f}/{r.fms_B:.3f}/{r.fms_C:.3f} clust {r.clustering_acc:.1f} failed {r.n_failed}"


def _finish(number, checks):
    """``checks``: list of (ok, description).  Records the line, then asserts."""
    ok = all(c for c, _ in checks)
    bad = [d for c, d in checks if not c]
    detail = "; ".join(bad) if bad else "; ".join(d for _, d in checks)
    record_criterion(number, ok, detail)
    assert ok, detail


@pytest.mark.slow
def test_criterion_01_noise_free_random(grid):
    r = grid.row(0.0, "Random", "Random", "PARAFAC2")
    ok = r.n_failed == 0 and r.fit >= 99.9 and min(r.fms_A, r.fms_B, r.fms_C) >= 0.99
    _finish(1, [(ok, f"PF2 eta=0 C=Random B=Random: {_fmt(r)} (need fit>=99.9, FMS>=0.99)")])


@pytest.mark.slow
def test_criterion_02_noise_free_network(grid):
    checks = []
    for c in CS:
        r = grid.row(0.0, c, "Network", "PARAFAC2")
        ok = r.n_failed == 0 and r.fms_B >= 0.93 and r.fit >= 99.5
        checks.append((ok, f"C={c}: {_fmt(r)} (need FMS_B>=0.93, fit>=99.5)"))
    _finish(2, checks)


@pytest.mark.slow
def test_criterion_03_noisy_cells(grid):
    checks = []
    for c in CS:
        for b in BS:
            r = grid.row(0.33, c, b, "PARAFAC2")
            ok = r.n_failed == 0 and abs(r.fit - 91.1) <= 1.5 and r.fms_B >= 0.85
            checks.append((ok, f"C={c} B={b}: {_fmt(r)} (need fit 91.1+-1.5, FMS_B>=0.85)"))
    _finish(3, checks)


@pytest.mark.slow
def test_criterion_04_cp_on_random_b(grid):
    checks = []
    for eta in ETAS:
        for c in CS:
            r = grid.row(eta, c, "Random", "CP")
            ok = r.n_failed == 0 and r.fms_B <= 0.2 and (eta > 0 or r.fit <= 30.0)
            need = "FMS_B<=0.2" + (", fit<=30" if eta == 0 else "")
            checks.append((ok, f"CP eta={eta} C={c}: {_fmt(r)} (need {need})"))
    _finish(4, checks)


@pytest.mark.slow
def test_criterion_05_ordering(grid):
    checks = []
    for eta in ETAS:
        for c in CS:
            for b in BS:
                p, q = grid.row(eta, c, b, "PARAFAC2"), grid.row(eta, c, b, "CP")
                worse = [k for k in ("fit", "fms_A", "fms_B", "fms_C") if not getattr(p, k) >= getattr(q, k)]
                checks.append((not worse, f"eta={eta} C={c} B={b}: PF2 below CP on {worse}" if worse else f"eta={eta} C={c} B={b} ok"))
    _finish(5, checks)


@pytest.mark.slow
def test_criterion_06_clustering(grid):
    checks = []
    for eta in ETAS:
        for c in CS:
            for b in BS:
                r = grid.row(eta, c, b, "PARAFAC2")
                checks.append((r.clustering_acc >= 88.0, f"eta={eta} C={c} B={b}: {r.clustering_acc:.1f}%"))
    _finish(6, checks)


def _random_problem(rng):
    I, J, K = (int(v) for v in rng.integers([4, 4, 3], [13, 16, 11]))
    R = int(rng.integers(1, min(4, J) + 1))
    kind = rng.integers(3)
    if kind == 0:
        X = rng.standard_normal((I, J, K))
        return DenseTensor3.from_array(X), R
    A, Bk, C, T = pf2_truth(int(rng.integers(2**32)), (I, J, K), R)
    if kind == 1:
        T = add_noise(T, float(rng.uniform(0.05, 0.5)), int(rng.integers(2**32)))
    return T, R


@pytest.mark.slow
def test_criterion_07_constraint_and_monotonicity(grid):
    rng = np.random.default_rng(7007)
    worst_inc, worst_gap, n_fits = -math.inf, 0.0, 0
    for trial in range(120):
        T, R = _random_problem(rng)
        opts = FitOptions(rank=R, seed=int(rng.integers(2**63)), n_starts=1, max_iterations=500)
        variant = trial % 3
        if variant == 0:
            runs = cp_als_runs(T, opts)
        else:
            runs = pf2_als_runs(T, opts, nonneg_C=variant == 2)
        for model, report in runs:
            n_fits += 1
            worst_inc = max(worst_inc, max_trace_increase(report.loss_trace))
            if variant:
                worst_gap = max(worst_gap, pf2_constraint_gap(model.Bk))
    # every fit of the grid, all starts
    ok_recs = [r for r in grid.records if r["error"] is None]
    grid_inc = max(r["max_trace_increase"] for r in ok_recs)
    grid_gap = max(r["constraint_gap"] for r in ok_recs if r["method"] == "PARAFAC2")
    n_grid = sum(len(r["start_fits"]) for r in ok_recs)
    checks = [
        (n_fits >= 100, f"{n_fits} randomized fits"),
        (worst_inc <= 1e-10, f"largest trace increase {worst_inc:.2e} (randomized)"),
        (worst_gap <= 1e-8, f"largest constraint gap {worst_gap:.2e} (randomized)"),
        (grid_inc <= 1e-10, f"largest trace increase {grid_inc:.2e} over {n_grid} grid fits"),
        (grid_gap <= 1e-8, f"largest grid constraint gap {grid_gap:.2e}"),
    ]
    _finish(7, checks)


def _all_mode_fms(truth, est):
    m = match_components(truth, est)
    return min(fms(U, Uh, m) for U, Uh in zip(truth, est))


def test_criterion_08_oracle_recovery():
    # PARAFAC2 is fitted with non-negative C, the time-mode constraint used throughout the
    # harness: without it each slice is identified only up to a sign (see test_parafac2).
    cp_hits = pf2_hits = 0
    for trial in range(50):
        A, B, C, T = cp_truth(1000 + trial)
        model, _ = cp_als(T, FitOptions(rank=3, seed=trial))
        cp_hits += _all_mode_fms([A, B, C], model.factors) >= 0.999
        A, Bk, C, T = pf2_truth(2000 + trial)
        model, _ = pf2_als(T, FitOptions(rank=3, seed=trial), nonneg_C=True)
        pf2_hits += _all_mode_fms([A, concat_evolving(Bk), C], [model.A, concat_evolving(model.Bk), model.C]) >= 0.999
    _finish(8, [
        (cp_hits >= 48, f"CP {cp_hits}/50 trials with all-mode FMS>=0.999"),
        (pf2_hits >= 48, f"PARAFAC2 {pf2_hits}/50"),
    ])


def test_criterion_09_noise_identity():
    rng = np.random.default_rng(9009)
    worst = 0.0
    for _ in range(200):
        dims = tuple(int(v) for v in rng.integers(1, 12, 3))
        X = DenseTensor3(rng.standard_normal(dims) * 10.0 ** rng.uniform(-3, 3))
        eta = float(rng.uniform(0.01, 2.0))
        out = add_noise(X, eta, int(rng.integers(2**63)))
        target = eta * frobenius_norm(X)
        worst = max(worst, abs(np.linalg.norm((out.slices - X.slices).ravel()) - target) / target)
    fits = []
    for i, (c, b) in enumerate([(c, b) for c in CS for b in BS]):
        ds = gen_dataset(SimConfig(noise=0.33, c_setup=c, b_setup=b, seed=90 + i))
        assert np.prod(ds.noisy.dims) >= 1e5
        fits.append(fit_score(ds.noisy, ds.clean))
    _finish(9, [
        (worst <= 1e-12, f"max relative error of the noise norm {worst:.1e} over 200 tensors"),
        (all(abs(f - 90.2) <= 0.5 for f in fits), "fit_score(noisy, clean) = " + ", ".join(f"{f:.2f}" for f in fits)),
    ])


def test_criterion_10_metric_suite():
    rng = np.random.default_rng(1010)
    inv = perm_ok = True
    for _ in range(200):
        R = int(rng.integers(1, 6))
        F = [rng.standard_normal((int(rng.integers(R + 1, 10)), R)) for _ in range(3)]
        perm = rng.permutation(R)
        est = [(U * rng.uniform(0.01, 100, R) * rng.choice([-1.0, 1.0], R))[:, perm] for U in F]
        m = match_components(F, est)
        perm_ok &= m.permutation.tolist() == np.argsort(perm).tolist()
        inv &= all(abs(fms(U, Uh, m) - 1.0) <= 1e-12 for U, Uh in zip(F, est))

    t, p = two_sample_ttest([0, 0, 1, 1], [1, 1, 2, 2])
    ttest_ok = abs(abs(t) - 2.828) <= 5e-4 and abs(p - 0.030) <= 5e-4

    n = 200
    tt = np.arange(n)
    x = np.cos(2 * np.pi * 8 * tt / n) + np.cos(2 * np.pi * 40 * tt / n + 0.3)
    ratio = falff_window(x, WindowSpec(n, n, 0.01, 0.08), 1.0)

    P = preprocess_tensor(DenseTensor3(rng.standard_normal((6, 7, 8))))
    idem = float(np.max(np.abs(preprocess_tensor(P).slices - P.slices)))

    _finish(10, [
        (inv, "FMS sign/scale invariance over 200 random factor sets"),
        (perm_ok, "matching recovers applied permutations"),
        (ttest_ok, f"t-test example: t={t:.4f}, p={p:.4f} (stated |t|=2.828, p~0.030)"),
        (abs(ratio - 0.5) <= 1e-10, f"fALFF two-tone ratio {ratio:.12f}"),
        (idem <= 1e-12, f"preprocess idempotence, max change {idem:.1e}"),
    ])
