"""End-to-end acceptance checks, one verdict line per criterion."""

import time
import warnings

import numpy as np
import pytest
from checks import (
    conjugate_oracles,
    correlation_validity,
    gradient_relative_error,
    kuo_mallick_errors,
    zero_importance_check,
)

from grouprbf import cli
from grouprbf.data import Dataset
from grouprbf.evaluate import (
    fitted_values,
    loading_error,
    prediction_mse,
    ridge_baseline,
    roc_auc,
    scaled_loading,
)
from grouprbf.groups import GroupStructure, contiguous_groups
from grouprbf.pipeline import fit
from grouprbf.sampler import SamplerConfig, run_chain
from grouprbf.screening import correlation_screen, group_screen
from grouprbf.simgen import gen_dataset, split_entries


def test_gradient_matches_finite_differences(record):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    errs = [gradient_relative_error(rng, int(rng.integers(2, 11)), int(rng.integers(1, 7)),
                                    int(rng.integers(1, 4)), int(rng.integers(1, 4))) for _ in range(100)]
    elapsed = time.perf_counter() - start
    ok = max(errs) < 1e-5 and elapsed < 10
    record("criterion 1 gradient", ok, f"max rel err {max(errs):.2e}, {elapsed:.1f}s")
    assert ok


def test_inactive_coordinates_are_ignored(record):
    rng = np.random.default_rng(2)
    results = [zero_importance_check(rng, int(rng.integers(1, 7)), int(rng.integers(1, 4)), int(rng.integers(1, 4)))
               for _ in range(200)]
    inv = all(r[0] for r in results)
    nz = all(r[1] for r in results)
    record("criterion 2 zero-importance invariance", inv and nz,
           f"invariance {inv}, nonzero active partial {nz} over 200 states")
    assert inv and nz


def test_correlation_matrices_valid(record):
    rng = np.random.default_rng(3)
    worst_diag, worst_eig, sym = 0.0, np.inf, True
    for p in range(1, 9):
        for _ in range(10_000):
            s, d, e = correlation_validity(rng, p)
            sym &= s
            worst_diag = max(worst_diag, d)
            worst_eig = min(worst_eig, e)
    ok = sym and worst_diag <= 1e-12 and worst_eig >= -1e-10
    record("criterion 3 correlation validity", ok,
           f"symmetric {sym}, max |diag-1| {worst_diag:.1e}, min eig {worst_eig:.2e}")
    assert ok


def test_conjugate_steps_match_conditionals(record):
    z = conjugate_oracles(N=20000, seed=7)
    worst = max(z.values())
    ok = worst <= 3.0
    record("criterion 4 conjugate oracles", ok, ", ".join(f"{k} |z|={v:.2f}" for k, v in z.items()))
    assert ok


def test_indicator_conditionals_exact(record):
    worst = max(kuo_mallick_errors(seed) for seed in range(100))
    ok = worst <= 1e-12
    record("criterion 5 indicator enumeration", ok, f"max abs diff {worst:.1e} over 100 instances")
    assert ok


# -- desk-scale benchmark ------------------------------------------------------------

BENCH_SEEDS = (1, 2, 3, 4, 5)


def _benchmark_replicate(seed):
    gs = contiguous_groups(5, 9)
    data, truth = gen_dataset(100, gs, seed, xi_group=4)
    test = split_entries(data.mask, 0.7, seed)
    train = data.with_missing(test)
    res = fit(train, gs, SamplerConfig(burn_in=1000, samples=1000, seed=seed))
    flags = np.zeros(gs.p, dtype=bool)
    flags[truth.active] = True
    auc = roc_auc(res.summary().predictor_prob, flags)[2]
    mse = prediction_mse(fitted_values(res.chain), data.Y, test)
    ridge = ridge_baseline(data.X, train.Y, data.Y, test)
    err = loading_error(scaled_loading(res.chain), truth.Lambda0)
    return {"auc": auc, "ratio": mse / ridge, "loading": err}


@pytest.fixture(scope="module")
def benchmark():
    start = time.perf_counter()
    reps = [_benchmark_replicate(s) for s in BENCH_SEEDS]
    return reps, time.perf_counter() - start


def test_benchmark_selection_auc(benchmark, record):
    reps, elapsed = benchmark
    aucs = [r["auc"] for r in reps]
    ok = np.mean(aucs) >= 0.90
    record("criterion 6a selection AUC", ok,
           f"mean {np.mean(aucs):.3f} (replicates {', '.join(f'{a:.3f}' for a in aucs)}), {elapsed:.0f}s")
    assert ok


def test_benchmark_prediction_ratio(benchmark, record):
    ratios = [r["ratio"] for r in benchmark[0]]
    ok = all(r <= 0.8 for r in ratios)
    record("criterion 6b MSE vs ridge", ok, f"ratios {', '.join(f'{r:.3f}' for r in ratios)}")
    assert ok


def test_benchmark_loading_recovery(benchmark, record):
    errs = [r["loading"] for r in benchmark[0]]
    ok = all(e < 0.35 for e in errs)
    record("criterion 6c loading error", ok, f"errors {', '.join(f'{e:.3f}' for e in errs)}")
    assert ok


# -- calibration ------------------------------------------------------------------------------

def _within(rate, level, reps):
    return abs(rate - level) <= 3 * np.sqrt(level * (1 - level) / reps)


def test_screens_calibrated(record):
    rng = np.random.default_rng(7)
    reps = 1000
    corr = np.mean([correlation_screen(rng.normal(size=(30, 1)), rng.normal(size=(30, 1))).flags[0, 0]
                    for _ in range(reps)])
    one = GroupStructure([[0, 1, 2]])
    grp = np.mean([group_screen(rng.normal(size=(30, 3)), rng.normal(size=(30, 1)), one).flags[0, 0]
                   for _ in range(reps)])
    gs = contiguous_groups(3, 3)
    perfect = True
    for _ in range(100):
        X = rng.uniform(size=(30, 9))
        Y = np.column_stack([X[:, 4], X[:, 6:9] @ rng.normal(size=3)])
        perfect &= 4 in correlation_screen(X, Y).selected
        perfect &= 2 in group_screen(X, Y, gs).selected
    ok = _within(corr, 0.01, reps) and _within(grp, 0.05, reps) and perfect
    record("criterion 7 screening calibration", ok,
           f"null flag rates {corr:.3f} (0.01), {grp:.3f} (0.05); perfect signal always kept {perfect}")
    assert ok


def test_null_inclusion_matches_prior(record):
    gs = contiguous_groups(5, 3)
    means = []
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        data = Dataset(rng.uniform(size=(50, gs.p)), rng.normal(size=(50, 2)))
        chain = run_chain(data, gs, 3, SamplerConfig(burn_in=500, samples=1000, seed=seed))
        means.append(chain.draws["gamma"].mean())
    m = np.array(means)
    se = m.std(ddof=1) / np.sqrt(m.size)
    ok = abs(m.mean() - 1 / gs.M) <= 3 * se
    record("criterion 8 null inclusion", ok,
           f"mean P(gamma=1) {m.mean():.3f} +- {se:.3f} vs 1/M = {1 / gs.M:.3f}")
    assert ok


def test_runs_are_bitwise_reproducible(tmp_path, record):
    def run(tag):
        root = tmp_path / tag
        args = ["--n", "40", "--M", "3", "--group-size", "5", "--xi-group", "2", "--seed", "5"]
        assert cli.main(["simulate", *args, "--out", str(root / "data")]) == 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert cli.main(["fit", "--data", str(root / "data"), "--out", str(root / "chain"),
                             "--burn-in", "200", "--samples", "100", "--seed", "11"]) == 0
        assert cli.main(["evaluate", "--chain", str(root / "chain"), "--data", str(root / "data"),
                         "--out", str(root / "eval")]) == 0
        return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    a, b = run("a"), run("b")
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    record("criterion 9 determinism", same, f"{len(a)} files compared byte for byte")
    assert same
