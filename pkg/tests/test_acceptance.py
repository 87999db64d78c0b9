"""Acceptance criteria, one test per criterion, one printed verdict line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines.
The two study-scale criteria run 50 replicates each and take a few minutes.
"""

import itertools
import math
import time
from collections import Counter

import numpy as np

from sfpl import (
    CoefficientSet,
    PenaltyConfig,
    enumerate_ranking_distribution,
    fit,
    gradient,
    hessian,
    initial_estimate,
    neg_log_likelihood,
    run_study,
    scenario_preset,
    smoothed_objective,
    surrogate_objective,
)
from sfpl.cli import main
from sfpl.simulation import _sample_orderings

from conftest import covariates, fd_gradient, fd_hessian, make_instance, scipy_mle

THREADS = 2
_dir_counter = itertools.count()


def verdict(num, name, ok, detail):
    print(f"ACCEPTANCE {num:2d} [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"criterion {num} failed: {detail}"


def test_criterion_1_derivative_oracles():
    rng = np.random.default_rng(11)
    start = time.perf_counter()
    worst_g, worst_h = 0.0, 0.0
    for _ in range(100):
        K = int(rng.integers(1, 5))
        p = int(rng.integers(1, 11))
        M = int(rng.integers(max(3, p), 16))
        data, X, _ = make_instance(
            int(rng.integers(1 << 30)), K=K, M=M, p=p, n_k=int(rng.integers(3, 8)), m=3
        )
        B = CoefficientSet(rng.normal(scale=0.8, size=(K, p)))
        g = gradient(B, data, X)
        g_ref = fd_gradient(B, data, X, step=1e-5)
        worst_g = max(worst_g, np.abs(g - g_ref).max() / max(1.0, np.abs(g_ref).max()))
        H = hessian(B, data, X)
        h_ref = fd_hessian(B, data, X, step=1e-5)
        worst_h = max(worst_h, np.abs(H - h_ref).max() / max(1.0, np.abs(h_ref).max()))
    elapsed = time.perf_counter() - start
    ok = worst_g < 1e-6 and worst_h < 1e-4 and elapsed < 60.0
    verdict(
        1,
        "gradient/Hessian vs finite differences",
        ok,
        f"max rel err grad {worst_g:.2e} (<1e-6), hess {worst_h:.2e} (<1e-4), "
        f"{elapsed:.1f}s (<60s)",
    )


def test_criterion_2_likelihood_normalization():
    rng = np.random.default_rng(22)
    worst_sum, worst_nll = 0.0, 0.0
    for _ in range(100):
        p = int(rng.integers(1, 5))
        M = int(rng.integers(5, 12))
        X = covariates(rng.normal(size=(M, p)))
        beta = rng.normal(size=p)
        m = int(rng.integers(2, 6))
        subset = tuple(rng.choice(M, size=m, replace=False).tolist())
        dist = enumerate_ranking_distribution(beta, X, subset)
        worst_sum = max(worst_sum, abs(sum(dist.values()) - 1.0))

        data, Xd, _ = make_instance(
            int(rng.integers(1 << 30)), K=2, M=M, p=p, n_k=4, m=min(m, M)
        )
        B = CoefficientSet(np.vstack([beta, rng.normal(size=p)]))
        total = 0.0
        for k in range(2):
            for r in data.groups[k]:
                d = enumerate_ranking_distribution(B.B[k], Xd, sorted(r.ordering))
                total -= math.log(d[r.ordering])
        worst_nll = max(worst_nll, abs(total - neg_log_likelihood(B, data, Xd)))
    ok = worst_sum < 1e-10 and worst_nll < 1e-10
    verdict(
        2,
        "enumeration normalization and likelihood agreement",
        ok,
        f"max |sum-1| {worst_sum:.2e}, max |nll diff| {worst_nll:.2e} (<1e-10)",
    )


def test_criterion_3_mm_descent_and_majorization():
    rng = np.random.default_rng(33)
    instances = [
        make_instance(seed, K=2, M=6, p=3, n_k=8, m=3)[:2] for seed in range(40, 45)
    ]
    worst_rise = -np.inf
    for i in range(1000):
        data, X = instances[i % len(instances)]
        cfg = PenaltyConfig(rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0))
        result = fit(data, X, cfg, init=CoefficientSet(rng.normal(size=(2, 3))))
        trace = np.asarray(result.objective_trace)
        if trace.size > 1:
            worst_rise = max(worst_rise, float(np.diff(trace).max()))
    data, X = instances[0]
    worst_gap = np.inf
    for _ in range(1000):
        cfg = PenaltyConfig(rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0))
        B = CoefficientSet(rng.normal(scale=1.5, size=(2, 3)))
        R = CoefficientSet(rng.normal(scale=1.5, size=(2, 3)))
        gap = surrogate_objective(B, R, data, X, cfg) - smoothed_objective(B, data, X, cfg)
        worst_gap = min(worst_gap, float(gap))
    ok = worst_rise <= 1e-10 and worst_gap >= -1e-9
    verdict(
        3,
        "monotone traces over 1000 fits and majorization at 1000 probes",
        ok,
        f"max trace rise {worst_rise:.2e} (<=1e-10), min majorization gap "
        f"{worst_gap:.2e} (>=-1e-9)",
    )


def test_criterion_4_reduction_oracles():
    data, X, _ = make_instance(44, K=2, M=10, p=4, n_k=80, m=3)
    free = fit(data, X, PenaltyConfig(0.0, 0.0))
    mle_gap = np.abs(free.B_hat.B - scipy_mle(data, X)).max()

    fused = fit(data, X, PenaltyConfig(0.0, 1e6))
    pair_gap = np.abs(fused.B_hat.B[0] - fused.B_hat.B[1]).max()
    pooled_gap = np.abs(fused.B_hat.B - initial_estimate(data.pooled(), X).B).max()

    shrunk = fit(data, X, PenaltyConfig(1e6, 0.0))
    shrink_max = np.abs(shrunk.B_hat.B).max()

    ok = mle_gap < 1e-6 and pair_gap < 1e-3 and pooled_gap < 1e-3 and shrink_max < 1e-3
    verdict(
        4,
        "unpenalized, fully-fused and fully-shrunk limits",
        ok,
        f"MLE gap {mle_gap:.2e} (<1e-6), pair gap {pair_gap:.2e} (<1e-3), "
        f"pooled gap {pooled_gap:.2e} (<1e-3), shrink max {shrink_max:.2e} (<1e-3)",
    )


def test_criterion_5_recovery_study_cell():
    result = run_study(
        [("table1-n100-p5", scenario_preset("table1-n100-p5"))],
        replicates=50,
        seed=1,
        threads=THREADS,
    )
    by_method = {row["method"]: row for row in result.rows}
    sfpl_rmse = by_method["SFPL"]["rmse_mean"]
    pl_rmse = by_method["PL"]["rmse_mean"]
    ppl_rmse = by_method["PPL"]["rmse_mean"]
    sfpl_f1 = by_method["SFPL"]["f1_mean"]
    ok = (
        0.09 <= sfpl_rmse <= 0.15
        and 0.11 <= pl_rmse <= 0.17
        and 0.22 <= ppl_rmse <= 0.32
        and 0.87 <= sfpl_f1 <= 0.97
        and not result.failures
    )
    verdict(
        5,
        "recovery study means (published: 0.12 / 0.14 / 0.27, F1 0.92)",
        ok,
        f"RMSE SFPL {sfpl_rmse:.3f} in [0.09,0.15], PL {pl_rmse:.3f} in [0.11,0.17], "
        f"PPL {ppl_rmse:.3f} in [0.22,0.32], F1 {sfpl_f1:.3f} in [0.87,0.97]",
    )


def test_criterion_6_prediction_study_cell():
    result = run_study(
        [("table2-n100-p5", scenario_preset("table2-n100-p5"))],
        replicates=50,
        seed=1,
        threads=THREADS,
    )
    by_method = {row["method"]: row for row in result.rows}
    got = {m: by_method[m]["rcr_pred_mean"] for m in ("SFPL", "PL", "PPL")}
    target = {"SFPL": 0.44, "PL": 0.37, "PPL": 0.18}
    ok = all(abs(got[m] - target[m]) <= 0.06 for m in target) and not result.failures
    verdict(
        6,
        "held-out rank prediction means (published: 0.44 / 0.37 / 0.18)",
        ok,
        ", ".join(f"{m} {got[m]:.3f} (target {target[m]:.2f}+-0.06)" for m in target),
    )


def test_criterion_7_high_dimensional_ordering():
    result = run_study(
        [("table1-n100-p25", scenario_preset("table1-n100-p25"))],
        replicates=50,
        seed=1,
        threads=THREADS,
    )
    by_method = {row["method"]: row for row in result.rows}
    sfpl, pl, ppl = (
        by_method["SFPL"]["rmse_mean"],
        by_method["PL"]["rmse_mean"],
        by_method["PPL"]["rmse_mean"],
    )
    ok = sfpl < pl and sfpl < ppl
    verdict(
        7,
        "25-variable ordering (published: 0.30 vs 0.85 vs 0.46)",
        ok,
        f"SFPL {sfpl:.3f} < PL {pl:.3f} and < PPL {ppl:.3f}",
    )


def test_criterion_8_identifiability_guard(tmp_path):
    rng = np.random.default_rng(88)

    def write_inputs(X, name):
        M, p = X.shape
        labels = [f"v{i}" for i in range(M)]
        cov = tmp_path / f"{name}_cov.csv"
        with open(cov, "w") as fh:
            fh.write("object," + ",".join(f"x{j}" for j in range(p)) + "\n")
            for lab, row in zip(labels, X):
                fh.write(lab + "," + ",".join(repr(float(v)) for v in row) + "\n")
        rank = tmp_path / f"{name}_rank.csv"
        with open(rank, "w") as fh:
            fh.write("group,ranker,position,object\n")
            for r in range(6):
                picks = rng.choice(M, size=3, replace=False)
                for pos, obj in enumerate(picks, start=1):
                    fh.write(f"g,r{r},{pos},{labels[obj]}\n")
        return rank, cov

    def run_fit(rank, cov, extra=()):
        return main(
            ["fit", "--rankings", str(rank), "--covariates", str(cov),
             "--no-standardize", "--lambda-s", "0.5", "--lambda-f", "0",
             "--out", str(tmp_path / f"out{next(_dir_counter)}"), *extra]
        )

    wide = run_fit(*write_inputs(rng.normal(size=(4, 6)), "wide"))
    base = rng.normal(size=(8, 2))
    collinear = run_fit(
        *write_inputs(np.column_stack([base, base[:, 0] * 2.0]), "collinear")
    )
    full = run_fit(*write_inputs(rng.normal(size=(8, 3)), "full"))
    ok = wide == 3 and collinear == 3 and full == 0
    verdict(
        8,
        "rank-deficient covariates refused with exit 3, full rank accepted",
        ok,
        f"p>M exit {wide} (want 3), collinear exit {collinear} (want 3), "
        f"full-rank exit {full} (want 0)",
    )


def test_criterion_9_simulate_determinism(tmp_path):
    def run(out, threads):
        return main(
            ["simulate", "--K", "2", "--M", "6", "--m", "3", "--p", "3",
             "--n-k", "10", "--replicates", "8", "--seed", "5",
             "--threads", threads, "--grid-size-s", "3", "--grid-size-f", "3",
             "--out", str(out)]
        )

    assert run(tmp_path / "w1", "1") == 0
    assert run(tmp_path / "w8", "8") == 0
    a = (tmp_path / "w1" / "study.csv").read_bytes()
    b = (tmp_path / "w8" / "study.csv").read_bytes()
    ra = (tmp_path / "w1" / "rcr_replicates.csv").read_bytes()
    rb = (tmp_path / "w8" / "rcr_replicates.csv").read_bytes()
    ok = a == b and ra == rb
    verdict(
        9,
        "study tables byte-identical at 1 and 8 workers",
        ok,
        f"study.csv equal: {a == b}, rcr_replicates.csv equal: {ra == rb}",
    )


def test_criterion_10_sampler_fidelity():
    rng = np.random.default_rng(1010)
    worst_tv = 0.0
    for _ in range(20):
        p = int(rng.integers(1, 4))
        X = covariates(rng.normal(size=(8, p)))
        beta = rng.normal(size=p)
        subset = tuple(rng.choice(8, size=3, replace=False).tolist())
        dist = enumerate_ranking_distribution(beta, X, subset)
        scores = np.tile(X.values[list(subset)] @ beta, (100_000, 1))
        draws = _sample_orderings(scores, rng)
        counts = Counter(tuple(subset[j] for j in row) for row in draws.tolist())
        tv = 0.5 * sum(
            abs(counts.get(perm, 0) / 100_000 - prob) for perm, prob in dist.items()
        )
        worst_tv = max(worst_tv, tv)
    ok = worst_tv < 0.01
    verdict(
        10,
        "stagewise sampler vs enumeration, 20 draws x 1e5 samples",
        ok,
        f"max total variation {worst_tv:.4f} (<0.01)",
    )
