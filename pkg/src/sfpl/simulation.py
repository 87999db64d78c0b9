"""Simulation harness: data generation, comparator fits and benchmark metrics.

Coefficients for a baseline group are drawn uniformly on (-1, 1) with a
chosen fraction zeroed; the other groups copy the baseline and resample a
chosen fraction of entries, controlling between-group heterogeneity.
Covariates are standard normal, each ranker receives a uniformly random
m-subset of the catalog, and rankings are drawn stage by stage with
probabilities proportional to the object worths. The exhaustive enumeration
of ordering probabilities doubles as the correctness oracle for both the
sampler and the likelihood.
"""

from __future__ import annotations

import itertools
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data_model import (
    ConvergenceWarning,
    CovariateMatrix,
    CoverageWarning,
    PartialRanking,
    RankingDataset,
    ValidationError,
)
from .likelihood import CoefficientSet
from .optimizer import initial_estimate
from .prediction import RankTable, aggregate_ranking, worth_ranks
from .selection import build_grid, select

STUDY_METHODS = ("SFPL", "PL", "PPL")


@dataclass(frozen=True)
class SimulationConfig:
    """Parameters of one simulated scenario.

    ``eta`` is the approximate fraction of zeroed baseline coefficients and
    ``delta`` the approximate fraction of coefficients resampled per non-base
    group. ``n_new`` objects receive covariates but no ranking data and are
    scored only through predicted ranks.
    """

    K: int = 4
    M: int = 20
    m: int = 3
    p: int = 5
    n_k: int = 100
    eta: float = 0.25
    delta: float = 0.25
    n_new: int = 0
    replicate_seed: int = 0

    def __post_init__(self):
        if self.K < 1 or self.n_k < 1 or self.p < 1 or self.n_new < 0:
            raise ValidationError("K, n_k, p must be >= 1 and n_new >= 0")
        if not (1 <= self.m <= self.M):
            raise ValidationError(f"need 1 <= m <= M, got m={self.m}, M={self.M}")
        if self.M < 2:
            raise ValidationError("M must be at least 2")
        if not (0.0 <= self.eta <= 1.0 and 0.0 <= self.delta <= 1.0):
            raise ValidationError("eta and delta must lie in [0, 1]")


@dataclass(frozen=True)
class MetricsReport:
    """Metrics of one fitted method on one replicate."""

    method: str
    rmse: float
    f1: float
    rcr: float
    rcr_pred: float
    seconds: float


@dataclass(frozen=True, eq=False)
class SimulatedReplicate:
    """One generated dataset with its ground truth.

    ``covariates`` covers the M catalog objects; ``new_covariates`` holds the
    held-out prediction objects (None when n_new = 0). ``true_table`` ranks
    all M + n_new objects by their true worths.
    """

    dataset: RankingDataset
    covariates: CovariateMatrix
    coefficients: CoefficientSet
    true_table: RankTable
    new_labels: tuple
    new_covariates: np.ndarray


def generate_coefficients(cfg: SimulationConfig, rng) -> CoefficientSet:
    """Draw the true coefficient matrix: sparse baseline plus resampled groups."""
    p = cfg.p
    base = rng.uniform(-1.0, 1.0, size=p)
    n_zero = int(np.floor(cfg.eta * p))
    if n_zero > 0:
        base[rng.choice(p, size=n_zero, replace=False)] = 0.0
    B = np.empty((cfg.K, p))
    B[0] = base
    n_hetero = int(np.floor(cfg.delta * p))
    for k in range(1, cfg.K):
        row = base.copy()
        if n_hetero > 0:
            pos = rng.choice(p, size=n_hetero, replace=False)
            row[pos] = rng.uniform(-1.0, 1.0, size=n_hetero)
        B[k] = row
    return CoefficientSet(B)


def _sample_orderings(scores: np.ndarray, rng) -> np.ndarray:
    """Draw one ranking per row by stage-wise categorical sampling.

    ``scores[i]`` are the log-worths of row i's m objects; the return value
    holds column indices, most-preferred first. Distribution matches the
    sequential-choice model exactly.
    """
    scores = np.asarray(scores, dtype=float)
    n, m = scores.shape
    weights = np.exp(scores - scores.max(axis=1, keepdims=True))
    out = np.empty((n, m), dtype=np.int64)
    rows = np.arange(n)
    for stage in range(m):
        cum = np.cumsum(weights, axis=1)
        u = rng.random(n) * cum[:, -1]
        pick = (cum <= u[:, None]).sum(axis=1)
        out[:, stage] = pick
        weights[rows, pick] = 0.0
    return out


def sample_partial_ranking(beta, X: CovariateMatrix, subset, rng) -> PartialRanking:
    """Sample one ranking of ``subset`` under the worths exp(x beta)."""
    subset = np.asarray(subset, dtype=np.int64)
    if len(np.unique(subset)) != subset.size:
        raise ValidationError("subset must contain distinct object indices")
    scores = (X.values[subset] @ np.asarray(beta, dtype=float))[None, :]
    positions = _sample_orderings(scores, rng)[0]
    return PartialRanking(tuple(int(subset[j]) for j in positions))


def generate_dataset(cfg: SimulationConfig, rng) -> SimulatedReplicate:
    """Generate one replicate: coefficients, covariates, rankings, truth."""
    B = generate_coefficients(cfg, rng)
    total = cfg.M + cfg.n_new
    X_full = rng.standard_normal((total, cfg.p))
    labels = tuple(f"obj{i + 1:03d}" for i in range(cfg.M))
    new_labels = tuple(f"new{i + 1:03d}" for i in range(cfg.n_new))
    var_names = tuple(f"x{j + 1}" for j in range(cfg.p))
    scores_full = X_full @ B.B.T  # (total, K)

    group_labels = tuple(f"g{k + 1}" for k in range(cfg.K))
    orderings = []
    for k in range(cfg.K):
        subsets = np.argsort(rng.random((cfg.n_k, cfg.M)), axis=1, kind="stable")[
            :, : cfg.m
        ]
        stage_scores = scores_full[:, k][subsets]
        positions = _sample_orderings(stage_scores, rng)
        picked = np.take_along_axis(subsets, positions, axis=1)
        orderings.append([tuple(int(v) for v in row) for row in picked])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoverageWarning)
        dataset = RankingDataset.from_orderings(group_labels, orderings, cfg.M)

    covariates = CovariateMatrix(X_full[: cfg.M], var_names)
    flags = np.concatenate(
        [np.zeros(cfg.M, dtype=bool), np.ones(cfg.n_new, dtype=bool)]
    )
    true_table = aggregate_ranking(
        np.exp(scores_full.T),
        labels + new_labels,
        group_labels=group_labels,
        predicted_only=flags,
    )
    return SimulatedReplicate(
        dataset=dataset,
        covariates=covariates,
        coefficients=B,
        true_table=true_table,
        new_labels=new_labels,
        new_covariates=X_full[cfg.M :] if cfg.n_new else None,
    )


def enumerate_ranking_distribution(beta, X: CovariateMatrix, subset) -> dict:
    """Exact probability of every ordering of ``subset`` (m <= 6).

    Brute-force realization of the sequential-choice probabilities, used as
    the oracle for the sampler and the likelihood. Values sum to 1.
    """
    subset = tuple(int(i) for i in subset)
    m = len(subset)
    if m > 6:
        raise ValidationError("enumeration supports at most 6 objects (720 orderings)")
    if len(set(subset)) != m:
        raise ValidationError("subset must contain distinct object indices")
    scores = X.values[list(subset)] @ np.asarray(beta, dtype=float)
    w = np.exp(scores - scores.max())
    out = {}
    for perm in itertools.permutations(range(m)):
        prob = 1.0
        remaining = w[list(perm)]
        for j in range(m):
            prob *= remaining[j] / remaining[j:].sum()
        out[tuple(subset[j] for j in perm)] = prob
    return out


def _as_matrix(B) -> np.ndarray:
    return np.asarray(getattr(B, "B", B), dtype=float)


def rmse(B_true, B_hat) -> float:
    """Root mean square coefficient error over all K*p entries."""
    T, H = _as_matrix(B_true), _as_matrix(B_hat)
    if T.shape != H.shape:
        raise ValidationError("coefficient shapes differ")
    return float(np.sqrt(np.mean((T - H) ** 2)))


def f1(B_true, B_hat, zero_threshold: float = 1e-4, literal_tn: bool = False) -> float:
    """Signal/noise separation score for the estimated support.

    Truly nonzero coefficients are positives; an estimate counts as positive
    when its magnitude reaches ``zero_threshold``. The standard form uses
    2tp/(2tp + fp + fn); ``literal_tn`` swaps the false negatives for true
    negatives. A perfectly recovered empty support scores 1.
    """
    T, H = _as_matrix(B_true), _as_matrix(B_hat)
    if T.shape != H.shape:
        raise ValidationError("coefficient shapes differ")
    true_pos_mask = T != 0.0
    est_pos_mask = np.abs(H) >= zero_threshold
    tp = int(np.sum(true_pos_mask & est_pos_mask))
    fp = int(np.sum(~true_pos_mask & est_pos_mask))
    fn = int(np.sum(true_pos_mask & ~est_pos_mask))
    tn = int(np.sum(~true_pos_mask & ~est_pos_mask))
    denom = 2 * tp + fp + (tn if literal_tn else fn)
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


def rcr(true_ranks: np.ndarray, est_ranks: np.ndarray) -> float:
    """Fraction of objects whose estimated rank is exactly right, group-averaged."""
    true_ranks = np.asarray(true_ranks)
    est_ranks = np.asarray(est_ranks)
    if true_ranks.shape != est_ranks.shape:
        raise ValidationError("rank matrices must have equal shapes")
    return float(np.mean(true_ranks == est_ranks))


@dataclass(eq=False)
class StudyResult:
    """Aggregated study table plus per-replicate values and failures."""

    rows: list
    replicate_rows: list
    failures: list


def _fit_method(method, rep: SimulatedReplicate, options) -> CoefficientSet:
    data, X = rep.dataset, rep.covariates
    if method == "SFPL":
        B0 = initial_estimate(data, X)
        grid = build_grid(
            data,
            X,
            n_s=options["n_s"],
            n_f=options["n_f"],
            epsilon=options["epsilon"],
            zero_threshold=options["zero_threshold"],
            xi=options["xi"],
            init=B0,
        )
        result = select(
            data,
            X,
            grid,
            criterion=options["criterion"],
            epsilon=options["epsilon"],
            zero_threshold=options["zero_threshold"],
            xi=options["xi"],
            init=B0,
        )
        return result.chosen_fit.B_hat
    if method == "PL":
        return initial_estimate(data, X)
    if method == "PPL":
        pooled = initial_estimate(data.pooled(), X)
        return CoefficientSet(np.tile(pooled.B, (data.n_groups, 1)))
    raise ValidationError(f"unknown method {method!r}")


def _run_replicate(cfg: SimulationConfig, methods, seed_tuple, options):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed_tuple))
    rep = generate_dataset(cfg, rng)
    X = rep.covariates
    true_full_worths = rep.true_table.worths
    true_cat_ranks = worth_ranks(true_full_worths[:, : cfg.M])
    reports = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for method in methods:
            t0 = time.perf_counter()
            B_hat = _fit_method(method, rep, options)
            seconds = time.perf_counter() - t0
            est_cat_scores = (X.values @ B_hat.B.T).T
            rcr_value = rcr(true_cat_ranks, worth_ranks(est_cat_scores))
            if cfg.n_new:
                # Rank correctness over the whole aggregated list once the
                # predicted-only objects are merged in (their presence also
                # shifts the catalog objects' positions).
                full_scores = (
                    np.vstack([X.values, rep.new_covariates]) @ B_hat.B.T
                ).T
                est_full_ranks = worth_ranks(full_scores)
                rcr_pred = rcr(rep.true_table.ranks, est_full_ranks)
            else:
                rcr_pred = float("nan")
            reports.append(
                MetricsReport(
                    method=method,
                    rmse=rmse(rep.coefficients, B_hat),
                    f1=(
                        f1(rep.coefficients, B_hat, options["zero_threshold"])
                        if method == "SFPL"
                        else float("nan")
                    ),
                    rcr=rcr_value,
                    rcr_pred=rcr_pred,
                    seconds=seconds,
                )
            )
    return reports


def _replicate_task(task):
    scen_idx, rep_idx, cfg, methods, seed, options = task
    try:
        reports = _run_replicate(cfg, methods, (seed, scen_idx, rep_idx), options)
        return scen_idx, rep_idx, reports, None
    except Exception as exc:  # noqa: BLE001 - failures are recorded, not fatal
        return scen_idx, rep_idx, None, f"{type(exc).__name__}: {exc}"


def _mean_se(values):
    arr = np.asarray(values, dtype=float)
    if arr.size == 0 or np.all(np.isnan(arr)):
        return float("nan"), float("nan")
    mean = float(np.mean(arr))
    se = float(np.std(arr, ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else float("nan")
    return mean, se


def run_study(
    scenarios,
    replicates: int = 50,
    methods=STUDY_METHODS,
    seed: int = 0,
    threads: int = 1,
    n_s: int = 10,
    n_f: int = 10,
    criterion: str = "bic",
    zero_threshold: float = 1e-4,
    epsilon: float = 1e-5,
    xi: float = 1e-8,
) -> StudyResult:
    """Run every scenario for the requested replicates and aggregate metrics.

    ``scenarios`` is a list of (name, SimulationConfig) pairs. Each
    (scenario, replicate) pair draws from its own deterministic random stream,
    so the study table is identical for any worker count. Failed replicates
    are excluded from aggregation and recorded.
    """
    scenarios = list(scenarios)
    methods = tuple(methods)
    for m in methods:
        if m not in STUDY_METHODS:
            raise ValidationError(f"unknown method {m!r}")
    options = {
        "n_s": n_s,
        "n_f": n_f,
        "criterion": criterion,
        "zero_threshold": zero_threshold,
        "epsilon": epsilon,
        "xi": xi,
    }
    tasks = [
        (scen_idx, rep_idx, cfg, methods, int(seed), options)
        for scen_idx, (_, cfg) in enumerate(scenarios)
        for rep_idx in range(replicates)
    ]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_replicate_task, tasks, chunksize=1))
    else:
        outcomes = [_replicate_task(t) for t in tasks]

    by_scenario = {}
    replicate_rows = []
    failures = []
    for scen_idx, rep_idx, reports, error in sorted(outcomes, key=lambda o: o[:2]):
        name = scenarios[scen_idx][0]
        if error is not None:
            failures.append((name, rep_idx, error))
            continue
        by_scenario.setdefault(scen_idx, []).append(reports)
        for rep in reports:
            replicate_rows.append(
                {
                    "scenario": name,
                    "replicate": rep_idx,
                    "method": rep.method,
                    "rmse": rep.rmse,
                    "f1": rep.f1,
                    "rcr": rep.rcr,
                    "rcr_pred": rep.rcr_pred,
                    "seconds": rep.seconds,
                }
            )

    rows = []
    for scen_idx, (name, cfg) in enumerate(scenarios):
        collected = by_scenario.get(scen_idx, [])
        for pos, method in enumerate(methods):
            picks = [reports[pos] for reports in collected]
            rmse_mean, rmse_se = _mean_se([r.rmse for r in picks])
            f1_mean, f1_se = _mean_se([r.f1 for r in picks])
            rcr_mean, rcr_se = _mean_se([r.rcr for r in picks])
            pred_mean, pred_se = _mean_se([r.rcr_pred for r in picks])
            seconds_mean, _ = _mean_se([r.seconds for r in picks])
            rows.append(
                {
                    "scenario": name,
                    "K": cfg.K,
                    "M": cfg.M,
                    "m": cfg.m,
                    "p": cfg.p,
                    "n_k": cfg.n_k,
                    "eta": cfg.eta,
                    "delta": cfg.delta,
                    "n_new": cfg.n_new,
                    "method": method,
                    "rmse_mean": rmse_mean,
                    "rmse_se": rmse_se,
                    "f1_mean": f1_mean,
                    "f1_se": f1_se,
                    "rcr_mean": rcr_mean,
                    "rcr_se": rcr_se,
                    "rcr_pred_mean": pred_mean,
                    "rcr_pred_se": pred_se,
                    "seconds_mean": seconds_mean,
                    "replicates_used": len(picks),
                }
            )
    return StudyResult(rows=rows, replicate_rows=replicate_rows, failures=failures)


def scenario_preset(name: str) -> SimulationConfig:
    """Resolve a named scenario like ``table1-n100-p5``.

    Families: ``table1`` (recovery study), ``table2`` (adds 5 prediction
    objects), ``appendix-k{2,6}`` (group count variants, 5 prediction
    objects) and ``appendix-m{5,10}`` (longer rankings over 10 objects,
    5 prediction objects). Tokens ``n<int>`` and ``p<int>`` set the group
    size and variable count; optional ``d<pct>``/``e<pct>`` override the
    heterogeneity and sparsity fractions. M is 20 (or p when p >= 25) unless
    the family pins it.
    """
    tokens = name.strip().lower().split("-")
    if not tokens:
        raise ValidationError("empty scenario name")
    family = tokens[0]
    known = {"table1", "table2", "appendix"}
    if family not in known:
        raise ValidationError(
            f"unknown scenario family {family!r}; expected one of {sorted(known)}"
        )
    fields = {"K": 4, "m": 3, "eta": 0.25, "delta": 0.25, "n_new": 0}
    pinned_m = None
    rest = tokens[1:]
    if family == "table2":
        fields["n_new"] = 5
    if family == "appendix":
        if not rest:
            raise ValidationError("appendix scenarios need a k<K> or m<m> token")
        fields["n_new"] = 5
        head = rest[0]
        if head.startswith("k") and head[1:].isdigit():
            fields["K"] = int(head[1:])
            rest = rest[1:]
        elif head.startswith("m") and head[1:].isdigit():
            pinned_m = int(head[1:])
            rest = rest[1:]
        else:
            raise ValidationError(f"unrecognized appendix token {head!r}")
    n_k = None
    p = None
    for token in rest:
        key, value = token[0], token[1:]
        if not value.isdigit():
            raise ValidationError(f"unrecognized scenario token {token!r}")
        if key == "n":
            n_k = int(value)
        elif key == "p":
            p = int(value)
        elif key == "d":
            fields["delta"] = int(value) / 100.0
        elif key == "e":
            fields["eta"] = int(value) / 100.0
        else:
            raise ValidationError(f"unrecognized scenario token {token!r}")
    if n_k is None or p is None:
        raise ValidationError("scenario name must include n<rankers> and p<variables>")
    if pinned_m is not None:
        fields["m"] = pinned_m
        fields["M"] = 10
    else:
        fields["M"] = p if p >= 25 else 20
    return SimulationConfig(p=p, n_k=n_k, **fields)
