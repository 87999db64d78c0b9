"""Penalty grid construction and information-criterion model selection.

Both criteria add twice the negative log likelihood (the minimized quantity)
instead of subtracting twice the log likelihood, and use the number of
numerically nonzero coefficients as the degrees of freedom. The grid anchors
at 0 on both axes (the unpenalized fit) and tops out where the fit is fully
shrunk (lambda_s axis) or fully fused (lambda_f axis).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data_model import CovariateMatrix, IdentifiabilityError, RankingDataset, check_identifiability
from .likelihood import CoefficientSet
from .optimizer import FitResult, fit, initial_estimate
from .penalty import PenaltyConfig

DEFAULT_ZERO_THRESHOLD = 1e-4
DEFAULT_FUSION_THRESHOLD = 1e-4
_DOUBLING_CAP = 2.0**60


@dataclass(frozen=True)
class PenaltyGrid:
    """Sorted shrinkage and fusion penalty values; both axes start at 0."""

    lambda_s_values: tuple
    lambda_f_values: tuple

    def __post_init__(self):
        for name, values in (
            ("lambda_s_values", self.lambda_s_values),
            ("lambda_f_values", self.lambda_f_values),
        ):
            vals = tuple(float(v) for v in values)
            if not vals or vals[0] != 0.0:
                raise ValueError(f"{name} must start at exactly 0")
            if any(v < 0 or not np.isfinite(v) for v in vals):
                raise ValueError(f"{name} must be finite and nonnegative")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"{name} must be strictly increasing")
            object.__setattr__(self, name, vals)

    def cells(self):
        """All (lambda_s, lambda_f) pairs in deterministic row-major order."""
        return [
            (ls, lf) for lf in self.lambda_f_values for ls in self.lambda_s_values
        ]


@dataclass(eq=False)
class SelectionResult:
    """Fits and criterion scores over the grid plus the winning cell."""

    fits: dict
    ic_table: dict
    chosen: tuple
    criterion: str
    zero_threshold: float
    failures: dict = field(default_factory=dict)

    @property
    def chosen_fit(self) -> FitResult:
        return self.fits[self.chosen]


def effective_df(B_hat: CoefficientSet, zero_threshold: float = DEFAULT_ZERO_THRESHOLD) -> int:
    """Number of coefficients at or above the zero threshold in magnitude."""
    return int(np.count_nonzero(np.abs(B_hat.B) >= zero_threshold))


def aic(fit_result: FitResult, data: RankingDataset,
        zero_threshold: float = DEFAULT_ZERO_THRESHOLD) -> float:
    """2r + 2*nll with r the count of nonzero coefficients."""
    r = effective_df(fit_result.B_hat, zero_threshold)
    return 2.0 * r + 2.0 * fit_result.final_nll


def bic(fit_result: FitResult, data: RankingDataset,
        zero_threshold: float = DEFAULT_ZERO_THRESHOLD) -> float:
    """log(total rankers) * r + 2*nll with r the count of nonzero coefficients."""
    r = effective_df(fit_result.B_hat, zero_threshold)
    n_total = sum(data.group_sizes)
    return math.log(n_total) * r + 2.0 * fit_result.final_nll


def _max_pairwise_diff(Bm: np.ndarray) -> float:
    K = Bm.shape[0]
    worst = 0.0
    for k in range(K):
        for k2 in range(k + 1, K):
            worst = max(worst, float(np.abs(Bm[k] - Bm[k2]).max()))
    return worst


def _doubling_search(data, X, init, make_cfg, achieved, fit_opts):
    """Double lambda from 1 until ``achieved`` holds for the fit; warm started."""
    lam = 1.0
    warm = init
    while lam <= _DOUBLING_CAP:
        res = fit(data, X, make_cfg(lam), init=warm, check_rank=False, **fit_opts)
        if achieved(res.B_hat.B):
            return lam
        warm = res.B_hat
        lam *= 2.0
    raise RuntimeError("penalty doubling search exceeded 2**60; data is pathological")


def _axis_values(lam_max: float, n: int) -> tuple:
    # 0 first, then log-spaced points from lam_max/1000 up to lam_max.
    if lam_max <= 0.0 or n <= 1:
        return (0.0,)
    points = np.geomspace(lam_max / 1000.0, lam_max, n - 1)
    return (0.0,) + tuple(float(v) for v in points)


def build_grid(
    data: RankingDataset,
    X: CovariateMatrix,
    n_s: int = 10,
    n_f: int = 10,
    tau=None,
    epsilon: float = 1e-5,
    zero_threshold: float = DEFAULT_ZERO_THRESHOLD,
    fusion_threshold: float = DEFAULT_FUSION_THRESHOLD,
    xi: float = 1e-8,
    max_iter: int = 500,
    init: CoefficientSet = None,
    force: bool = False,
) -> PenaltyGrid:
    """Build the penalty grid from the data.

    The top of the shrinkage axis is the first power of two at which every
    fitted coefficient falls below ``zero_threshold`` (with the fusion penalty
    off); the top of the fusion axis is the first power of two at which every
    pairwise between-group difference falls below ``fusion_threshold`` (with
    shrinkage off). Each axis holds ``n`` values: 0 followed by n-1 log-spaced
    points ending at the top. With a single group the fusion axis is just (0,).
    """
    if not force:
        report = check_identifiability(X)
        if not report.passed:
            raise IdentifiabilityError(
                f"covariate matrix has rank {report.rank} < p = {report.n_variables}"
            )
    fit_opts = {"xi": xi, "max_iter": max_iter}
    B0 = init if init is not None else initial_estimate(data, X)
    lam_s_max = _doubling_search(
        data,
        X,
        B0,
        lambda lam: PenaltyConfig(lam, 0.0, tau=tau, epsilon=epsilon),
        lambda Bm: np.abs(Bm).max() < zero_threshold,
        fit_opts,
    )
    if data.n_groups == 1:
        lam_f_max = 0.0
    else:
        lam_f_max = _doubling_search(
            data,
            X,
            B0,
            lambda lam: PenaltyConfig(0.0, lam, tau=tau, epsilon=epsilon),
            lambda Bm: _max_pairwise_diff(Bm) < fusion_threshold,
            fit_opts,
        )
    return PenaltyGrid(_axis_values(lam_s_max, n_s), _axis_values(lam_f_max, n_f))


def select(
    data: RankingDataset,
    X: CovariateMatrix,
    grid: PenaltyGrid,
    criterion: str = "bic",
    tau=None,
    epsilon: float = 1e-5,
    zero_threshold: float = DEFAULT_ZERO_THRESHOLD,
    xi: float = 1e-8,
    max_iter: int = 500,
    threads: int = 1,
    init: CoefficientSet = None,
    force: bool = False,
) -> SelectionResult:
    """Fit every grid cell and pick the cell minimizing the criterion.

    Within one fusion row the shrinkage axis is fitted left to right with warm
    starts; rows are independent and may run on separate threads. Ties are
    broken toward the larger (lambda_s, lambda_f) pair, preferring the sparser
    and more fused model. Failed cells are excluded and recorded.
    """
    if criterion not in ("aic", "bic"):
        raise ValueError("criterion must be 'aic' or 'bic'")
    if not force:
        report = check_identifiability(X)
        if not report.passed:
            raise IdentifiabilityError(
                f"covariate matrix has rank {report.rank} < p = {report.n_variables}"
            )
    B0 = init if init is not None else initial_estimate(data, X)
    fit_opts = {"xi": xi, "max_iter": max_iter}

    def run_row(lam_f):
        row_fits = {}
        row_failures = {}
        warm = B0
        for lam_s in grid.lambda_s_values:
            cfg = PenaltyConfig(lam_s, lam_f, tau=tau, epsilon=epsilon)
            try:
                res = fit(data, X, cfg, init=warm, check_rank=False, **fit_opts)
            except (RuntimeError, np.linalg.LinAlgError) as exc:
                row_failures[(lam_s, lam_f)] = str(exc)
                continue
            row_fits[(lam_s, lam_f)] = res
            warm = res.B_hat
        return row_fits, row_failures

    fits = {}
    failures = {}
    if threads > 1 and len(grid.lambda_f_values) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for row_fits, row_failures in pool.map(run_row, grid.lambda_f_values):
                fits.update(row_fits)
                failures.update(row_failures)
    else:
        for lam_f in grid.lambda_f_values:
            row_fits, row_failures = run_row(lam_f)
            fits.update(row_fits)
            failures.update(row_failures)
    if not fits:
        raise RuntimeError("every grid cell failed to fit")

    score = aic if criterion == "aic" else bic
    ic_table = {}
    for cell in grid.cells():
        if cell not in fits:
            continue
        res = fits[cell]
        ic_table[cell] = {
            "aic": aic(res, data, zero_threshold),
            "bic": bic(res, data, zero_threshold),
            "df": effective_df(res.B_hat, zero_threshold),
        }
    chosen = min(
        ic_table,
        key=lambda cell: (score(fits[cell], data, zero_threshold), -cell[0], -cell[1]),
    )
    return SelectionResult(
        fits=fits,
        ic_table=ic_table,
        chosen=chosen,
        criterion=criterion,
        zero_threshold=zero_threshold,
        failures=failures,
    )
