"""Multi-group Plackett-Luce likelihood with object covariates.

A ranking is modelled as sequential choice: at stage j the object ranked j-th
is drawn from the remaining ranked set with probability proportional to its
worth exp(x beta). All stage sums run through suffix log-sum-exp, so scores of
any magnitude are safe. Groups enter the likelihood additively, which makes
the gradient per-group separable and the Hessian block diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import CovariateMatrix, PartialRanking, RankingDataset

# Pad value for masked stage scores: exp() underflows to exactly 0 without
# producing inf/nan in intermediate arithmetic.
_PAD = -1.0e300


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """K x p matrix of coefficients; row k belongs to group k."""

    B: np.ndarray

    def __post_init__(self):
        B = np.array(self.B, dtype=float)
        if B.ndim != 2:
            raise ValueError("coefficients must form a K x p matrix")
        if not np.all(np.isfinite(B)):
            raise ValueError("coefficients must be finite")
        B.setflags(write=False)
        object.__setattr__(self, "B", B)

    @classmethod
    def zeros(cls, n_groups: int, n_variables: int) -> "CoefficientSet":
        return cls(np.zeros((n_groups, n_variables)))

    @property
    def n_groups(self) -> int:
        return self.B.shape[0]

    @property
    def n_variables(self) -> int:
        return self.B.shape[1]


def _check_shapes(B: CoefficientSet, data: RankingDataset, X: CovariateMatrix):
    if B.n_groups != data.n_groups:
        raise ValueError(
            f"coefficient rows ({B.n_groups}) != dataset groups ({data.n_groups})"
        )
    if B.n_variables != X.n_variables:
        raise ValueError(
            f"coefficient columns ({B.n_variables}) != covariates ({X.n_variables})"
        )
    if X.n_objects != data.n_objects:
        raise ValueError(
            f"covariate rows ({X.n_objects}) != catalog size ({data.n_objects})"
        )


def _suffix_logsumexp(s: np.ndarray) -> np.ndarray:
    """out[i, j] = log sum_{l >= j} exp(s[i, l]), computed stably."""
    return np.logaddexp.accumulate(s[:, ::-1], axis=1)[:, ::-1]


def _group_eval(beta, Xv, order, mask, want_grad=False, want_hess=False, Xsel=None):
    """Negative log likelihood of one group, optionally with derivatives.

    ``order``/``mask`` are the padded stage arrays of the group; ``Xsel`` may
    pass a precomputed ``Xv[order]`` gather. Summation runs in ranker index
    order, so results are bitwise reproducible.
    """
    scores = Xv @ beta
    sel = np.where(mask, scores[order], _PAD)
    suffix = _suffix_logsumexp(sel)
    nll = float(np.where(mask, suffix - sel, 0.0).sum())
    if not (want_grad or want_hess):
        return nll, None, None

    n, m = sel.shape
    stage_le_item = np.triu(np.ones((m, m), dtype=bool))
    valid = mask[:, :, None] & mask[:, None, :] & stage_le_item[None, :, :]
    expo = np.where(valid, sel[:, None, :] - suffix[:, :, None], -np.inf)
    weights = np.exp(expo)  # (n, stage j, item l); rows over l sum to 1
    if Xsel is None:
        Xsel = Xv[order]  # (n, m, p)
    item_weight = weights.sum(axis=1)  # total softmax mass on item l
    flat_x = Xsel.reshape(n * m, -1)
    grad = flat_x.T @ (item_weight - mask).ravel()
    if not want_hess:
        return nll, grad, None

    second = flat_x.T @ (flat_x * item_weight.reshape(n * m, 1))
    mean_x = (weights @ Xsel).reshape(n * m, -1)  # stage-wise weighted means
    outer = mean_x.T @ mean_x
    hess = second - outer
    hess = 0.5 * (hess + hess.T)
    return nll, grad, hess


def _gather_xsel(data: RankingDataset, k: int, Xv: np.ndarray) -> np.ndarray:
    """Cached Xv[order] gather for group k, keyed by array identity."""
    cache = data.__dict__.get("_xsel_cache")
    if cache is None:
        cache = {}
        object.__setattr__(data, "_xsel_cache", cache)
    entry = cache.get(k)
    if entry is None or entry[0] is not Xv:
        order, _ = data.group_arrays(k)
        cache[k] = (Xv, Xv[order])
    return cache[k][1]


def ranking_probability(sigma: PartialRanking, beta, X: CovariateMatrix) -> float:
    """Probability of observing one ranking given a coefficient vector.

    Equals the product over stages of the softmax weight of the chosen object
    among the objects not yet ranked; lies in (0, 1].
    """
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != X.n_variables:
        raise ValueError("beta length must equal the number of covariates")
    if max(sigma.ordering) >= X.n_objects:
        raise ValueError("ranking refers to an object outside the covariate matrix")
    order = np.asarray(sigma.ordering, dtype=np.int64)[None, :]
    mask = np.ones_like(order, dtype=bool)
    nll, _, _ = _group_eval(beta, X.values, order, mask)
    prob = float(np.exp(-nll))
    if not np.isfinite(prob) or prob <= 0.0:
        raise ArithmeticError("ranking probability is not finite and positive")
    return prob


def neg_log_likelihood(B: CoefficientSet, data: RankingDataset, X: CovariateMatrix) -> float:
    """Total negative log likelihood over all groups; always >= 0."""
    _check_shapes(B, data, X)
    total = 0.0
    for k in range(data.n_groups):
        order, mask = data.group_arrays(k)
        nll, _, _ = _group_eval(B.B[k], X.values, order, mask)
        total += nll
    return total


def gradient(B: CoefficientSet, data: RankingDataset, X: CovariateMatrix) -> np.ndarray:
    """K x p gradient of the negative log likelihood; groups are independent."""
    _check_shapes(B, data, X)
    out = np.empty_like(B.B)
    for k in range(data.n_groups):
        order, mask = data.group_arrays(k)
        _, g, _ = _group_eval(B.B[k], X.values, order, mask, want_grad=True)
        out[k] = g
    return out


def hessian_blocks(B: CoefficientSet, data: RankingDataset, X: CovariateMatrix) -> list:
    """Per-group p x p Hessian blocks of the negative log likelihood."""
    _check_shapes(B, data, X)
    blocks = []
    for k in range(data.n_groups):
        order, mask = data.group_arrays(k)
        _, _, h = _group_eval(
            B.B[k], X.values, order, mask, want_grad=True, want_hess=True
        )
        blocks.append(h)
    return blocks


def hessian(B: CoefficientSet, data: RankingDataset, X: CovariateMatrix) -> np.ndarray:
    """Kp x Kp Hessian; block diagonal with one p x p block per group."""
    blocks = hessian_blocks(B, data, X)
    K, p = B.B.shape
    out = np.zeros((K * p, K * p))
    for k, blk in enumerate(blocks):
        out[k * p : (k + 1) * p, k * p : (k + 1) * p] = blk
    return out


def nll_gradient_hessian(B: CoefficientSet, data: RankingDataset, X: CovariateMatrix):
    """One-pass (nll, K x p gradient, Kp x Kp Hessian) for optimizer loops."""
    _check_shapes(B, data, X)
    K, p = B.B.shape
    total = 0.0
    grad = np.empty((K, p))
    hess = np.zeros((K * p, K * p))
    for k in range(K):
        order, mask = data.group_arrays(k)
        nll, g, h = _group_eval(
            B.B[k],
            X.values,
            order,
            mask,
            want_grad=True,
            want_hess=True,
            Xsel=_gather_xsel(data, k, X.values),
        )
        total += nll
        grad[k] = g
        hess[k * p : (k + 1) * p, k * p : (k + 1) * p] = h
    return total, grad, hess
