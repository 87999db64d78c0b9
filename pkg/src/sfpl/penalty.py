"""Sparsity and cross-group fusion penalties with their quadratic surrogate.

The penalty is an L1 term on all coefficients plus a weighted L1 term on every
pairwise between-group coefficient difference. The optimizer replaces it with
a quadratic surrogate built around an epsilon-perturbed absolute value
``|t| - eps*log(1 + |t|/eps)``: the surrogate touches the perturbed penalty at
the current iterate and bounds it from above everywhere, which is what makes
the descent step monotone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .likelihood import CoefficientSet, neg_log_likelihood


@dataclass(frozen=True, eq=False)
class PenaltyConfig:
    """Shrinkage weight, fusion weight, pair weights tau and smoothing eps.

    ``tau`` is an optional K x K symmetric nonnegative matrix of per-pair
    fusion weights (diagonal ignored); None means equal weights of 1.
    """

    lambda_s: float
    lambda_f: float
    tau: np.ndarray = None
    epsilon: float = 1e-5

    def __post_init__(self):
        lam_s = float(self.lambda_s)
        lam_f = float(self.lambda_f)
        if not np.isfinite(lam_s) or lam_s < 0:
            raise ValueError("lambda_s must be finite and >= 0")
        if not np.isfinite(lam_f) or lam_f < 0:
            raise ValueError("lambda_f must be finite and >= 0")
        eps = float(self.epsilon)
        if not np.isfinite(eps) or eps <= 0:
            raise ValueError("epsilon must be finite and > 0")
        object.__setattr__(self, "lambda_s", lam_s)
        object.__setattr__(self, "lambda_f", lam_f)
        object.__setattr__(self, "epsilon", eps)
        if self.tau is not None:
            tau = np.array(self.tau, dtype=float)
            if tau.ndim != 2 or tau.shape[0] != tau.shape[1]:
                raise ValueError("tau must be a square matrix")
            if not np.all(np.isfinite(tau)) or np.any(tau < 0):
                raise ValueError("tau entries must be finite and >= 0")
            if not np.array_equal(tau, tau.T):
                raise ValueError("tau must be symmetric")
            tau.setflags(write=False)
            object.__setattr__(self, "tau", tau)

    def tau_matrix(self, n_groups: int) -> np.ndarray:
        """Resolved K x K weight matrix (all ones when tau was not supplied)."""
        if self.tau is None:
            return np.ones((n_groups, n_groups))
        if self.tau.shape != (n_groups, n_groups):
            raise ValueError(
                f"tau has shape {self.tau.shape}, expected ({n_groups}, {n_groups})"
            )
        return self.tau


def _eps_abs(t: np.ndarray, eps: float) -> np.ndarray:
    """Perturbed absolute value |t| - eps*log(1 + |t|/eps); smooth at 0."""
    a = np.abs(t)
    return a - eps * np.log1p(a / eps)


def penalty_value(B: CoefficientSet, cfg: PenaltyConfig) -> float:
    """Raw L1 penalty: shrinkage plus tau-weighted pairwise fusion."""
    Bm = B.B
    K = Bm.shape[0]
    tau = cfg.tau_matrix(K)
    total = cfg.lambda_s * np.abs(Bm).sum()
    for k in range(K):
        for k2 in range(k + 1, K):
            total += cfg.lambda_f * tau[k, k2] * np.abs(Bm[k] - Bm[k2]).sum()
    return float(total)


def smoothed_penalty_value(B: CoefficientSet, cfg: PenaltyConfig) -> float:
    """Penalty with every absolute value epsilon-perturbed.

    This is the function the surrogate actually majorizes; it differs from
    ``penalty_value`` by at most eps*log(1 + |t|/eps) per term.
    """
    Bm = B.B
    K = Bm.shape[0]
    tau = cfg.tau_matrix(K)
    eps = cfg.epsilon
    total = cfg.lambda_s * _eps_abs(Bm, eps).sum()
    for k in range(K):
        for k2 in range(k + 1, K):
            total += cfg.lambda_f * tau[k, k2] * _eps_abs(Bm[k] - Bm[k2], eps).sum()
    return float(total)


def surrogate_value(B: CoefficientSet, B_ref: CoefficientSet, cfg: PenaltyConfig) -> float:
    """Quadratic surrogate of the penalty expanded around ``B_ref``.

    Per coefficient the surrogate term is
    ``|b| - eps*log(1 + |b|/eps) + (beta^2 - b^2) / (2(|b| + eps))`` with b the
    reference value, and analogously for each tau-weighted pairwise difference.
    Equals ``smoothed_penalty_value(B_ref)`` at B = B_ref and dominates
    ``smoothed_penalty_value(B)`` everywhere.
    """
    if B.B.shape != B_ref.B.shape:
        raise ValueError("coefficient sets must have equal shapes")
    Bm, Rm = B.B, B_ref.B
    K = Bm.shape[0]
    tau = cfg.tau_matrix(K)
    eps = cfg.epsilon

    def terms(new, ref):
        return _eps_abs(ref, eps) + (new**2 - ref**2) / (2.0 * (np.abs(ref) + eps))

    total = cfg.lambda_s * terms(Bm, Rm).sum()
    for k in range(K):
        for k2 in range(k + 1, K):
            total += (
                cfg.lambda_f
                * tau[k, k2]
                * terms(Bm[k] - Bm[k2], Rm[k] - Rm[k2]).sum()
            )
    return float(total)


def penalized_objective(B: CoefficientSet, data, X, cfg: PenaltyConfig) -> float:
    """Negative log likelihood plus the raw penalty; the quantity reported."""
    return neg_log_likelihood(B, data, X) + penalty_value(B, cfg)


def smoothed_objective(B: CoefficientSet, data, X, cfg: PenaltyConfig) -> float:
    """Negative log likelihood plus the epsilon-perturbed penalty."""
    return neg_log_likelihood(B, data, X) + smoothed_penalty_value(B, cfg)


def surrogate_objective(
    B: CoefficientSet, B_ref: CoefficientSet, data, X, cfg: PenaltyConfig
) -> float:
    """Full majorizer Q: likelihood plus the quadratic penalty surrogate."""
    return neg_log_likelihood(B, data, X) + surrogate_value(B, B_ref, cfg)


def build_vs(B_ref: CoefficientSet, cfg: PenaltyConfig) -> np.ndarray:
    """Diagonal Kp x Kp curvature of the shrinkage surrogate: 1/(|b| + eps)."""
    diag = 1.0 / (np.abs(B_ref.B).ravel() + cfg.epsilon)
    return np.diag(diag)


def build_vf(B_ref: CoefficientSet, cfg: PenaltyConfig) -> np.ndarray:
    """Kp x Kp curvature of the fusion surrogate.

    For each variable q this is a graph Laplacian over groups with edge
    weights tau(k,k') / (|b_q(k) - b_q(k')| + eps): diagonal entries sum the
    incident weights, off-diagonal entries are their negatives. Built
    symmetric so that the quadratic form reproduces the pairwise surrogate
    terms; every q-slice has zero row sums and the matrix is PSD.
    """
    Bm = B_ref.B
    K, p = Bm.shape
    tau = cfg.tau_matrix(K)
    eps = cfg.epsilon
    out = np.zeros((K * p, K * p))
    idx = np.arange(p)
    for k in range(K):
        for k2 in range(k + 1, K):
            w = tau[k, k2] / (np.abs(Bm[k] - Bm[k2]) + eps)
            a = k * p + idx
            b = k2 * p + idx
            out[a, a] += w
            out[b, b] += w
            out[a, b] -= w
            out[b, a] -= w
    return out
