"""Shared builders and independent oracles for the test suite.

The oracles here never call the code paths they are used to check: gradients
come from central finite differences of the likelihood value, reference
maximum likelihood estimates from scipy's generic minimizers, and ordering
probabilities from exhaustive enumeration.
"""

import numpy as np
import scipy.optimize

from sfpl import (
    CoefficientSet,
    CovariateMatrix,
    RankingDataset,
    SimulationConfig,
    generate_dataset,
    gradient,
    neg_log_likelihood,
)


def make_instance(seed, K=2, M=8, p=3, n_k=20, m=3, eta=0.0, delta=0.5):
    """Simulated (dataset, covariates, true coefficients) for identity tests."""
    rng = np.random.default_rng(seed)
    cfg = SimulationConfig(K=K, M=M, m=m, p=p, n_k=n_k, eta=eta, delta=delta)
    rep = generate_dataset(cfg, rng)
    return rep.dataset, rep.covariates, rep.coefficients


def dataset_from_orderings(orderings_by_group, n_objects, labels=None):
    labels = labels or tuple(f"g{i + 1}" for i in range(len(orderings_by_group)))
    return RankingDataset.from_orderings(labels, orderings_by_group, n_objects)


def covariates(values, names=None):
    values = np.asarray(values, dtype=float)
    names = names or tuple(f"x{j + 1}" for j in range(values.shape[1]))
    return CovariateMatrix(values, names)


def fd_gradient(B: CoefficientSet, data, X, step=1e-5) -> np.ndarray:
    """Central finite differences of the negative log likelihood."""
    out = np.zeros_like(B.B)
    for k in range(B.n_groups):
        for q in range(B.n_variables):
            up = B.B.copy()
            up[k, q] += step
            down = B.B.copy()
            down[k, q] -= step
            out[k, q] = (
                neg_log_likelihood(CoefficientSet(up), data, X)
                - neg_log_likelihood(CoefficientSet(down), data, X)
            ) / (2 * step)
    return out


def fd_hessian(B: CoefficientSet, data, X, step=1e-5) -> np.ndarray:
    """Central finite differences of the analytic gradient."""
    K, p = B.B.shape
    out = np.zeros((K * p, K * p))
    for k in range(K):
        for q in range(p):
            up = B.B.copy()
            up[k, q] += step
            down = B.B.copy()
            down[k, q] -= step
            column = (
                gradient(CoefficientSet(up), data, X)
                - gradient(CoefficientSet(down), data, X)
            ) / (2 * step)
            out[:, k * p + q] = column.ravel()
    return out


def scipy_group_mle(data, X, k, tol=1e-12) -> np.ndarray:
    """Reference per-group MLE via scipy's BFGS on the group likelihood."""
    sub = RankingDataset(
        (data.group_labels[k],), (data.groups[k],), data.n_objects
    )

    def value(beta):
        return neg_log_likelihood(CoefficientSet(beta[None, :]), sub, X)

    def grad(beta):
        return gradient(CoefficientSet(beta[None, :]), sub, X).ravel()

    res = scipy.optimize.minimize(
        value,
        np.zeros(X.n_variables),
        jac=grad,
        method="BFGS",
        options={"gtol": 1e-10, "maxiter": 2000},
    )
    return res.x


def scipy_mle(data, X) -> np.ndarray:
    return np.vstack([scipy_group_mle(data, X, k) for k in range(data.n_groups)])
