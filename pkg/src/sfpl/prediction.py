"""Per-group worths and aggregated rankings, including unseen objects.

A fitted model assigns every object the worth exp(x beta) per group; sorting
the worths in descending order gives the group's aggregated ranking. Objects
never ranked by anyone can still be placed as long as their covariates are
known: their worths slot into the existing order without disturbing the
relative order of the other objects.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data_model import CovariateMatrix, ObjectCatalog, ValidationError
from .likelihood import CoefficientSet


@dataclass(frozen=True, eq=False)
class RankTable:
    """Per-group worths and 1-based ranks for a list of objects.

    ``predicted_only`` marks objects placed from covariates alone (no ranking
    data). Ranks within each group are a permutation of 1..M' following
    descending worth, ties broken by ascending object position.
    """

    group_labels: tuple
    object_labels: tuple
    worths: np.ndarray
    ranks: np.ndarray
    predicted_only: np.ndarray

    def __post_init__(self):
        groups = tuple(str(g) for g in self.group_labels)
        labels = tuple(str(x) for x in self.object_labels)
        worths = np.array(self.worths, dtype=float)
        ranks = np.array(self.ranks, dtype=np.int64)
        flags = np.array(self.predicted_only, dtype=bool)
        K, M = len(groups), len(labels)
        if worths.shape != (K, M) or ranks.shape != (K, M) or flags.shape != (M,):
            raise ValidationError("rank table shapes are inconsistent")
        if not np.all(np.isfinite(worths)) or np.any(worths <= 0):
            raise ValidationError("worths must be positive and finite")
        expected = np.arange(1, M + 1)
        for row in ranks:
            if not np.array_equal(np.sort(row), expected):
                raise ValidationError("ranks must be a permutation of 1..M'")
        for arr in (worths, ranks, flags):
            arr.setflags(write=False)
        object.__setattr__(self, "group_labels", groups)
        object.__setattr__(self, "object_labels", labels)
        object.__setattr__(self, "worths", worths)
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(self, "predicted_only", flags)


def object_worths(B_hat: CoefficientSet, X_all: CovariateMatrix) -> np.ndarray:
    """K x M' matrix of worths exp(x_j beta_k); positive and finite.

    ``X_all`` must be on the scale the model was fitted on (new objects
    transformed with the training statistics).
    """
    if X_all.n_variables != B_hat.n_variables:
        raise ValidationError(
            f"covariates have {X_all.n_variables} columns, "
            f"coefficients expect {B_hat.n_variables}"
        )
    worths = np.exp(X_all.values @ B_hat.B.T).T
    if not np.all(np.isfinite(worths)):
        raise ArithmeticError("worth computation overflowed")
    return worths


def worth_ranks(worths: np.ndarray) -> np.ndarray:
    """1-based ranks by descending worth per row; ties go to the lower index."""
    worths = np.asarray(worths, dtype=float)
    ranks = np.empty(worths.shape, dtype=np.int64)
    positions = np.arange(worths.shape[1])
    for k, row in enumerate(worths):
        order = np.lexsort((positions, -row))
        ranks[k, order] = positions + 1
    return ranks


def aggregate_ranking(
    worths: np.ndarray,
    labels,
    group_labels=None,
    predicted_only=None,
) -> RankTable:
    """Sort objects by descending worth within each group into a RankTable."""
    worths = np.asarray(worths, dtype=float)
    K = worths.shape[0]
    if group_labels is None:
        group_labels = tuple(f"group{k + 1}" for k in range(K))
    if predicted_only is None:
        predicted_only = np.zeros(worths.shape[1], dtype=bool)
    return RankTable(
        group_labels=tuple(group_labels),
        object_labels=tuple(labels),
        worths=worths,
        ranks=worth_ranks(worths),
        predicted_only=predicted_only,
    )


def predict_new(
    B_hat: CoefficientSet,
    X_train: CovariateMatrix,
    catalog: ObjectCatalog,
    new_labels,
    new_covariates,
    group_labels=None,
) -> RankTable:
    """Rank catalog objects together with new objects given raw covariates.

    New-object covariates are transformed with the stored training statistics
    (never refit), then ranked by worth alongside the catalog. Existing
    relative orders are unaffected by the insertion.
    """
    new_labels = tuple(str(x) for x in new_labels)
    if len(set(new_labels)) != len(new_labels):
        raise ValidationError("new object labels must be distinct")
    clash = set(new_labels) & set(catalog.labels)
    if clash:
        raise ValidationError(f"new object labels already in catalog: {sorted(clash)}")
    new_values = np.array(new_covariates, dtype=float)
    if new_values.ndim == 1:
        new_values = new_values[None, :]
    if new_values.shape != (len(new_labels), X_train.n_variables):
        raise ValidationError(
            f"new covariates must have shape ({len(new_labels)}, {X_train.n_variables})"
        )
    if not np.all(np.isfinite(new_values)):
        raise ValidationError("new covariates contain non-finite entries")
    if X_train.standardized:
        new_values = (new_values - X_train.column_means) / X_train.column_sds
    combined = CovariateMatrix(
        np.vstack([X_train.values, new_values]),
        tuple(X_train.variable_names),
        standardized=False,
    )
    worths = object_worths(B_hat, combined)
    labels = catalog.labels + new_labels
    flags = np.concatenate(
        [np.zeros(catalog.size, dtype=bool), np.ones(len(new_labels), dtype=bool)]
    )
    return aggregate_ranking(worths, labels, group_labels=group_labels, predicted_only=flags)


def write_rank_table(table: RankTable, path) -> None:
    """Write ``object,group,worth,rank,predicted_only`` rows, by group then rank."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["object", "group", "worth", "rank", "predicted_only"])
        for k, group in enumerate(table.group_labels):
            for j in np.argsort(table.ranks[k]):
                writer.writerow(
                    [
                        table.object_labels[j],
                        group,
                        repr(float(table.worths[k, j])),
                        int(table.ranks[k, j]),
                        "true" if table.predicted_only[j] else "false",
                    ]
                )
