"""Data structures and file ingestion for grouped partial-ranking data.

Objects are referenced by string label in files and by a dense 0-based index
internally. A ranking is a strict order over a subset of the catalog,
most-preferred first. Rankers are organized into K named groups whose
preference patterns may differ.

File formats
------------
Rankings: UTF-8 CSV with header ``group,ranker,position,object`` and one row
per (ranker, position). Positions within a ranker must form 1..m with no gaps.

Covariates: UTF-8 CSV with header ``object,<var1>,...,<varp>`` and one row per
object. The catalog order is the covariate file row order.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

RANKINGS_HEADER = ("group", "ranker", "position", "object")


class ValidationError(ValueError):
    """An input file or in-memory structure violates the schema."""


class IdentifiabilityError(RuntimeError):
    """A fit was attempted on a rank-deficient covariate matrix."""


class CoverageWarning(UserWarning):
    """Some catalog objects are never ranked within a group."""


class ConvergenceWarning(UserWarning):
    """An iterative estimate stopped before meeting its tolerance."""


@dataclass(frozen=True)
class ObjectCatalog:
    """Ordered collection of M distinct object labels defining the indexing."""

    labels: tuple

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if len(labels) < 2:
            raise ValidationError("catalog must contain at least 2 objects")
        if len(set(labels)) != len(labels):
            raise ValidationError("catalog labels must be unique")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "index", {lab: i for i, lab in enumerate(labels)})

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class PartialRanking:
    """Strict ordering of object indices, most-preferred first."""

    ordering: tuple

    def __post_init__(self):
        ordering = tuple(int(i) for i in self.ordering)
        if not ordering:
            raise ValidationError("a ranking must order at least one object")
        if any(i < 0 for i in ordering):
            raise ValidationError("object indices must be nonnegative")
        if len(set(ordering)) != len(ordering):
            raise ValidationError("a ranking may not repeat an object")
        object.__setattr__(self, "ordering", ordering)

    def __len__(self) -> int:
        return len(self.ordering)


@dataclass(frozen=True, eq=False)
class RankingDataset:
    """K named groups of partial rankings over a shared catalog.

    Immutable after construction; safe to share read-only across workers.
    A group that never ranks some catalog object triggers a CoverageWarning,
    not an error: worths for unranked objects remain predictable through the
    covariates.
    """

    group_labels: tuple
    groups: tuple
    n_objects: int

    def __post_init__(self):
        labels = tuple(str(x) for x in self.group_labels)
        if not labels:
            raise ValidationError("dataset must contain at least one group")
        if len(set(labels)) != len(labels):
            raise ValidationError("group labels must be distinct")
        groups = tuple(tuple(g) for g in self.groups)
        if len(groups) != len(labels):
            raise ValidationError("group_labels and groups must have equal length")
        n_objects = int(self.n_objects)
        if n_objects < 2:
            raise ValidationError("catalog size must be at least 2")
        for lab, rankings in zip(labels, groups):
            if not rankings:
                raise ValidationError(f"group {lab!r} contains no rankings")
            for r in rankings:
                if not isinstance(r, PartialRanking):
                    raise ValidationError("groups must contain PartialRanking values")
                if len(r) > n_objects or max(r.ordering) >= n_objects:
                    raise ValidationError(
                        f"group {lab!r} ranks an object outside the catalog"
                    )
        object.__setattr__(self, "group_labels", labels)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "n_objects", n_objects)
        for k, lab in enumerate(labels):
            missing = self.unranked_objects(k)
            if missing:
                warnings.warn(
                    f"group {lab!r} never ranks {len(missing)} of "
                    f"{n_objects} catalog objects",
                    CoverageWarning,
                    stacklevel=2,
                )

    @classmethod
    def from_orderings(cls, group_labels, orderings_by_group, n_objects):
        """Build a dataset from raw index sequences, one list per group."""
        groups = tuple(
            tuple(PartialRanking(tuple(o)) for o in group)
            for group in orderings_by_group
        )
        return cls(tuple(group_labels), groups, n_objects)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def group_sizes(self) -> tuple:
        return tuple(len(g) for g in self.groups)

    def unranked_objects(self, k) -> tuple:
        """Catalog indices never appearing in group k's rankings."""
        seen = set()
        for r in self.groups[k]:
            seen.update(r.ordering)
        return tuple(i for i in range(self.n_objects) if i not in seen)

    def group_arrays(self, k):
        """Padded (order, mask) arrays for group k, built once and cached.

        ``order`` is int64 of shape (n_k, max m_i) with orderings left-aligned;
        ``mask`` marks the valid stages.
        """
        cache = self.__dict__.get("_group_arrays")
        if cache is None:
            cache = {}
            object.__setattr__(self, "_group_arrays", cache)
        if k not in cache:
            rankings = self.groups[k]
            m_max = max(len(r) for r in rankings)
            order = np.zeros((len(rankings), m_max), dtype=np.int64)
            mask = np.zeros((len(rankings), m_max), dtype=bool)
            for i, r in enumerate(rankings):
                mi = len(r)
                order[i, :mi] = r.ordering
                mask[i, :mi] = True
            order.setflags(write=False)
            mask.setflags(write=False)
            cache[k] = (order, mask)
        return cache[k]

    def pooled(self) -> "RankingDataset":
        """All rankings concatenated into a single group (comparator fits)."""
        merged = tuple(r for g in self.groups for r in g)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CoverageWarning)
            return RankingDataset(("pooled",), (merged,), self.n_objects)


@dataclass(frozen=True, eq=False)
class CovariateMatrix:
    """M x p object-variable matrix with optional standardization metadata."""

    values: np.ndarray
    variable_names: tuple
    standardized: bool = False
    column_means: np.ndarray = None
    column_sds: np.ndarray = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] < 1:
            raise ValidationError("covariates must form a 2-D matrix with p >= 1")
        if not np.all(np.isfinite(values)):
            raise ValidationError("covariates contain non-finite entries")
        names = tuple(str(v) for v in self.variable_names)
        if len(names) != values.shape[1]:
            raise ValidationError("variable_names length must equal column count")
        if len(set(names)) != len(names):
            raise ValidationError("variable names must be unique")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "variable_names", names)
        if self.standardized:
            means = np.array(self.column_means, dtype=float)
            sds = np.array(self.column_sds, dtype=float)
            if means.shape != (values.shape[1],) or sds.shape != (values.shape[1],):
                raise ValidationError("standardization stats must be p-vectors")
            if np.abs(values.mean(axis=0)).max() >= 1e-10:
                raise ValidationError("standardized columns must have zero mean")
            if np.abs(values.std(axis=0, ddof=1) - 1.0).max() >= 1e-10:
                raise ValidationError("standardized columns must have unit sample sd")
            means.setflags(write=False)
            sds.setflags(write=False)
            object.__setattr__(self, "column_means", means)
            object.__setattr__(self, "column_sds", sds)

    @property
    def n_objects(self) -> int:
        return self.values.shape[0]

    @property
    def n_variables(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class RankReport:
    """Numerical rank of the covariate matrix and the full-rank verdict."""

    rank: int
    n_variables: int
    passed: bool
    tol: float


def check_identifiability(X: CovariateMatrix, tol: float = 1e-10) -> RankReport:
    """Report whether rank(X) = p, the condition for unique coefficients.

    The rank counts singular values above ``tol`` times the largest one.
    This is a report; callers decide whether to refuse a fit.
    """
    sv = np.linalg.svd(X.values, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(sv > tol * sv[0]))
    return RankReport(rank=rank, n_variables=X.n_variables, passed=rank == X.n_variables, tol=tol)


def standardize_covariates(X: CovariateMatrix) -> CovariateMatrix:
    """Center each column and scale it to unit sample standard deviation.

    The original means and sds are stored so fitted coefficients can be
    reported on the raw scale (beta_raw = beta_std / column_sd) and so new
    objects can be transformed with the training statistics.
    """
    values = X.values
    means = values.mean(axis=0)
    sds = values.std(axis=0, ddof=1)
    for j, sd in enumerate(sds):
        if sd == 0.0:
            raise ValidationError(
                f"column {X.variable_names[j]!r} is constant and cannot be standardized"
            )
    return CovariateMatrix(
        (values - means) / sds,
        X.variable_names,
        standardized=True,
        column_means=means,
        column_sds=sds,
    )


def _read_rows(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise ValidationError(f"{path}: file is empty")
    return rows


def load_covariates(path) -> tuple:
    """Read a covariates file; returns (ObjectCatalog, CovariateMatrix).

    The catalog order equals the file row order.
    """
    rows = _read_rows(path)
    header = [c.strip() for c in rows[0]]
    if len(header) < 2 or header[0] != "object":
        raise ValidationError(f"{path}: header must be object,<var1>,...,<varp>")
    names = tuple(header[1:])
    labels = []
    values = []
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValidationError(f"{path}:{ln}: expected {len(header)} fields")
        labels.append(row[0].strip())
        try:
            values.append([float(c) for c in row[1:]])
        except ValueError as exc:
            raise ValidationError(f"{path}:{ln}: non-numeric covariate value") from exc
    if len(set(labels)) != len(labels):
        raise ValidationError(f"{path}: duplicate object label")
    catalog = ObjectCatalog(tuple(labels))
    return catalog, CovariateMatrix(np.array(values, dtype=float), names)


def load_rankings(path, catalog: ObjectCatalog) -> RankingDataset:
    """Read a long-format rankings file into a validated RankingDataset.

    Rankers are grouped by the ``group`` column in order of first appearance;
    rankers within a group keep their order of first appearance.
    """
    rows = _read_rows(path)
    header = tuple(c.strip() for c in rows[0])
    if header != RANKINGS_HEADER:
        raise ValidationError(
            f"{path}: header must be {','.join(RANKINGS_HEADER)}"
        )
    # (group, ranker) -> {position: object index}, insertion ordered
    by_ranker = {}
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise ValidationError(f"{path}:{ln}: expected 4 fields")
        group, ranker, pos_str, obj = (c.strip() for c in row)
        try:
            pos = int(pos_str)
        except ValueError as exc:
            raise ValidationError(f"{path}:{ln}: position must be an integer") from exc
        if pos < 1:
            raise ValidationError(f"{path}:{ln}: position must be >= 1")
        if obj not in catalog.index:
            raise ValidationError(f"{path}:{ln}: unknown object label {obj!r}")
        key = (group, ranker)
        slots = by_ranker.setdefault(key, {})
        if pos in slots:
            raise ValidationError(
                f"{path}:{ln}: duplicate position {pos} for ranker {ranker!r} "
                f"in group {group!r}"
            )
        slots[pos] = catalog.index[obj]
    group_order = []
    per_group = {}
    for (group, ranker), slots in by_ranker.items():
        positions = sorted(slots)
        if positions != list(range(1, len(positions) + 1)):
            raise ValidationError(
                f"{path}: ranker {ranker!r} in group {group!r} has a gap in positions"
            )
        ordering = tuple(slots[p] for p in positions)
        if len(set(ordering)) != len(ordering):
            raise ValidationError(
                f"{path}: ranker {ranker!r} in group {group!r} repeats an object"
            )
        if group not in per_group:
            group_order.append(group)
            per_group[group] = []
        per_group[group].append(PartialRanking(ordering))
    return RankingDataset(
        tuple(group_order),
        tuple(tuple(per_group[g]) for g in group_order),
        catalog.size,
    )


def save_rankings(dataset: RankingDataset, catalog: ObjectCatalog, path) -> None:
    """Write a dataset back to the long format; rankers are renumbered 1..n_k."""
    if catalog.size != dataset.n_objects:
        raise ValidationError("catalog size does not match the dataset")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RANKINGS_HEADER)
        for label, rankings in zip(dataset.group_labels, dataset.groups):
            for i, r in enumerate(rankings, start=1):
                for pos, obj in enumerate(r.ordering, start=1):
                    writer.writerow([label, str(i), str(pos), catalog.labels[obj]])
