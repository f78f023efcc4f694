"""Missing-data containers, pattern grouping, modalities and sample counts.

Variables are indexed from 0 throughout. A labelled row belongs to the group
whose observed-index set matches its own; unlabelled rows are fully observed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    EmptyDataset,
    MissregError,
    NonFiniteValue,
    PairNeverObserved,
    PartiallyObservedUnlabelled,
    VariableNeverObserved,
)

MISSING_TOKENS = ("", "NA")


class NoObservedCovariates(MissregError):
    pass


@dataclass(frozen=True, order=True)
class ObservationPattern:
    """Sorted tuple of observed covariate indices."""

    observed: tuple[int, ...]

    def __post_init__(self):
        obs = tuple(int(j) for j in self.observed)
        if not obs:
            raise ValueError("an observation pattern must observe at least one covariate")
        if any(b <= a for a, b in zip(obs, obs[1:])) or obs[0] < 0:
            raise ValueError(f"pattern indices must be non-negative and strictly increasing: {obs}")
        object.__setattr__(self, "observed", obs)

    def __len__(self) -> int:
        return len(self.observed)

    def __contains__(self, j) -> bool:
        return j in set(self.observed)

    def missing(self, p: int) -> tuple[int, ...]:
        obs = set(self.observed)
        return tuple(j for j in range(p) if j not in obs)

    def mask(self, p: int) -> np.ndarray:
        m = np.zeros(p, dtype=bool)
        m[list(self.observed)] = True
        return m

    def is_complete(self, p: int) -> bool:
        return len(self.observed) == p


@dataclass(frozen=True, eq=False)
class LabelledGroup:
    pattern: ObservationPattern
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.ndim != 2 or x.shape[1] != len(self.pattern):
            raise ValueError(
                f"x must have shape (n, {len(self.pattern)}), got {x.shape}")
        if x.shape[0] != y.shape[0]:
            raise ValueError("row count of x must equal the length of y")
        if x.shape[0] < 1:
            raise ValueError("a labelled group needs at least one row")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise NonFiniteValue("labelled group contains non-finite values")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def observed(self) -> tuple[int, ...]:
        return self.pattern.observed


@dataclass(frozen=True, eq=False)
class MissingDataset:
    """Labelled groups (one per distinct pattern) plus a complete unlabelled block.

    Groups are stored sorted by pattern so that construction order never
    affects downstream results.
    """

    groups: tuple[LabelledGroup, ...]
    unlabelled: np.ndarray
    p: int
    names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        p = int(self.p)
        groups = tuple(sorted(self.groups, key=lambda g: g.pattern.observed))
        if not groups:
            raise EmptyDataset("no labelled rows")
        pats = [g.pattern for g in groups]
        if len(set(pats)) != len(pats):
            raise ValueError("group patterns must be pairwise distinct")
        for g in groups:
            if g.pattern.observed[-1] >= p:
                raise ValueError(f"pattern {g.pattern.observed} exceeds dimension {p}")
        seen = np.zeros(p, dtype=bool)
        for g in groups:
            seen[list(g.observed)] = True
        if not seen.all():
            j = int(np.flatnonzero(~seen)[0])
            raise VariableNeverObserved(j, None if self.names is None else self.names[j])
        u = np.asarray(self.unlabelled, dtype=float)
        if u.size == 0:
            u = np.zeros((0, p))
        if u.ndim != 2 or u.shape[1] != p:
            raise ValueError(f"unlabelled block must have shape (N, {p}), got {u.shape}")
        if not np.isfinite(u).all():
            raise PartiallyObservedUnlabelled(
                "unlabelled rows must be fully observed and finite")
        u.setflags(write=False)
        if self.names is not None and len(self.names) != p:
            raise ValueError("names must have one entry per covariate")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "unlabelled", u)
        object.__setattr__(self, "p", p)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def K(self) -> int:
        return len(self.groups)

    @property
    def N(self) -> int:
        return self.unlabelled.shape[0]

    @property
    def n_labelled(self) -> int:
        return int(sum(g.n for g in self.groups))

    @property
    def group_sizes(self) -> np.ndarray:
        return np.array([g.n for g in self.groups], dtype=int)

    @property
    def patterns(self) -> list[ObservationPattern]:
        return [g.pattern for g in self.groups]

    def complete_group(self) -> Optional[LabelledGroup]:
        for g in self.groups:
            if g.pattern.is_complete(self.p):
                return g
        return None

    @cached_property
    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(X with zeros at missing cells, observation mask, y, group index) over all labelled rows."""
        n, p = self.n_labelled, self.p
        X = np.zeros((n, p))
        M = np.zeros((n, p), dtype=bool)
        y = np.empty(n)
        gid = np.empty(n, dtype=int)
        r = 0
        for k, g in enumerate(self.groups):
            obs = list(g.observed)
            X[r:r + g.n, obs] = g.x
            M[r:r + g.n, obs] = True
            y[r:r + g.n] = g.y
            gid[r:r + g.n] = k
            r += g.n
        for a in (X, M, y, gid):
            a.setflags(write=False)
        return X, M, y, gid

    def take(self, rows: Sequence[np.ndarray], unlabelled_rows: Optional[np.ndarray] = None
             ) -> "MissingDataset":
        """Sub-dataset keeping ``rows[k]`` of group k (empty groups are dropped)."""
        groups = []
        for g, idx in zip(self.groups, rows):
            idx = np.asarray(idx, dtype=int)
            if idx.size:
                groups.append(LabelledGroup(g.pattern, g.x[idx], g.y[idx]))
        u = self.unlabelled if unlabelled_rows is None else self.unlabelled[
            np.asarray(unlabelled_rows, dtype=int)]
        return MissingDataset(tuple(groups), u, self.p, self.names)

    def with_unlabelled(self, unlabelled: np.ndarray) -> "MissingDataset":
        return MissingDataset(self.groups, unlabelled, self.p, self.names)

    def __repr__(self) -> str:
        return (f"MissingDataset(p={self.p}, K={self.K}, n_L={self.n_labelled}, "
                f"N={self.N})")


def group_by_pattern(X, y, unlabelled=None, names=None) -> MissingDataset:
    """Group labelled rows by their observed-index set.

    Parameters
    ----------
    X : array-like, shape (n, p)
        Covariates with ``nan`` marking missing cells.
    y : array-like, shape (n,)
        Responses. A row with ``nan`` response is routed to the unlabelled
        block, which is only allowed when all of its covariates are present.
    unlabelled : array-like, shape (N, p), optional
        Extra covariate-only rows, all observed.
    names : sequence of str, optional
        Covariate names, carried through for reporting.

    Returns
    -------
    MissingDataset
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim != 2:
        raise ValueError("X must be two-dimensional")
    n, p = X.shape
    if y.shape[0] != n:
        raise ValueError("X and y must have the same number of rows")
    if np.isinf(X).any() or np.isinf(y).any():
        raise NonFiniteValue("infinite values are not allowed")

    obs = ~np.isnan(X)
    unl_rows = np.isnan(y)
    partial = unl_rows & ~obs.all(axis=1)
    if partial.any():
        i = int(np.flatnonzero(partial)[0])
        raise PartiallyObservedUnlabelled(
            f"row {i} has no response and missing covariates; unlabelled rows must be complete")
    lab = ~unl_rows
    if not lab.any():
        raise EmptyDataset("no labelled rows")
    empty = lab & ~obs.any(axis=1)
    if empty.any():
        raise NoObservedCovariates(f"row {int(np.flatnonzero(empty)[0])} observes no covariate")

    U = [X[unl_rows]]
    if unlabelled is not None:
        extra = np.asarray(unlabelled, dtype=float).reshape(-1, p)
        if not np.isfinite(extra).all():
            raise PartiallyObservedUnlabelled("unlabelled rows must be fully observed")
        U.append(extra)
    U = np.vstack(U) if any(u.size for u in U) else np.zeros((0, p))

    Xl, Ol, yl = X[lab], obs[lab], y[lab]
    keys, inverse = np.unique(Ol, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    groups = []
    for k, key in enumerate(keys):
        rows = np.flatnonzero(inverse == k)
        cols = np.flatnonzero(key)
        groups.append(LabelledGroup(ObservationPattern(tuple(cols)),
                                    Xl[np.ix_(rows, cols)], yl[rows]))
    return MissingDataset(tuple(groups), U, p, None if names is None else tuple(names))


@dataclass(frozen=True, eq=False)
class ModalityPartition:
    """Variables grouped by the exact set of patterns that observe them."""

    label: np.ndarray
    sizes: np.ndarray

    @property
    def L(self) -> int:
        return len(self.sizes)

    def members(self, l: int) -> np.ndarray:
        return np.flatnonzero(self.label == l)

    def modalities_of(self, pattern: ObservationPattern) -> np.ndarray:
        return np.unique(self.label[list(pattern.observed)])


def partition_modalities(dataset: MissingDataset) -> ModalityPartition:
    """Coarsest partition of the variables such that every pattern is a union of blocks.

    Two variables share a modality iff exactly the same patterns observe them.
    Modalities are numbered in order of their smallest member.
    """
    membership = np.stack([g.pattern.mask(dataset.p) for g in dataset.groups], axis=1)
    label = np.empty(dataset.p, dtype=int)
    ids: dict[bytes, int] = {}
    for j in range(dataset.p):
        key = np.packbits(membership[j]).tobytes()
        label[j] = ids.setdefault(key, len(ids))
    sizes = np.bincount(label, minlength=len(ids))
    label.setflags(write=False)
    sizes.setflags(write=False)
    return ModalityPartition(label, sizes)


@dataclass(frozen=True, eq=False)
class SampleCounts:
    h: np.ndarray
    n_cross: np.ndarray

    def check_pairs(self, N: int) -> None:
        """Raise PairNeverObserved if some pair of modalities has no data at all."""
        bad = np.argwhere(self.n_cross + N <= 0)
        if bad.size:
            g, h = bad[0]
            raise PairNeverObserved(int(g), int(h))


def compute_counts(dataset: MissingDataset, partition: ModalityPartition) -> SampleCounts:
    L = partition.L
    h = np.zeros(L, dtype=np.int64)
    n_cross = np.zeros((L, L), dtype=np.int64)
    for g in dataset.groups:
        covered = partition.modalities_of(g.pattern)
        h[covered] += g.n
        n_cross[np.ix_(covered, covered)] += g.n
    h.setflags(write=False)
    n_cross.setflags(write=False)
    return SampleCounts(h, n_cross)


def _parse_cell(tok: str) -> float:
    tok = tok.strip()
    if tok in MISSING_TOKENS:
        return np.nan
    v = float(tok)
    if not np.isfinite(v):
        raise NonFiniteValue(f"non-finite value {tok!r}")
    return v


def read_csv(path, response: str, unlabelled_path=None) -> MissingDataset:
    """Read a CSV with a header row; ``NA`` or an empty field marks a missing cell.

    Rows whose response is missing become unlabelled rows (they must be
    complete). ``unlabelled_path`` may name a second CSV with the same
    covariate columns and no response column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataset(f"{path} is empty") from None
        if response not in header:
            raise MissregError(f"response column {response!r} not found in {path}")
        r = header.index(response)
        names = [h for i, h in enumerate(header) if i != r]
        rows = [[_parse_cell(t) for t in line] for line in reader if line]
    if not rows:
        raise EmptyDataset(f"{path} has no data rows")
    arr = np.array(rows, dtype=float)
    if arr.shape[1] != len(header):
        raise MissregError("ragged CSV rows")
    y = arr[:, r]
    X = np.delete(arr, r, axis=1)
    extra = None
    if unlabelled_path is not None:
        with open(unlabelled_path, newline="") as fh:
            reader = csv.reader(fh)
            uhead = [h.strip() for h in next(reader)]
            urows = [[_parse_cell(t) for t in line] for line in reader if line]
        order = [uhead.index(nm) for nm in names]
        extra = np.array(urows, dtype=float).reshape(-1, len(uhead))[:, order]
    return group_by_pattern(X, y, extra, names)


def _fmt(v: float) -> str:
    return "NA" if np.isnan(v) else repr(float(v))


def write_groups_csv(dataset: MissingDataset, path_or_file, response: str = "y") -> None:
    """Export grouped data (group id, covariates with NA, response) for debugging.

    Unlabelled rows get group id ``U`` and response ``NA``; reading the file
    back with :func:`read_csv` (ignoring the ``group`` column) round-trips.
    """
    names = list(dataset.names) if dataset.names else [f"x{j + 1}" for j in range(dataset.p)]
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group"] + names + [response])
        for k, g in enumerate(dataset.groups):
            full = np.full((g.n, dataset.p), np.nan)
            full[:, list(g.observed)] = g.x
            for row, yy in zip(full, g.y):
                w.writerow([k] + [_fmt(v) for v in row] + [_fmt(yy)])
        for row in dataset.unlabelled:
            w.writerow(["U"] + [_fmt(v) for v in row] + ["NA"])
    finally:
        if own:
            fh.close()


def dataset_from_rows(rows: Iterable[tuple[Sequence[Optional[float]], Optional[float]]], p=None
                      ) -> MissingDataset:
    """Convenience wrapper: rows are ``(covariates with None for missing, response)``."""
    rows = list(rows)
    if not rows:
        raise EmptyDataset("no rows")
    p = len(rows[0][0]) if p is None else p
    X = np.array([[np.nan if v is None else v for v in r[0]] for r in rows], dtype=float)
    y = np.array([np.nan if r[1] is None else r[1] for r in rows], dtype=float)
    return group_by_pattern(X.reshape(-1, p), y)


def center_dataset(dataset: MissingDataset) -> tuple[MissingDataset, np.ndarray, float]:
    """Subtract covariate means (pooled over every observed cell, labelled and
    unlabelled) and the labelled response mean. Returns ``(centred, x_means, y_mean)``."""
    X, M, y, _ = dataset.stacked
    U = dataset.unlabelled
    counts = M.sum(axis=0) + U.shape[0]
    mu = (X.sum(axis=0) + U.sum(axis=0)) / counts
    ybar = float(y.mean())
    groups = tuple(LabelledGroup(g.pattern, g.x - mu[list(g.observed)], g.y - ybar)
                   for g in dataset.groups)
    return MissingDataset(groups, U - mu, dataset.p, dataset.names), mu, ybar
