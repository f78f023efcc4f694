"""Moment estimation under missingness, eigenvalue clipping and the restricted-eigenvalue diagnostic."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from .errors import ModalityNeverLabelled, PairNeverObserved, ScaleExceeded
from .patterns import (
    MissingDataset,
    ModalityPartition,
    SampleCounts,
    compute_counts,
    partition_modalities,
)

EIG_TOL = 1e-10
RE_MAX_P = 12
RE_MAX_S = 3


@dataclass(frozen=True, eq=False)
class MomentEstimates:
    gamma: np.ndarray
    sigma: np.ndarray
    counts: SampleCounts
    partition: ModalityPartition


@dataclass(frozen=True)
class ClipConfig:
    lambda_minus: float
    lambda_plus: float

    def __post_init__(self):
        if not (0 < self.lambda_minus <= self.lambda_plus):
            raise ValueError("need 0 < lambda_minus <= lambda_plus")


def estimate_gamma(dataset: MissingDataset, partition: ModalityPartition,
                   counts: SampleCounts) -> np.ndarray:
    """Unbiased estimate of E[XY]: per-variable sums of X_j Y over labelled rows observing j,
    divided by the modality count h of that variable."""
    zero = np.flatnonzero(counts.h == 0)
    if zero.size:
        raise ModalityNeverLabelled(int(zero[0]))
    X, _, y, _ = dataset.stacked
    return (X.T @ y) / counts.h[partition.label]


def estimate_covariance_pairwise(dataset: MissingDataset, partition: ModalityPartition,
                                 counts: SampleCounts) -> np.ndarray:
    """Unbiased, uncentred second-moment matrix pooling unlabelled rows and pairwise-complete
    labelled rows. The result is symmetric but need not be positive semi-definite."""
    N = dataset.N
    denom = counts.n_cross[np.ix_(partition.label, partition.label)] + N
    bad = np.argwhere(denom <= 0)
    if bad.size:
        i, j = bad[0]
        raise PairNeverObserved(int(partition.label[i]), int(partition.label[j]))
    X, _, _, _ = dataset.stacked
    num = X.T @ X
    if N:
        U = dataset.unlabelled
        num = num + U.T @ U
    S = num / denom
    return (S + S.T) / 2


def unlabelled_covariance(dataset: MissingDataset) -> np.ndarray:
    """Second-moment matrix of the unlabelled block alone."""
    if dataset.N == 0:
        raise PairNeverObserved(0, 0)
    U = dataset.unlabelled
    S = U.T @ U / dataset.N
    return (S + S.T) / 2


def estimate_moments(dataset: MissingDataset) -> MomentEstimates:
    partition = partition_modalities(dataset)
    counts = compute_counts(dataset, partition)
    counts.check_pairs(dataset.N)
    return MomentEstimates(
        estimate_gamma(dataset, partition, counts),
        estimate_covariance_pairwise(dataset, partition, counts),
        counts,
        partition,
    )


def clip_covariance(sigma: np.ndarray, clip: ClipConfig) -> tuple[np.ndarray, bool]:
    """Return ``(sigma, False)`` when its spectrum lies in [lambda_-/2, 2 lambda_+],
    otherwise ``(lambda_- * I, True)``."""
    sigma = np.asarray(sigma, dtype=float)
    ev = np.linalg.eigvalsh((sigma + sigma.T) / 2)
    if ev[0] >= clip.lambda_minus / 2 - EIG_TOL and ev[-1] <= 2 * clip.lambda_plus + EIG_TOL:
        return sigma, False
    return clip.lambda_minus * np.eye(sigma.shape[0]), True


# -- restricted eigenvalue ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class REResult:
    phi_squared: float
    witness_S: tuple[int, ...]
    witness_delta: np.ndarray


def re_denominator(delta: np.ndarray, S, s: int) -> np.ndarray:
    """Squared norm of delta restricted to S plus the s largest |entries| outside S.

    Ties at the threshold are all included. ``delta`` may be (p,) or (m, p).
    """
    d = np.atleast_2d(delta)
    p = d.shape[1]
    S = list(S)
    Sc = [j for j in range(p) if j not in set(S)]
    den = (d[:, S] ** 2).sum(axis=1)
    k = min(s, len(Sc))
    if k > 0:
        a = np.abs(d[:, Sc])
        thresh = np.sort(a, axis=1)[:, -k]
        den = den + np.where(a >= thresh[:, None], a ** 2, 0.0).sum(axis=1)
    return den if np.ndim(delta) == 2 else den[0]


def re_quotient(A: np.ndarray, delta: np.ndarray, S, s: int) -> np.ndarray:
    d = np.atleast_2d(delta)
    num = np.einsum("ij,jk,ik->i", d, A, d)
    q = num / re_denominator(d, S, s)
    return q if np.ndim(delta) == 2 else q[0]


def _retract(d: np.ndarray, S: np.ndarray, Sc: np.ndarray) -> np.ndarray:
    """Pull rows of ``d`` into the cone |d_Sc|_1 <= |d_S|_1, then onto the unit sphere."""
    d = d.copy()
    l1S = np.abs(d[:, S]).sum(axis=1)
    if Sc.size:
        l1Sc = np.abs(d[:, Sc]).sum(axis=1)
        over = l1Sc > l1S
        if over.any():
            d[np.ix_(over, Sc)] *= (l1S[over] / l1Sc[over])[:, None]
    nrm = np.linalg.norm(d, axis=1)
    # a step can collapse delta_S to zero; such rows become nan and are rejected
    with np.errstate(invalid="ignore", divide="ignore"):
        return d / nrm[:, None]


def _minimise_on_cone(A, S, s, starts, steps, step0):
    p = A.shape[0]
    S = np.asarray(S, dtype=int)
    Sc = np.setdiff1d(np.arange(p), S)
    d = _retract(starts, S, Sc)
    f = re_quotient(A, d, S, s)
    eta = np.full(d.shape[0], step0)
    for _ in range(steps):
        den = re_denominator(d, S, s)
        Ad = d @ A
        num = np.einsum("ij,ij->i", d, Ad)
        # gradient of the quotient with the set M(delta) held fixed
        inM = np.zeros_like(d, dtype=bool)
        inM[:, S] = True
        k = min(s, Sc.size)
        if k:
            a = np.abs(d[:, Sc])
            inM[:, Sc] = a >= np.sort(a, axis=1)[:, -k][:, None]
        grad = (2 * Ad * den[:, None] - 2 * num[:, None] * d * inM) / den[:, None] ** 2
        cand = _retract(d - eta[:, None] * grad, S, Sc)
        fc = re_quotient(A, cand, S, s)
        ok = fc < f
        d[ok] = cand[ok]
        f[ok] = fc[ok]
        eta = np.where(ok, np.minimum(eta * 2, 1.0), eta / 2)
        if (eta < 1e-14).all():
            break
    i = int(np.argmin(f))
    return f[i], d[i]


def restricted_eigenvalue(A: np.ndarray, s: int, n_starts: int = 64, steps: int = 500,
                          step: float = 1e-2, seed: Optional[int] = 0) -> REResult:
    """Cone-restricted curvature constant phi^2(A, s).

    Every support set S with 1 <= |S| <= s is enumerated; the inner infimum over
    the cone |delta_{S^c}|_1 <= |delta_S|_1 is approached by multistart
    projected gradient on the unit sphere. The value returned is attained at
    the reported witness, so it is an upper bound on the exact infimum.
    """
    A = np.asarray(A, dtype=float)
    p = A.shape[0]
    if A.shape != (p, p):
        raise ValueError("A must be square")
    if p > RE_MAX_P or s > RE_MAX_S:
        raise ScaleExceeded(f"restricted_eigenvalue is capped at p <= {RE_MAX_P}, s <= {RE_MAX_S}")
    if s < 1:
        raise ValueError("s must be >= 1")
    A = (A + A.T) / 2
    rng = np.random.default_rng(seed)
    best = (np.inf, (), None)
    for size in range(1, min(s, p) + 1):
        for S in combinations(range(p), size):
            fixed = [np.eye(p)[j] for j in S]
            w, V = np.linalg.eigh(A[np.ix_(S, S)])
            for col in range(V.shape[1]):
                v = np.zeros(p)
                v[list(S)] = V[:, col]
                fixed.append(v)
            starts = np.vstack([np.array(fixed), rng.standard_normal((n_starts, p))])
            val, delta = _minimise_on_cone(A, S, s, starts, steps, step)
            if val < best[0]:
                best = (float(val), S, delta)
    # phi^2 >= lambda_min for PSD A; clamping only removes rounding below that bound
    lmin = float(np.linalg.eigvalsh(A)[0])
    phi2 = max(best[0], lmin) if lmin >= 0 else best[0]
    return REResult(phi2, best[1], best[2])
