"""Weighted-imputation least squares for low-dimensional regression with missing covariates.

Each labelled row with pattern O is imputed through the conditional-mean map
x_O -> P_O^T x_O, where P_O = Sigma_OO^{-1} Sigma_O, and the imputed rows enter a
weighted least-squares fit with one weight per pattern.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import (
    CovarianceNotPD,
    NoCompleteCases,
    PatternTooSmall,
    SingularBlock,
    SingularDesign,
    SingularGram,
)
from .moments import ClipConfig, EIG_TOL, clip_covariance, estimate_covariance_pairwise
from .patterns import (
    MissingDataset,
    ObservationPattern,
    compute_counts,
    partition_modalities,
)

log = logging.getLogger(__name__)

Provenance = Literal["oracle", "estimated", "unit"]
CovSource = Literal["oss-unlabelled", "supervised-pairwise", "user"]


def chol_solve(A: np.ndarray, B: np.ndarray, exc=SingularBlock, what="matrix") -> np.ndarray:
    """Solve A X = B for symmetric PD A by Cholesky, retrying once with a small diagonal jitter."""
    A = (A + A.T) / 2
    try:
        return sla.cho_solve(sla.cho_factor(A, lower=True), B)
    except (np.linalg.LinAlgError, sla.LinAlgError):
        pass
    p = A.shape[0]
    jitter = 1e-12 * max(np.trace(A), 0.0) / p
    try:
        return sla.cho_solve(sla.cho_factor(A + jitter * np.eye(p), lower=True), B)
    except (np.linalg.LinAlgError, sla.LinAlgError):
        if exc is SingularGram:
            raise SingularGram(np.linalg.cond(A)) from None
        raise exc(f"{what} is not positive definite") from None


def ensure_pd(sigma: np.ndarray, clip: Optional[ClipConfig]) -> tuple[np.ndarray, bool]:
    """Clip when bounds are given; otherwise insist the matrix is already PD."""
    if clip is not None:
        return clip_covariance(sigma, clip)
    if np.linalg.eigvalsh((sigma + sigma.T) / 2)[0] <= EIG_TOL:
        raise CovarianceNotPD(
            "covariance estimate is not positive definite; supply eigenvalue clip bounds")
    return sigma, False


def conditional_projection(sigma_pd: np.ndarray, pattern: ObservationPattern) -> np.ndarray:
    """P = Sigma_OO^{-1} Sigma_O, shape (|O|, p). ``P.T @ x_O`` imputes missing coordinates
    by their conditional mean and leaves observed ones unchanged."""
    O = list(pattern.observed)
    P = chol_solve(sigma_pd[np.ix_(O, O)], sigma_pd[O, :], SingularBlock, "Sigma_OO block")
    # the observed block is the identity in exact arithmetic
    P[:, O] = np.eye(len(O))
    return P


def schur_complement(Sigma: np.ndarray, pattern: ObservationPattern) -> np.ndarray:
    """Conditional covariance of the missing block given the observed one."""
    p = Sigma.shape[0]
    O, M = list(pattern.observed), list(pattern.missing(p))
    if not M:
        return np.zeros((0, 0))
    return Sigma[np.ix_(M, M)] - Sigma[np.ix_(M, O)] @ chol_solve(
        Sigma[np.ix_(O, O)], Sigma[np.ix_(O, M)])


@dataclass(frozen=True, eq=False)
class WeightSet:
    d: np.ndarray
    provenance: Provenance
    kappa_l: Optional[float] = None
    kappa_u: Optional[float] = None

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        if not (np.all(d > 0) and np.all(np.isfinite(d))):
            raise ValueError("weights must be positive and finite")
        object.__setattr__(self, "d", d)

    def scaled(self, c: float) -> "WeightSet":
        return WeightSet(self.d * c, self.provenance, self.kappa_l, self.kappa_u)


def unit_weights(dataset: MissingDataset) -> WeightSet:
    return WeightSet(np.ones(dataset.K), "unit")


@dataclass(frozen=True, eq=False)
class LowDimFit:
    beta: np.ndarray
    weights: WeightSet
    alpha_hat: np.ndarray
    cov_source: CovSource = "user"
    thresholded: bool = False
    clipped: bool = False
    diagnostics: dict = field(default_factory=dict)


def oracle_weights(sigma: float, beta: np.ndarray, Sigma: np.ndarray,
                   patterns: Sequence[ObservationPattern]) -> WeightSet:
    """D_k = sigma^2 / (sigma^2 + beta_M^T S_M beta_M) with S_M the Schur complement of the
    missing block."""
    beta = np.asarray(beta, dtype=float)
    s2 = float(sigma) ** 2
    p = len(beta)
    d = []
    for pat in patterns:
        M = list(pat.missing(p))
        extra = float(beta[M] @ schur_complement(Sigma, pat) @ beta[M]) if M else 0.0
        d.append(s2 / (s2 + extra))
    return WeightSet(np.array(d), "oracle")


def clip_residual_variance(d_hat: float, kappa_l: float, kappa_u: float) -> float:
    if d_hat <= kappa_l / 2:
        return kappa_l
    if d_hat >= 2 * kappa_u:
        return kappa_u
    return d_hat


def estimate_weights(dataset: MissingDataset, kappa_l: float, kappa_u: float) -> WeightSet:
    """Per-pattern OLS residual variance, clipped, inverted into weights."""
    if not (0 < kappa_l <= kappa_u):
        raise ValueError("need 0 < kappa_l <= kappa_u")
    d = []
    for k, g in enumerate(dataset.groups):
        if g.n <= len(g.pattern):
            raise PatternTooSmall(k, g.n, len(g.pattern) + 1)
        phi, _, rank, _ = np.linalg.lstsq(g.x, g.y, rcond=None)
        if rank < len(g.pattern):
            raise SingularDesign(f"pattern {k} design matrix is rank deficient")
        d_hat = float(np.sum((g.y - g.x @ phi) ** 2) / g.n)
        d.append(clip_residual_variance(d_hat, kappa_l, kappa_u))
    return WeightSet(1.0 / np.array(d), "estimated", kappa_l, kappa_u)


def complete_case_ols(dataset: MissingDataset) -> tuple[np.ndarray, float]:
    """OLS on the fully observed group; returns (beta, residual variance RSS/(n - p))."""
    g = dataset.complete_group()
    if g is None or g.n <= dataset.p:
        raise NoCompleteCases(f"need more than {dataset.p} complete labelled rows")
    beta, _, rank, _ = np.linalg.lstsq(g.x, g.y, rcond=None)
    if rank < dataset.p:
        raise SingularDesign("complete-case design matrix is rank deficient")
    rss = float(np.sum((g.y - g.x @ beta) ** 2))
    return beta, rss / (g.n - dataset.p)


def pilot_weights(dataset: MissingDataset, sigma_pd: np.ndarray,
                  pilot: Literal["unit", "cc"] = "unit") -> WeightSet:
    """Plug-in weights from an initial consistent fit.

    ``pilot="unit"`` fits the unit-weight estimator and pools the residual
    variance across patterns after removing each pattern's imputation
    variance. ``pilot="cc"`` uses the complete-case OLS fit and its residual
    variance. Either way the plug-ins go through :func:`oracle_weights` with
    ``sigma_pd`` standing in for the true covariance.
    """
    if pilot == "cc":
        beta0, s2 = complete_case_ols(dataset)
    elif pilot == "unit":
        beta0 = fit_weighted_imputation(dataset, sigma_pd, unit_weights(dataset)).beta
        s2 = pooled_noise_variance(dataset, sigma_pd, beta0)
    else:
        raise ValueError(f"unknown pilot {pilot!r}")
    w = oracle_weights(np.sqrt(s2), beta0, sigma_pd, dataset.patterns)
    return WeightSet(w.d, "estimated")


def pooled_noise_variance(dataset: MissingDataset, sigma_pd: np.ndarray,
                          beta0: np.ndarray) -> float:
    """sigma^2 estimate: mean squared imputation residual minus each pattern's
    imputation variance beta_M^T S_M beta_M, floored at a tiny positive value."""
    p = dataset.p
    excess = 0.0
    for g in dataset.groups:
        P = conditional_projection(sigma_pd, g.pattern)
        r = g.y - g.x @ (P @ beta0)
        M = list(g.pattern.missing(p))
        quad = float(beta0[M] @ schur_complement(sigma_pd, g.pattern) @ beta0[M]) if M else 0.0
        excess += float(r @ r) - g.n * quad
    s2 = excess / dataset.n_labelled
    floor = 1e-8 * float(np.mean(dataset.stacked[2] ** 2))
    return max(s2, floor, np.finfo(float).tiny)


def default_kappas(dataset: MissingDataset, sigma_pd: Optional[np.ndarray] = None
                   ) -> tuple[float, float]:
    """Loose clip bounds (s2/100, 100 s2) around the complete-case residual variance,
    or around the pooled unit-weight estimate when there are too few complete rows."""
    try:
        _, s2 = complete_case_ols(dataset)
    except (NoCompleteCases, SingularDesign):
        if sigma_pd is None:
            raise
        beta0 = fit_weighted_imputation(dataset, sigma_pd, unit_weights(dataset)).beta
        s2 = pooled_noise_variance(dataset, sigma_pd, beta0)
    return s2 / 100, 100 * s2


def effective_sample_sizes(weights: WeightSet, group_sizes: Sequence[int],
                           patterns: Sequence[ObservationPattern], p: int) -> np.ndarray:
    """alpha_i = sum_k D_k n_k 1{i observed in pattern k}."""
    alpha = np.zeros(p)
    for dk, nk, pat in zip(weights.d, group_sizes, patterns):
        alpha[list(pat.observed)] += dk * nk
    return alpha


def _gram_and_score(dataset: MissingDataset, sigma_pd: np.ndarray, d: np.ndarray):
    p = dataset.p
    B = np.zeros((p, p))
    score = np.zeros(p)
    for dk, g in zip(d, dataset.groups):
        P = conditional_projection(sigma_pd, g.pattern)
        G = g.x.T @ g.x
        B += dk * (P.T @ G @ P)
        score += dk * (P.T @ (g.x.T @ g.y))
    return (B + B.T) / 2, score


def fit_weighted_imputation(dataset: MissingDataset, sigma_pd: np.ndarray, weights: WeightSet,
                            cov_source: CovSource = "user", clipped: bool = False) -> LowDimFit:
    """Minimise sum_k D_k sum_{i in group k} (y_i - x_{i,O_k}^T P_k beta)^2."""
    if len(weights.d) != dataset.K:
        raise ValueError("need one weight per pattern")
    B, score = _gram_and_score(dataset, sigma_pd, weights.d)
    beta = chol_solve(B, score, SingularGram)
    alpha = effective_sample_sizes(weights, dataset.group_sizes, dataset.patterns, dataset.p)
    return LowDimFit(beta, weights, alpha, cov_source, False, clipped,
                     {"gram_cond": float(np.linalg.cond(B))})


def split_folds(dataset: MissingDataset, n_folds: int, seed: int) -> list[np.ndarray]:
    """Fold label for every labelled row, stratified by pattern.

    Each pattern is shuffled and dealt out in near-equal parts. The leftover
    rows of a pattern go to the currently smallest folds, lowest fold first,
    so singleton patterns still spread evenly.
    """
    rng = np.random.default_rng(seed)
    sizes = np.zeros(n_folds, dtype=int)
    labels = []
    for g in dataset.groups:
        perm = rng.permutation(g.n)
        base, extra = divmod(g.n, n_folds)
        counts = np.full(n_folds, base)
        order = np.lexsort((np.arange(n_folds), sizes))
        counts[order[:extra]] += 1
        lab = np.empty(g.n, dtype=int)
        lab[perm] = np.repeat(np.arange(n_folds), counts)
        sizes += counts
        labels.append(lab)
    return labels


def fold_subsets(dataset: MissingDataset, labels: Sequence[np.ndarray], f: int,
                 unlabelled_labels: Optional[np.ndarray] = None):
    """(rows in fold f, rows not in fold f) as two sub-datasets."""
    inside = [np.flatnonzero(l == f) for l in labels]
    outside = [np.flatnonzero(l != f) for l in labels]
    if unlabelled_labels is None:
        return dataset.take(inside), dataset.take(outside)
    return (dataset.take(inside, np.flatnonzero(unlabelled_labels == f)),
            dataset.take(outside, np.flatnonzero(unlabelled_labels != f)))


def _fold_weights(ds: MissingDataset, sigma_pd, mode, kappa_l, kappa_u) -> WeightSet:
    if mode == "unit":
        return unit_weights(ds)
    if mode == "pilot":
        return pilot_weights(ds, sigma_pd, "unit")
    if mode == "estimated":
        if kappa_l is None or kappa_u is None:
            kappa_l, kappa_u = default_kappas(ds, sigma_pd)
        return estimate_weights(ds, kappa_l, kappa_u)
    raise ValueError(f"unknown weight mode {mode!r}")


def fit_crossfit(dataset: MissingDataset, kappa_l: Optional[float] = None,
                 kappa_u: Optional[float] = None, clip: Optional[ClipConfig] = None,
                 weights: Literal["estimated", "pilot", "unit"] = "estimated", seed: int = 0,
                 folds: Optional[Sequence[np.ndarray]] = None) -> LowDimFit:
    """Two-fold cross-fitting for the supervised case.

    For each fold the covariance comes from the other fold (pairwise estimate,
    clipped), the weights from the fold itself, and the fit uses the fold
    itself; the two coefficient vectors are averaged.
    """
    if weights == "estimated":
        need = [2 * (len(g.pattern) + 1) for g in dataset.groups]
        for k, (g, m) in enumerate(zip(dataset.groups, need)):
            if g.n < m:
                raise PatternTooSmall(k, g.n, m)
    labels = split_folds(dataset, 2, seed) if folds is None else [np.asarray(f) for f in folds]
    betas, fits = [], []
    for f in (0, 1):
        own, other = fold_subsets(dataset, labels, f)
        part = partition_modalities(other)
        counts = compute_counts(other, part)
        sig = estimate_covariance_pairwise(other, part, counts)
        sig_pd, clipped = ensure_pd(sig, clip)
        w = _fold_weights(own, sig_pd, weights, kappa_l, kappa_u)
        fit = fit_weighted_imputation(own, sig_pd, w, "supervised-pairwise", clipped)
        betas.append(fit.beta)
        fits.append(fit)
    beta = (betas[0] + betas[1]) / 2
    # weights reported per pattern from the first fold that contains it
    index = {g.pattern: k for k, g in enumerate(dataset.groups)}
    d = np.full(dataset.K, np.nan)
    for fit, f in zip(fits[::-1], (1, 0)):
        own, _ = fold_subsets(dataset, labels, f)
        for g, dk in zip(own.groups, fit.weights.d):
            d[index[g.pattern]] = dk
    ws = WeightSet(np.nan_to_num(d, nan=1.0), fits[0].weights.provenance, kappa_l, kappa_u)
    alpha = effective_sample_sizes(ws, dataset.group_sizes, dataset.patterns, dataset.p)
    return LowDimFit(beta, ws, alpha, "supervised-pairwise", False,
                     fits[0].clipped or fits[1].clipped,
                     {"fold_betas": betas})


def default_rho(dataset: MissingDataset) -> tuple[float, float]:
    """(rho, C_rho) from the modality counts: rho = min_g h_g / n_L and C_rho the largest
    ratio h_g / (rho n_L) or n_gh / (rho^2 n_L), at least 1."""
    part = partition_modalities(dataset)
    c = compute_counts(dataset, part)
    n = dataset.n_labelled
    rho = float(c.h.min()) / n
    ratios = [c.h.max() / (rho * n)]
    L = part.L
    if L > 1:
        off = c.n_cross[~np.eye(L, dtype=bool)]
        ratios.append(off.max() / (rho ** 2 * n))
    return rho, max(1.0, float(max(ratios)))


def threshold_gram(B: np.ndarray, rho: float, n_labelled: int, c_rho: float,
                   clip: ClipConfig) -> tuple[np.ndarray, bool]:
    """Replace B by rho n_L I when the spectrum of B / (rho n_L) leaves its admissible band."""
    scale = rho * n_labelled
    ev = np.linalg.eigvalsh((B + B.T) / 2 / scale)
    lm, lp = clip.lambda_minus, clip.lambda_plus
    if ev[0] < lm ** 3 / (32 * lp ** 2) or ev[-1] > 32 * lp ** 3 * c_rho / lm ** 2:
        return scale * np.eye(B.shape[0]), True
    return B, False


def fit_thresholded_unstructured(dataset: MissingDataset, sigma_pd: np.ndarray,
                                 clip: ClipConfig, rho: Optional[float] = None,
                                 c_rho: Optional[float] = None,
                                 cov_source: CovSource = "user") -> LowDimFit:
    """Unit-weight imputation estimator with a thresholded Gram matrix."""
    if rho is None or c_rho is None:
        r0, c0 = default_rho(dataset)
        rho = r0 if rho is None else rho
        c_rho = c0 if c_rho is None else c_rho
    if not 0 < rho <= 1 or c_rho < 1:
        raise ValueError("need rho in (0, 1] and c_rho >= 1")
    w = unit_weights(dataset)
    B, score = _gram_and_score(dataset, sigma_pd, w.d)
    Bc, fired = threshold_gram(B, rho, dataset.n_labelled, c_rho, clip)
    beta = chol_solve(Bc, score, SingularGram)
    alpha = effective_sample_sizes(w, dataset.group_sizes, dataset.patterns, dataset.p)
    return LowDimFit(beta, w, alpha, cov_source, fired, False,
                     {"rho": rho, "c_rho": c_rho})
