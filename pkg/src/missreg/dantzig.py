"""Dantzig selector on missing-data moments: min |beta|_1 s.t. |Sigma_hat beta - gamma_hat|_inf <= lambda.

Sigma_hat may be indefinite; the program stays a linear program regardless.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence, Union

import numpy as np

from .errors import FoldTooSmall, Infeasible, IterationCap, MissregError
from .lowdim import fit_weighted_imputation, pooled_noise_variance, split_folds, unit_weights
from .moments import MomentEstimates, estimate_moments
from .patterns import MissingDataset
from .simplex import StandardFormLP, simplex

log = logging.getLogger(__name__)

FEAS_SLACK = 1e-8


@dataclass(frozen=True, eq=False)
class DantzigProblem:
    sigma: np.ndarray
    gamma: np.ndarray
    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def zero_feasible(self) -> bool:
        return float(np.max(np.abs(self.gamma), initial=0.0)) <= self.lam


@dataclass(frozen=True, eq=False)
class DantzigLP:
    lp: StandardFormLP
    p: int
    zero_feasible: bool


@dataclass(frozen=True, eq=False)
class LPSolution:
    beta: np.ndarray
    objective: float
    iterations: int
    status: Literal["optimal", "infeasible", "unbounded", "iteration-cap"]


def build_lp(problem: DantzigProblem) -> DantzigLP:
    """Split beta = u - v with u, v >= 0 and add one slack per inequality.

    Columns are ordered (u_1..u_p, v_1..v_p, slack_upper, slack_lower); rows are
    Sigma(u - v) + s = lambda + gamma followed by -Sigma(u - v) + s' = lambda - gamma.
    """
    S = np.asarray(problem.sigma, dtype=float)
    g = np.asarray(problem.gamma, dtype=float)
    p = g.size
    I = np.eye(p)
    Z = np.zeros((p, p))
    A = np.block([[S, -S, I, Z], [-S, S, Z, I]])
    b = np.concatenate([problem.lam + g, problem.lam - g])
    c = np.concatenate([np.ones(2 * p), np.zeros(2 * p)])
    return DantzigLP(StandardFormLP(c, A, b), p, problem.zero_feasible)


def lp_solve(dlp: DantzigLP, max_iter: Optional[int] = None) -> LPSolution:
    if dlp.zero_feasible:
        # beta = 0 is feasible with objective 0, which no other point can beat
        return LPSolution(np.zeros(dlp.p), 0.0, 0, "optimal")
    res = simplex(dlp.lp, max_iter)
    p = dlp.p
    beta = res.x[:p] - res.x[p:2 * p]
    obj = float(np.abs(beta).sum()) if res.status == "optimal" else float("nan")
    return LPSolution(beta, obj, res.iterations, res.status)


def solve_dantzig(sigma: np.ndarray, gamma: np.ndarray, lam: float) -> LPSolution:
    """Build and solve; raise on anything but an optimal status."""
    sol = lp_solve(build_lp(DantzigProblem(sigma, gamma, lam)))
    if sol.status == "infeasible":
        raise Infeasible(f"no beta satisfies the constraints at lambda={lam:.6g}")
    if sol.status != "optimal":
        raise IterationCap(f"simplex stopped with status {sol.status} after {sol.iterations} pivots")
    return sol


# -- regularisation rules ------------------------------------------------------------


def lambda_unstructured(A: float, R_X: float, sigma: float, beta_norm: float, rho: float,
                        n_labelled: int, N: int, p: int) -> float:
    """lambda = A sqrt(max{ R^2 (sigma + R |b|)^2 log p / (rho n),  R^4 |b|^2 log p / (rho^2 n + N) })."""
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    lp = np.log(p)
    t1 = R_X ** 2 * (sigma + R_X * beta_norm) ** 2 * lp / (rho * n_labelled)
    t2 = R_X ** 4 * beta_norm ** 2 * lp / (rho ** 2 * n_labelled + N)
    return float(A * np.sqrt(max(t1, t2)))


def lambda_structured(A: float, R_X: float, sigma: float, beta_norm: float,
                      sizes: Sequence[int], h: Sequence[int], n_cross: np.ndarray,
                      N: int) -> float:
    """Blockwise rule: a per-modality noise term over h_l and a covariance term over
    N + min_g n_{g,h}, each with log(2 L |L_l|)."""
    sizes = np.asarray(sizes, dtype=float)
    h = np.asarray(h, dtype=float)
    n_cross = np.asarray(n_cross, dtype=float)
    L = sizes.size
    logs = np.log(2 * L * sizes)
    first = np.sqrt(R_X ** 2 * (sigma + R_X * beta_norm) ** 2 * logs / h).max()
    second = (L * np.sqrt(R_X ** 4 * beta_norm ** 2 * logs / (N + n_cross.min(axis=0)))).max()
    return float(A * max(first, second))


def max_valid_rho(moments: MomentEstimates, n_labelled: int) -> float:
    """Largest rho with rho n_L <= h_g and rho^2 n_L <= n_gh for every modality pair."""
    c = moments.counts
    return float(min(c.h.min() / n_labelled, np.sqrt(c.n_cross.min() / n_labelled), 1.0))


@dataclass(frozen=True)
class LambdaRule:
    variant: Literal["unstructured", "structured"] = "unstructured"
    A: float = 1.0
    R_X: float = 1.0
    sigma: Optional[float] = None
    beta_norm: Optional[float] = None
    rho: Optional[float] = None

    def plug_ins(self, dataset: MissingDataset, moments: MomentEstimates) -> tuple[float, float]:
        if self.sigma is not None and self.beta_norm is not None:
            return self.sigma, self.beta_norm
        s2, bn = pilot_plug_ins(dataset, moments.sigma)
        return (np.sqrt(s2) if self.sigma is None else self.sigma,
                bn if self.beta_norm is None else self.beta_norm)

    def value(self, dataset: MissingDataset, moments: MomentEstimates) -> float:
        sigma, bn = self.plug_ins(dataset, moments)
        if self.variant == "unstructured":
            rho = max_valid_rho(moments, dataset.n_labelled) if self.rho is None else self.rho
            return lambda_unstructured(self.A, self.R_X, sigma, bn, rho,
                                       dataset.n_labelled, dataset.N, dataset.p)
        part, c = moments.partition, moments.counts
        return lambda_structured(self.A, self.R_X, sigma, bn, part.sizes, c.h, c.n_cross,
                                 dataset.N)


def pilot_plug_ins(dataset: MissingDataset, sigma_hat: np.ndarray) -> tuple[float, float]:
    """(sigma^2, |beta|_2) from a unit-weight imputation fit on an eigenvalue-floored Sigma_hat."""
    w, V = np.linalg.eigh((sigma_hat + sigma_hat.T) / 2)
    floor = 1e-3 * max(float(np.mean(np.abs(w))), np.finfo(float).tiny)
    S = (V * np.maximum(w, floor)) @ V.T
    fit = fit_weighted_imputation(dataset, S, unit_weights(dataset))
    return pooled_noise_variance(dataset, S, fit.beta), float(np.linalg.norm(fit.beta))


# -- fitting ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DantzigFit:
    beta: np.ndarray
    lam: float
    solution: LPSolution
    moments: MomentEstimates
    cv_table: Optional[list] = None
    diagnostics: dict = field(default_factory=dict)


def fit_dantzig(dataset: MissingDataset,
                lam: Union[float, LambdaRule, Literal["cv"]],
                grid: Optional[Sequence[float]] = None, folds: int = 5, seed: int = 0
                ) -> DantzigFit:
    """Dantzig selector on the unbiased moment estimates of ``dataset``.

    ``lam`` is a fixed value, a :class:`LambdaRule`, or ``"cv"`` for
    cross-validation over ``grid``.
    """
    mom = estimate_moments(dataset)
    table = None
    if isinstance(lam, str):
        if lam != "cv":
            raise ValueError(f"unknown lambda specification {lam!r}")
        lam_value, table = cross_validate_lambda(dataset, grid, folds, seed, moments=mom)
    elif isinstance(lam, LambdaRule):
        lam_value = lam.value(dataset, mom)
    else:
        lam_value = float(lam)
    sol = solve_dantzig(mom.sigma, mom.gamma, lam_value)
    resid = float(np.max(np.abs(mom.sigma @ sol.beta - mom.gamma), initial=0.0))
    return DantzigFit(sol.beta, lam_value, sol, mom, table, {"max_constraint": resid})


def default_grid(gamma: np.ndarray, size: int = 30, lo: float = 0.01, hi: float = 1.0
                 ) -> np.ndarray:
    top = float(np.max(np.abs(gamma)))
    return np.geomspace(lo * top, hi * top, size)


def cv_loss(beta: np.ndarray, sigma_val: np.ndarray, gamma_val: np.ndarray) -> float:
    """beta^T Sigma beta - 2 beta^T gamma: prediction risk up to a beta-free constant."""
    return float(beta @ sigma_val @ beta - 2 * beta @ gamma_val)


def cross_validate_lambda(dataset: MissingDataset, grid: Optional[Sequence[float]] = None,
                          folds: int = 5, seed: int = 0,
                          moments: Optional[MomentEstimates] = None) -> tuple[float, list]:
    """K-fold selection of lambda on the moment-matching loss.

    Labelled rows are split within each pattern and unlabelled rows are split
    at random. Each fold fits on the training moments and scores on the
    held-out moments; the smallest mean loss wins, ties going to the larger
    lambda. Returns ``(lambda*, rows)`` with rows ``(lambda, mean_loss, fold_losses)``.
    """
    if moments is None:
        moments = estimate_moments(dataset)
    grid = default_grid(moments.gamma) if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("grid must be non-empty and positive")
    if grid.size == 1:
        return float(grid[0]), [(float(grid[0]), float("nan"), [])]
    if dataset.n_labelled < folds:
        raise FoldTooSmall(f"{dataset.n_labelled} labelled rows cannot fill {folds} folds")
    labels = split_folds(dataset, folds, seed)
    rng = np.random.default_rng([seed, 1])
    ulab = rng.permutation(np.arange(dataset.N) % folds) if dataset.N else np.zeros(0, int)
    losses = np.full((grid.size, folds), np.nan)
    for f in range(folds):
        val_rows = [np.flatnonzero(l == f) for l in labels]
        tr_rows = [np.flatnonzero(l != f) for l in labels]
        try:
            train = dataset.take(tr_rows, np.flatnonzero(ulab != f))
            tr_mom = estimate_moments(train)
        except MissregError as exc:
            raise FoldTooSmall(f"training split {f} is degenerate: {exc}") from exc
        if not any(r.size for r in val_rows):
            raise FoldTooSmall(f"fold {f} has no labelled rows")
        val = _ValidationView(dataset, val_rows, np.flatnonzero(ulab == f))
        g_val, s_val = val.moments(tr_mom)
        for i, lam in enumerate(grid):
            sol = lp_solve(build_lp(DantzigProblem(tr_mom.sigma, tr_mom.gamma, float(lam))))
            if sol.status != "optimal":
                log.info("fold %d lambda %.4g: %s", f, lam, sol.status)
                continue
            losses[i, f] = cv_loss(sol.beta, s_val, g_val)
    mean = np.where(np.isnan(losses).any(axis=1), np.inf, np.nanmean(
        np.where(np.isnan(losses), 0.0, losses), axis=1))
    if not np.isfinite(mean).any():
        raise Infeasible("no grid value was feasible on every fold")
    best = np.flatnonzero(mean <= mean.min())
    i_star = int(best.max())
    rows = [(float(l), float(m), [float(v) for v in losses[i]])
            for i, (l, m) in enumerate(zip(grid, mean))]
    return float(grid[i_star]), rows


class _ValidationView:
    """Held-out rows; kept as raw arrays because a fold may miss whole variables."""

    def __init__(self, dataset: MissingDataset, rows, urows):
        X, M, y, gid = dataset.stacked
        starts = np.concatenate([[0], np.cumsum(dataset.group_sizes)[:-1]])
        idx = np.concatenate([s + r for s, r in zip(starts, rows)]).astype(int)
        self.X, self.M, self.y = X[idx], M[idx], y[idx]
        self.U = dataset.unlabelled[urows]

    def moments(self, fallback: MomentEstimates) -> tuple[np.ndarray, np.ndarray]:
        Mf = self.M.astype(float)
        N = self.U.shape[0]
        h = Mf.sum(axis=0)
        npair = Mf.T @ Mf + N
        num_s = self.X.T @ self.X + self.U.T @ self.U
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(h > 0, (self.X.T @ self.y) / h, fallback.gamma)
            S = np.where(npair > 0, num_s / npair, fallback.sigma)
        return g, (S + S.T) / 2
