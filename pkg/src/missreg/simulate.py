"""Data generators, missingness injectors, baselines and experiment drivers."""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Literal, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import toeplitz

from .dantzig import default_grid, fit_dantzig
from .errors import NoCompleteCases, PDFailure, UnknownExperiment, VariableNeverObserved
from .lowdim import (
    LowDimFit,
    complete_case_ols,
    ensure_pd,
    fit_crossfit,
    fit_weighted_imputation,
    oracle_weights,
    pilot_weights,
    unit_weights,
)
from .moments import (
    ClipConfig,
    estimate_covariance_pairwise,
    estimate_moments,
    unlabelled_covariance,
)
from .patterns import (
    LabelledGroup,
    MissingDataset,
    ObservationPattern,
    compute_counts,
    partition_modalities,
)

log = logging.getLogger(__name__)

MAX_RESAMPLE = 100
PD_RETRIES = 10
PD_TOL = 1e-10


# -- generators ------------------------------------------------------------------------


def gen_ar_covariance(p: int, r: float) -> np.ndarray:
    """Toeplitz matrix with entries r^|i-j|."""
    if not abs(r) < 1:
        raise ValueError("need |r| < 1")
    return toeplitz(float(r) ** np.arange(p))


def _is_pd(S: np.ndarray) -> bool:
    # Cholesky alone accepts singular matrices that round to tiny positive pivots
    return bool(np.linalg.eigvalsh(S)[0] > PD_TOL)


def gen_block_crossed_covariance(p: int, split: int, scale: float, seed) -> np.ndarray:
    """Identity diagonal blocks on A = [0, split) and its complement, with cross block
    scale * u v^T for u, v uniform on the unit spheres."""
    if not 0 < split < p:
        raise ValueError("need 0 < split < p")
    rng = np.random.default_rng(seed)
    for _ in range(PD_RETRIES):
        u = rng.standard_normal(split)
        v = rng.standard_normal(p - split)
        u /= np.linalg.norm(u)
        v /= np.linalg.norm(v)
        S = np.eye(p)
        S[:split, split:] = scale * np.outer(u, v)
        S[split:, :split] = S[:split, split:].T
        if _is_pd(S):
            return S
    raise PDFailure(f"no PD draw in {PD_RETRIES} attempts (scale={scale})")


@dataclass(frozen=True, eq=False)
class GaussianDesign:
    """X ~ N(0, Sigma), Y = X^T beta + eps with eps ~ N(0, sigma^2) independent of X."""

    Sigma: np.ndarray
    beta: np.ndarray
    sigma: float

    def __post_init__(self):
        S = np.asarray(self.Sigma, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        if S.shape != (b.size, b.size):
            raise ValueError("Sigma must be p x p with p = len(beta)")
        if not (np.isfinite(S).all() and np.isfinite(b).all() and np.isfinite(self.sigma)):
            raise ValueError("design parameters must be finite")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not np.allclose(S, S.T) or not _is_pd(S):
            raise ValueError("Sigma must be symmetric positive definite")
        object.__setattr__(self, "Sigma", S)
        object.__setattr__(self, "beta", b)

    @property
    def p(self) -> int:
        return self.beta.size

    @cached_property
    def _chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.Sigma)

    def draw(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        X = rng.standard_normal((n, self.p)) @ self._chol.T
        y = X @ self.beta + self.sigma * rng.standard_normal(n)
        return X, y

    def draw_x(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.p)) @ self._chol.T


# -- missingness -----------------------------------------------------------------------


@dataclass(frozen=True)
class MissingnessSpec:
    """Labelled-sample layout plus the unlabelled sample size.

    ``monotonic``: ``n1`` complete rows and ``n2`` rows missing the last ``p0``
    covariates. ``mcar_independent``: ``n`` rows, each covariate observed
    independently with probability ``obs_prob``. ``grouped``: explicit
    ``(observed indices, n_k)`` pairs.
    """

    variant: Literal["monotonic", "mcar_independent", "grouped"]
    n1: int = 0
    n2: int = 0
    p0: int = 1
    obs_prob: float = 0.5
    n: int = 0
    groups: tuple = ()
    unlabelled_n: int = 0

    def __post_init__(self):
        if self.unlabelled_n < 0:
            raise ValueError("unlabelled_n must be >= 0")
        if self.variant == "monotonic":
            if self.n1 < 0 or self.n2 < 0 or self.n1 + self.n2 == 0 or self.p0 < 1:
                raise ValueError("monotonic needs n1, n2 >= 0 with n1 + n2 > 0 and p0 >= 1")
        elif self.variant == "mcar_independent":
            if not 0 < self.obs_prob < 1 or self.n < 1:
                raise ValueError("mcar_independent needs obs_prob in (0, 1) and n >= 1")
        elif self.variant == "grouped":
            if not self.groups or any(int(nk) < 1 for _, nk in self.groups):
                raise ValueError("grouped needs positive counts")
            object.__setattr__(self, "groups", tuple(
                (tuple(int(j) for j in obs), int(nk)) for obs, nk in self.groups))
        else:
            raise ValueError(f"unknown variant {self.variant!r}")

    @classmethod
    def monotonic(cls, p0: int, n1: int, n2: int, unlabelled_n: int = 0) -> "MissingnessSpec":
        return cls("monotonic", n1=n1, n2=n2, p0=p0, unlabelled_n=unlabelled_n)

    @classmethod
    def mcar(cls, obs_prob: float, n: int, unlabelled_n: int = 0) -> "MissingnessSpec":
        return cls("mcar_independent", obs_prob=obs_prob, n=n, unlabelled_n=unlabelled_n)

    @classmethod
    def grouped_spec(cls, groups, unlabelled_n: int = 0) -> "MissingnessSpec":
        return cls("grouped", groups=tuple(groups), unlabelled_n=unlabelled_n)


def _mcar_groups(X, y, mask) -> list[LabelledGroup]:
    keep = mask.any(axis=1)
    if not keep.all():
        log.debug("dropping %d rows with no observed covariate", int((~keep).sum()))
    X, y, mask = X[keep], y[keep], mask[keep]
    pats, inv = np.unique(mask, axis=0, return_inverse=True)
    inv = inv.ravel()
    groups = []
    for k, m in enumerate(pats):
        rows = np.flatnonzero(inv == k)
        obs = np.flatnonzero(m)
        groups.append(LabelledGroup(ObservationPattern(tuple(int(j) for j in obs)),
                                    X[np.ix_(rows, obs)], y[rows]))
    return groups


def sample_dataset(design: GaussianDesign, spec: MissingnessSpec, seed) -> MissingDataset:
    """Draw a labelled dataset with MCAR missingness and a complete unlabelled block.

    Blocks are drawn in a fixed order (labelled groups, then unlabelled), each
    block's covariates before its noise, so enlarging a later block leaves the
    earlier ones unchanged under the same seed. For ``mcar_independent`` the
    mask is redrawn when some covariate ends up never observed.
    """
    rng = np.random.default_rng(seed)
    p = design.p
    if spec.variant == "monotonic":
        if spec.p0 >= p:
            raise ValueError("p0 must be smaller than p")
        groups = []
        obs_sets = [tuple(range(p)), tuple(range(p - spec.p0))]
        for obs, nk in zip(obs_sets, (spec.n1, spec.n2)):
            X, y = design.draw(rng, nk)
            if nk:
                groups.append(LabelledGroup(ObservationPattern(obs), X[:, list(obs)], y))
    elif spec.variant == "grouped":
        groups = []
        for obs, nk in spec.groups:
            X, y = design.draw(rng, nk)
            groups.append(LabelledGroup(ObservationPattern(obs), X[:, list(obs)], y))
    else:
        X, y = design.draw(rng, spec.n)
        for attempt in range(MAX_RESAMPLE):
            mask = rng.random((spec.n, p)) < spec.obs_prob
            if mask.any(axis=0).all():
                break
            log.info("resampling missingness mask (attempt %d): a covariate was never observed",
                     attempt + 1)
        else:
            raise VariableNeverObserved(int(np.flatnonzero(~mask.any(axis=0))[0]))
        groups = _mcar_groups(X, y, mask)
    U = design.draw_x(rng, spec.unlabelled_n)
    return MissingDataset(tuple(groups), U, p)


# -- baselines -------------------------------------------------------------------------


def fit_cc_ols(dataset: MissingDataset) -> np.ndarray:
    """Least squares on the fully observed labelled group."""
    return complete_case_ols(dataset)[0]


def fit_si(dataset: MissingDataset, sigma_pd: np.ndarray) -> LowDimFit:
    """Single imputation: the imputation estimator with every weight equal to one."""
    return fit_weighted_imputation(dataset, sigma_pd, unit_weights(dataset))


def fit_mean_imputation(dataset: MissingDataset) -> np.ndarray:
    """Fill each missing cell with its column's observed labelled mean, then OLS on all rows."""
    X, M, y, _ = dataset.stacked
    means = X.sum(axis=0) / M.sum(axis=0)
    Xi = np.where(M, X, means)
    return np.linalg.lstsq(Xi, y, rcond=None)[0]


# -- experiments -----------------------------------------------------------------------


@dataclass(frozen=True)
class MethodSummary:
    method: str
    x: float
    mse: float
    se: float
    rel_eff: Optional[float]
    rel_eff_se: Optional[float]
    errors: np.ndarray = field(repr=False, compare=False)

    @property
    def median(self) -> float:
        return float(np.median(self.errors))


@dataclass(frozen=True)
class ExperimentResult:
    """Per-(method, x) Monte Carlo summaries; ``se = sd / sqrt(reps)``.

    ``rel_eff`` averages the per-replication ratio of the complete-case
    squared error to the method's squared error, with its own standard error.
    """

    experiment: str
    reps: int
    seed: int
    rows: tuple[MethodSummary, ...]
    params: dict = field(default_factory=dict, compare=False)

    def get(self, method: str, x: float) -> MethodSummary:
        for r in self.rows:
            if r.method == method and r.x == x:
                return r
        raise KeyError((method, x))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["experiment", "method", "x", "mse", "se", "rel_eff", "rel_eff_se"])
        opt = lambda v: "" if v is None else repr(v)  # noqa: E731
        for r in self.rows:
            w.writerow([self.experiment, r.method, repr(r.x), repr(r.mse), repr(r.se),
                        opt(r.rel_eff), opt(r.rel_eff_se)])
        return buf.getvalue()


def _sq(beta_hat, beta) -> float:
    return float(np.sum((np.asarray(beta_hat) - beta) ** 2))


def _monotone_beta(p: int, last: float) -> np.ndarray:
    b = np.ones(p)
    b[-1] = last
    return b


def _rep_fig1(P, xs, seed):
    S = gen_ar_covariance(P["p"], P["r"])
    d = GaussianDesign(S, _monotone_beta(P["p"], P["beta_last"]), P["sigma"])
    out = {}
    for n2 in xs:
        ds = sample_dataset(d, MissingnessSpec.monotonic(P["p0"], P["n1"], int(n2)), seed)
        w = oracle_weights(d.sigma, d.beta, S, ds.patterns)
        out["CC", n2] = _sq(fit_cc_ols(ds), d.beta)
        out["SI", n2] = _sq(fit_si(ds, S).beta, d.beta)
        out["ISS", n2] = _sq(fit_weighted_imputation(ds, S, w).beta, d.beta)
    return out


def _rep_fig2(P, xs, seed):
    S = gen_ar_covariance(P["p"], P["r"])
    d = GaussianDesign(S, _monotone_beta(P["p"], P["beta_last"]), P["sigma"])
    out = {}
    for n2 in xs:
        ds = sample_dataset(d, MissingnessSpec.monotonic(P["p0"], P["n1"], int(n2)), seed)
        w = oracle_weights(d.sigma, d.beta, S, ds.patterns)
        out["CC", n2] = _sq(fit_cc_ols(ds), d.beta)
        out["ISS", n2] = _sq(fit_weighted_imputation(ds, S, w).beta, d.beta)
        for c in P["c_values"]:
            dc = w.d.copy()
            # only the incomplete pattern is rescaled
            dc[[not pat.is_complete(d.p) for pat in ds.patterns]] *= c
            wc = type(w)(dc, "user")
            out[f"ISS_{c:g}", n2] = _sq(fit_weighted_imputation(ds, S, wc).beta, d.beta)
    return out


def _rep_fig3(P, xs, seed):
    S = gen_ar_covariance(P["p"], P["r"])
    d = GaussianDesign(S, _monotone_beta(P["p"], P["beta_last"]), P["sigma"])
    Nmax = max(P["N_values"])
    out = {}
    for n2 in xs:
        ds = sample_dataset(d, MissingnessSpec.monotonic(P["p0"], P["n1"], int(n2), Nmax), seed)
        w = oracle_weights(d.sigma, d.beta, S, ds.patterns)
        out["CC", n2] = _sq(fit_cc_ols(ds), d.beta)
        out["ISS", n2] = _sq(fit_weighted_imputation(ds, S, w).beta, d.beta)
        for N in P["N_values"]:
            sub = ds.with_unlabelled(ds.unlabelled[:N])
            Sh, _ = ensure_pd(unlabelled_covariance(sub), None)
            out[f"OSS_N{N}", n2] = _sq(fit_weighted_imputation(sub, Sh, w).beta, d.beta)
    return out


def _rep_table(P, xs, seed):
    S = gen_ar_covariance(P["p"], P["r"])
    d = GaussianDesign(S, np.ones(P["p"]), P["sigma"])
    out = {}
    for n2 in xs:
        spec = MissingnessSpec.monotonic(P["p0"], P["n1"], int(n2), P["N"])
        ds = sample_dataset(d, spec, seed)
        Sh, _ = ensure_pd(unlabelled_covariance(ds), None)
        w = pilot_weights(ds, Sh, "cc")
        out["CC", n2] = _sq(fit_cc_ols(ds), d.beta)
        out["OSS", n2] = _sq(fit_weighted_imputation(ds, Sh, w, "unlabelled").beta, d.beta)
        out["SI", n2] = _sq(fit_si(ds, Sh).beta, d.beta)
    return out


def _supervised_methods(ds, beta, clip, seed, out, x):
    part = partition_modalities(ds)
    Sh = estimate_covariance_pairwise(ds, part, compute_counts(ds, part))
    Sh, _ = ensure_pd(Sh, clip)
    try:
        out["CC", x] = _sq(fit_cc_ols(ds), beta)
    except NoCompleteCases:
        out["CC", x] = float("nan")
    w = pilot_weights(ds, Sh, "unit")
    out["OSS", x] = _sq(fit_weighted_imputation(ds, Sh, w, "supervised-pairwise").beta, beta)
    out["OSS_CF", x] = _sq(fit_crossfit(ds, clip=clip, weights="pilot", seed=seed).beta, beta)
    out["Mean", x] = _sq(fit_mean_imputation(ds), beta)


def _rep_fig6a(P, xs, seed):
    S = gen_ar_covariance(P["p"], P["r"])
    d = GaussianDesign(S, np.ones(P["p"]), P["sigma"])
    clip = ClipConfig(*P["clip"])
    out = {}
    for n in xs:
        ds = sample_dataset(d, MissingnessSpec.mcar(P["obs_prob"], int(n)), seed)
        _supervised_methods(ds, d.beta, clip, seed, out, n)
    return out


def _rep_fig6b(P, xs, seed):
    p = P["p"]
    S = gen_ar_covariance(p, P["r"])
    d = GaussianDesign(S, np.ones(p), P["sigma"])
    clip = ClipConfig(*P["clip"])
    out = {}
    for n1 in xs:
        groups = [(tuple(range(p)), int(n1)),
                  (tuple(range(p - 1)), P["n_missing_last"]),
                  (tuple(j for j in range(p) if j != p - 2), P["n_missing_penultimate"])]
        ds = sample_dataset(d, MissingnessSpec.grouped_spec(groups), seed)
        _supervised_methods(ds, d.beta, clip, seed, out, n1)
    return out


def _dantzig_rep(design_fn, spec_fn, P, xs, seed):
    d = design_fn(P, seed)
    Nmax = int(max(xs))
    ds = sample_dataset(d, spec_fn(P, Nmax), seed)
    out = {}
    for N in xs:
        sub = ds.with_unlabelled(ds.unlabelled[:int(N)])
        grid = default_grid(estimate_moments(sub).gamma, size=P["grid_size"])
        fit = fit_dantzig(sub, "cv", grid=grid, folds=P["folds"], seed=seed)
        out["Dantzig", N] = _sq(fit.beta, d.beta)
    return out


def _fig7_design(P, seed):
    p = P["p"]
    S = gen_block_crossed_covariance(p, P["split"], P["scale"], [seed, 7])
    beta = np.zeros(p)
    for start in (0, P["m1"], P["m1"] + P["m2"]):
        beta[start:start + P["active_per_modality"]] = 1.0
    return GaussianDesign(S, beta, P["sigma"])


def _fig7_spec(P, N):
    p, m1, m2 = P["p"], P["m1"], P["m2"]
    mods = [range(0, m1), range(m1, m1 + m2), range(m1 + m2, p)]
    groups = []
    for miss, nk in zip(mods, P["group_sizes"]):
        groups.append((tuple(j for j in range(p) if j not in miss), nk))
    return MissingnessSpec.grouped_spec(groups, N)


def _fig8_design(P, seed):
    p = P["p"]
    S = gen_block_crossed_covariance(p, P["split"], P["scale"], [seed, 8])
    beta = np.zeros(p)
    beta[:P["s_half"]] = 1.0
    beta[p - P["s_half"]:] = 1.0
    return GaussianDesign(S, beta, P["sigma"])


def _fig8_spec(P, N):
    return MissingnessSpec.mcar(P["obs_prob"], P["n"], N)


def _rep_fig7(P, xs, seed):
    return _dantzig_rep(_fig7_design, _fig7_spec, P, xs, seed)


def _rep_fig8(P, xs, seed):
    return _dantzig_rep(_fig8_design, _fig8_spec, P, xs, seed)


_MONO = dict(p=10, r=0.6, n1=100, p0=1, beta_last=5.0)

EXPERIMENTS: dict[str, tuple[Callable, dict, int]] = {
    "fig1": (_rep_fig1, dict(_MONO, sigma=1.0,
                             x=(100, 300, 1000, 3000, 10000, 30000, 100000)), 100),
    "fig2": (_rep_fig2, dict(_MONO, sigma=1.0, c_values=(0.1, 0.3, 3.0, 10.0),
                             x=(100, 1000, 10000, 100000)), 100),
    "fig3": (_rep_fig3, dict(_MONO, sigma=2.0, N_values=(50, 500, 5000),
                             x=(0, 1000, 10000, 100000)), 100),
    "table2": (_rep_table, dict(p=10, r=0.6, n1=500, p0=1, N=10000, sigma=1.0,
                                x=(500, 1000, 2000, 5000, 50000)), 200),
    "table3": (_rep_table, dict(p=10, r=0.6, n1=500, p0=1, N=10000, sigma=3.0,
                                x=(500, 1000, 2000, 5000, 50000)), 200),
    "fig6a": (_rep_fig6a, dict(p=10, r=0.6, sigma=1.0, obs_prob=0.8, clip=(0.05, 20.0),
                               x=(1000,)), 100),
    "fig6b": (_rep_fig6b, dict(p=10, r=0.6, sigma=1.0, n_missing_last=500,
                               n_missing_penultimate=4500, clip=(0.05, 20.0), x=(50,)), 100),
    "fig7": (_rep_fig7, dict(p=100, m1=45, m2=45, split=90, scale=0.3, sigma=3.0,
                             group_sizes=(50, 50, 1000), active_per_modality=5, folds=5, grid_size=20,
                             x=(0, 200, 1000)), 100),
    "fig8": (_rep_fig8, dict(p=50, n=1000, obs_prob=0.2, split=45, scale=0.3, s_half=5,
                             sigma=3.0, folds=5, grid_size=20, x=(0, 200, 1000)), 100),
}


def experiment_defaults(name: str) -> dict:
    if name not in EXPERIMENTS:
        raise UnknownExperiment(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    fn, params, reps = EXPERIMENTS[name]
    return dict(params, reps=reps)


def _coerce(default, value):
    """Convert an override (possibly a string from a config file) to the default's type."""
    if not isinstance(value, str):
        return tuple(value) if isinstance(default, tuple) else type(default)(value)
    if isinstance(default, tuple):
        items = [v for v in value.replace(";", ",").split(",") if v.strip()]
        kind = type(default[0]) if default else float
        return tuple(kind(float(v)) if kind is int else kind(v) for v in items)
    if isinstance(default, bool):
        return value.strip().lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(float(value))
    return type(default)(value)


def resolve_params(name: str, overrides: Optional[dict] = None) -> dict:
    params = experiment_defaults(name)
    for k, v in (overrides or {}).items():
        if k not in params:
            raise ValueError(f"unknown parameter {k!r} for experiment {name}")
        params[k] = _coerce(params[k], v)
    return params


def n_workers() -> int:
    env = os.environ.get("MISSREG_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def run_experiment(name: str, reps: Optional[int] = None, seed: int = 0,
                   overrides: Optional[dict] = None, n_jobs: Optional[int] = None
                   ) -> ExperimentResult:
    """Run ``reps`` replications of a named experiment.

    Replication ``r`` uses seed ``seed + r`` for every x value, so curves
    share common random numbers. Rows are aggregated in replication order,
    hence the result does not depend on the worker count.
    """
    params = resolve_params(name, overrides)
    if reps is not None:
        params["reps"] = int(reps)
    R = params.pop("reps")
    if R < 1:
        raise ValueError("reps must be >= 1")
    fn = EXPERIMENTS[name][0]
    xs = tuple(params["x"])
    jobs = n_jobs if n_jobs is not None else n_workers()
    if jobs == 1:
        results = [fn(params, xs, seed + r) for r in range(R)]
    else:
        results = Parallel(n_jobs=jobs)(delayed(fn)(params, xs, seed + r) for r in range(R))
    keys = list(results[0])
    errs = {k: np.array([res[k] for res in results]) for k in keys}
    rows = []
    for method, x in keys:
        e = errs[method, x]
        se = float(np.std(e, ddof=1) / np.sqrt(R)) if R > 1 else 0.0
        re = re_se = None
        cc = errs.get(("CC", x))
        if cc is not None and np.isfinite(cc).all() and (e > 0).all():
            q = cc / e
            re = float(np.mean(q))
            re_se = float(np.std(q, ddof=1) / np.sqrt(R)) if R > 1 else 0.0
        rows.append(MethodSummary(method, float(x), float(np.mean(e)), se, re, re_se, e))
    summaries = tuple(rows)
    params["reps"] = R
    return ExperimentResult(name, R, seed, summaries, params)
