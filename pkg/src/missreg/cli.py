"""Command-line interface: ``missreg <command> [options]``.

Commands
--------
fit-low        weighted imputation estimator (low-dimensional)
fit-highdim    Dantzig selector on the missing-data moments
simulate       run a named simulation experiment
diagnose       moment estimates, clipping status and optional RE constant
export-groups  rewrite a CSV grouped by observation pattern

Every command writes plain CSV to ``--out`` (or stdout) and one JSON
metadata line to stderr. Options may also come from ``--config FILE`` with
``key=value`` lines, keys spelled like the long flags; command-line flags win.
For ``simulate`` any config key that is not a flag overrides an experiment
parameter.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from contextlib import contextmanager
from typing import Optional, Sequence

import numpy as np

from .dantzig import LambdaRule, default_grid, fit_dantzig
from .errors import MissregError, PatternTooSmall
from .lowdim import (
    default_kappas,
    ensure_pd,
    estimate_weights,
    fit_crossfit,
    fit_thresholded_unstructured,
    fit_weighted_imputation,
    oracle_weights,
    pilot_weights,
    unit_weights,
)
from .moments import (
    ClipConfig,
    clip_covariance,
    estimate_moments,
    restricted_eigenvalue,
    unlabelled_covariance,
)
from .patterns import MissingDataset, center_dataset, read_csv, write_groups_csv
from .simulate import run_experiment

REQUIRED = {
    "fit-low": ("input", "response"),
    "fit-highdim": ("input", "response"),
    "simulate": ("experiment",),
    "diagnose": ("input", "response"),
    "export-groups": ("input", "response"),
}


class UsageError(Exception):
    pass


def read_config(path: str) -> dict[str, str]:
    """Flat ``key=value`` file; blank lines and ``#`` comments are skipped."""
    out = {}
    with open(path) as fh:
        for num, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{num}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="labelled CSV; 'NA' or empty marks a missing cell")
    p.add_argument("--response", help="name of the response column")
    p.add_argument("--unlabelled", help="optional CSV of complete unlabelled covariates")
    p.add_argument("--center", action="store_true",
                   help="subtract covariate and response means before fitting")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file supplying defaults for any flag")
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.add_argument("--seed", type=int, default=0)


def _clip_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda-minus", type=float, help="lower eigenvalue bound for clipping")
    p.add_argument("--lambda-plus", type=float, help="upper eigenvalue bound for clipping")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="missreg", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("fit-low", help="weighted imputation estimator")
    _common(p)
    _data_args(p)
    _clip_args(p)
    p.add_argument("--weights", choices=("pilot", "estimated", "unit", "oracle"),
                   default="pilot",
                   help="pilot: plug-ins from a unit-weight fit (default); estimated: "
                        "per-pattern OLS residual variances; oracle: needs --oracle-beta "
                        "and --oracle-sigma")
    p.add_argument("--cov", choices=("auto", "unlabelled", "pairwise", "file"), default="auto",
                   help="auto: unlabelled block when present, else pairwise labelled")
    p.add_argument("--cov-file", help="CSV matrix (no header) used with --cov file")
    p.add_argument("--crossfit", action="store_true", help="two-fold cross-fitting")
    p.add_argument("--threshold", action="store_true",
                   help="unit weights with the thresholded Gram matrix (needs clip bounds)")
    p.add_argument("--kappa-l", type=float)
    p.add_argument("--kappa-u", type=float)
    p.add_argument("--oracle-beta", help="comma-separated true coefficients")
    p.add_argument("--oracle-sigma", type=float, help="true noise standard deviation")

    p = sub.add_parser("fit-highdim", help="Dantzig selector")
    _common(p)
    _data_args(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--lambda", dest="lam", type=float, help="fixed regularisation parameter")
    g.add_argument("--lambda-rule", choices=("unstructured", "structured"))
    g.add_argument("--cv", action="store_true", help="cross-validate lambda (the default)")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--grid-min", type=float, default=0.01, help="fraction of max|gamma_hat|")
    p.add_argument("--grid-max", type=float, default=1.0, help="fraction of max|gamma_hat|")
    p.add_argument("--grid-size", type=int, default=30)
    p.add_argument("--rule-a", type=float, default=1.0, help="constant A of the lambda rule")

    p = sub.add_parser("simulate", help="run a simulation experiment")
    _common(p)
    p.add_argument("--experiment")
    p.add_argument("--reps", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override an experiment parameter (repeatable)")

    p = sub.add_parser("diagnose", help="moment and curvature diagnostics")
    _common(p)
    _data_args(p)
    _clip_args(p)
    p.add_argument("--re-s", type=int, help="also compute phi^2(Sigma_hat, s) (small p only)")
    p.add_argument("--dump-sigma", help="write Sigma_hat as a headerless CSV matrix")

    p = sub.add_parser("export-groups", help="write rows grouped by observation pattern")
    _common(p)
    _data_args(p)
    return parser


def parse(argv: Sequence[str]) -> tuple[argparse.Namespace, dict]:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    extra: dict[str, str] = {}
    if known.config:
        cfg = read_config(known.config)
        args0, _ = parser.parse_known_args(argv)
        subp = parser._subparsers._group_actions[0].choices[args0.command]
        dests = {a.dest for a in subp._actions}
        cfg = {("lam" if k == "lambda" else k): v for k, v in cfg.items()}
        flags = {k: v for k, v in cfg.items() if k in dests}
        for a in subp._actions:
            if a.dest in flags and isinstance(a, (argparse._StoreTrueAction,)):
                flags[a.dest] = flags[a.dest].lower() in ("1", "true", "yes")
            elif a.dest in flags and a.dest == "set":
                flags[a.dest] = [flags[a.dest]]
        subp.set_defaults(**flags)
        extra = {k: v for k, v in cfg.items() if k not in dests}
        if args0.command != "simulate" and extra:
            raise UsageError(f"unknown config keys: {sorted(extra)}")
    args = parser.parse_args(argv)
    missing = [k for k in REQUIRED[args.command] if getattr(args, k, None) in (None, "")]
    if missing:
        parser._subparsers._group_actions[0].choices[args.command].error(
            "missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return args, extra


@contextmanager
def _sink(path: Optional[str]):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _load(args) -> MissingDataset:
    ds = read_csv(args.input, args.response, args.unlabelled)
    if getattr(args, "center", False):
        ds = center_dataset(ds)[0]
    return ds


def _names(ds: MissingDataset) -> list[str]:
    return list(ds.names) if ds.names is not None else [f"x{j + 1}" for j in range(ds.p)]


def _clip(args) -> Optional[ClipConfig]:
    lo, hi = getattr(args, "lambda_minus", None), getattr(args, "lambda_plus", None)
    if lo is None and hi is None:
        return None
    if lo is None or hi is None:
        raise UsageError("--lambda-minus and --lambda-plus go together")
    return ClipConfig(lo, hi)


def _covariance(args, ds: MissingDataset) -> tuple[np.ndarray, str]:
    source = args.cov
    if source == "auto":
        source = "unlabelled" if ds.N > 0 else "pairwise"
    if source == "unlabelled":
        return unlabelled_covariance(ds), "oss-unlabelled"
    if source == "pairwise":
        return estimate_moments(ds).sigma, "supervised-pairwise"
    if not args.cov_file:
        raise UsageError("--cov file needs --cov-file")
    S = np.loadtxt(args.cov_file, delimiter=",", ndmin=2)
    if S.shape != (ds.p, ds.p):
        raise ValueError(f"--cov-file must hold a {ds.p} x {ds.p} matrix, got {S.shape}")
    return S, "user"


def cmd_fit_low(args, meta):
    ds = _load(args)
    clip = _clip(args)
    if args.crossfit:
        if args.cov not in ("auto", "pairwise"):
            raise UsageError("--crossfit uses the pairwise labelled covariance")
        if args.weights == "oracle":
            raise UsageError("--crossfit supports pilot, estimated or unit weights")
        fit = fit_crossfit(ds, args.kappa_l, args.kappa_u, clip, args.weights, args.seed)
    elif args.threshold:
        if clip is None:
            raise UsageError("--threshold needs --lambda-minus and --lambda-plus")
        S, source = _covariance(args, ds)
        S, clipped = ensure_pd(S, clip)
        fit = fit_thresholded_unstructured(ds, S, clip, cov_source=source)
    else:
        S, source = _covariance(args, ds)
        S, clipped = ensure_pd(S, clip)
        if args.weights == "unit":
            w = unit_weights(ds)
        elif args.weights == "pilot":
            w = pilot_weights(ds, S, "unit")
        elif args.weights == "oracle":
            if args.oracle_beta is None or args.oracle_sigma is None:
                raise UsageError("--weights oracle needs --oracle-beta and --oracle-sigma")
            beta = np.array([float(v) for v in args.oracle_beta.split(",")])
            if beta.size != ds.p:
                raise UsageError(f"--oracle-beta needs {ds.p} values")
            w = oracle_weights(args.oracle_sigma, beta, S, ds.patterns)
        else:
            try:
                kl, ku = args.kappa_l, args.kappa_u
                if kl is None or ku is None:
                    dkl, dku = default_kappas(ds, S)
                    kl = dkl if kl is None else kl
                    ku = dku if ku is None else ku
                w = estimate_weights(ds, kl, ku)
            except PatternTooSmall as exc:
                meta["weights_fallback"] = f"pilot ({exc})"
                w = pilot_weights(ds, S, "unit")
        fit = fit_weighted_imputation(ds, S, w, source, clipped)
    meta.update(method="fit-low", weights=args.weights, covariance=fit.cov_source,
                crossfit=bool(args.crossfit), thresholded=bool(fit.thresholded),
                clipped=bool(fit.clipped),
                pattern_weights=[float(v) for v in fit.weights.d])
    rows = [(j, n, repr(float(b)), repr(float(a)))
            for j, (n, b, a) in enumerate(zip(_names(ds), fit.beta, fit.alpha_hat))]
    return ["index", "name", "value", "alpha_hat"], rows


def cmd_fit_highdim(args, meta):
    ds = _load(args)
    grid = None
    if args.lam is not None:
        lam, mode = args.lam, "fixed"
    elif args.lambda_rule is not None:
        lam, mode = LambdaRule(args.lambda_rule, A=args.rule_a), args.lambda_rule
    else:
        if not 0 < args.grid_min <= args.grid_max or args.grid_size < 1:
            raise UsageError("need 0 < --grid-min <= --grid-max and --grid-size >= 1")
        grid = default_grid(estimate_moments(ds).gamma, args.grid_size,
                            args.grid_min, args.grid_max)
        lam, mode = "cv", "cv"
    fit = fit_dantzig(ds, lam, grid=grid, folds=args.folds, seed=args.seed)
    meta.update(method="fit-highdim", **{"lambda": fit.lam}, lambda_mode=mode,
                lp_iterations=fit.solution.iterations, lp_status=fit.solution.status,
                l1_norm=float(fit.solution.objective),
                max_constraint=fit.diagnostics["max_constraint"])
    nz = np.flatnonzero(fit.beta)
    return ["index", "value"], [(int(j), repr(float(fit.beta[j]))) for j in nz]


def cmd_simulate(args, meta, extra):
    overrides = dict(extra)
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    res = run_experiment(args.experiment, args.reps, args.seed, overrides)
    meta.update(method="simulate", experiment=args.experiment, reps=res.reps)
    return res.to_csv()


def cmd_diagnose(args, meta):
    ds = _load(args)
    mom = estimate_moments(ds)
    ev = np.linalg.eigvalsh(mom.sigma)
    if args.dump_sigma:
        np.savetxt(args.dump_sigma, mom.sigma, delimiter=",", fmt="%.17g")
    rows = [("p", ds.p), ("K", ds.K), ("n_labelled", ds.n_labelled), ("N", ds.N),
            ("modalities", mom.partition.L),
            ("min_h", int(mom.counts.h.min())),
            ("min_pair_count", int(mom.counts.n_cross.min() + ds.N)),
            ("sigma_min_eig", repr(float(ev[0]))), ("sigma_max_eig", repr(float(ev[-1]))),
            ("gamma_max_abs", repr(float(np.max(np.abs(mom.gamma)))))]
    rows += [(f"sigma_eig_{i}", repr(float(v))) for i, v in enumerate(ev)]
    clip = _clip(args)
    if clip is not None:
        _, fired = clip_covariance(mom.sigma, clip)
        rows.append(("clipped", int(fired)))
    if args.re_s is not None:
        re = restricted_eigenvalue(mom.sigma, args.re_s, seed=args.seed)
        rows.append(("re_phi_squared", repr(float(re.phi_squared))))
        rows.append(("re_witness_S", " ".join(map(str, re.witness_S))))
    meta.update(method="diagnose")
    return ["quantity", "value"], rows


def cmd_export(args, meta):
    ds = _load(args)
    buf = io.StringIO()
    write_groups_csv(ds, buf, args.response)
    meta.update(method="export-groups", groups=ds.K)
    return buf.getvalue()


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args, extra = parse(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    meta = {"command": args.command, "seed": args.seed}
    t0 = time.perf_counter()
    try:
        if args.command == "simulate":
            out = cmd_simulate(args, meta, extra)
        elif args.command == "export-groups":
            out = cmd_export(args, meta)
        else:
            fn = {"fit-low": cmd_fit_low, "fit-highdim": cmd_fit_highdim,
                  "diagnose": cmd_diagnose}[args.command]
            header, rows = fn(args, meta)
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
            out = buf.getvalue()
        with _sink(args.out) as fh:
            fh.write(out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (MissregError, ValueError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    meta["timings"] = {"total_s": round(time.perf_counter() - t0, 6)}
    print(json.dumps(meta, sort_keys=True), file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
