"""Run one named simulation experiment and write its summary CSV.

Usage::

    python3 scripts/run_experiment.py fig1 --reps 100 --set x=100,1000,10000
"""

import argparse
import logging
import sys
import time
from pathlib import Path

from missreg.simulate import EXPERIMENTS, run_experiment


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("experiment", choices=sorted(EXPERIMENTS))
    p.add_argument("--reps", type=int, help="replications (default: the experiment's own)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override an experiment parameter; repeatable")
    p.add_argument("--out-dir", default="results")
    p.add_argument("--jobs", type=int, help="worker processes (default: MISSREG_THREADS or all CPUs)")
    return p.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    overrides = dict(item.split("=", 1) for item in args.set)
    t0 = time.perf_counter()
    res = run_experiment(args.experiment, args.reps, args.seed, overrides, args.jobs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.experiment}_seed{args.seed}.csv"
    path.write_text(res.to_csv())
    logging.info("%s: %d reps in %.1fs -> %s", args.experiment, res.reps,
                 time.perf_counter() - t0, path)
    for row in res.rows:
        eff = "" if row.rel_eff is None else f"  rel_eff {row.rel_eff:.2f} ({row.rel_eff_se:.2f})"
        print(f"{row.method:>10} x={row.x:<8g} mse {row.mse:.4g} ({row.se:.2g}){eff}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
