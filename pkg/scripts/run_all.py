"""Run every registered experiment at its default replication count.

Default replication counts make this a long run on one core; pass ``--reps`` for a quick pass.
"""

import argparse
import sys

from missreg.simulate import EXPERIMENTS

from run_experiment import main as run_one


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--reps", type=int)
    p.add_argument("--out-dir", default="results")
    args = p.parse_args(argv)
    for name in EXPERIMENTS:
        extra = ["--reps", str(args.reps)] if args.reps else []
        run_one([name, "--out-dir", args.out_dir] + extra)
    return 0


if __name__ == "__main__":
    sys.exit(main())
