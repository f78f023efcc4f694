"""Regenerate tests/data/frozen_oracles.json from the brute-force oracles in tests/oracles.py.

The frozen values pin down the reference numbers so the tests keep checking
against them even if the oracle code is later edited.
"""

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from oracles import dantzig_vertex_objective, random_dantzig_instance, re_grid_oracle  # noqa: E402


def lp_cases(n=50, seed=20240501):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        p = int(rng.integers(1, 5))
        sigma, gamma, lam = random_dantzig_instance(rng, p)
        obj, beta = dantzig_vertex_objective(sigma, gamma, lam)
        if not np.isfinite(obj):
            continue
        out.append({"sigma": sigma.tolist(), "gamma": gamma.tolist(), "lam": lam,
                    "objective": obj})
    return out


def re_cases(seed=7):
    rng = np.random.default_rng(seed)
    mats = [np.diag([3.0, 1.0, 2.0]), np.array([[1.0, 0.5], [0.5, 1.0]]),
            np.array([[1.0, 0.9, 0.0], [0.9, 1.0, 0.3], [0.0, 0.3, 1.0]])]
    for _ in range(3):
        B = rng.standard_normal((4, 4))
        mats.append(B @ B.T / 4 + 0.2 * np.eye(4))
    B = rng.standard_normal((3, 3))
    mats.append((B + B.T) / 2 + 1.5 * np.eye(3))
    out = []
    for A in mats:
        for s in (1, 2):
            if s > A.shape[0]:
                continue
            pts = 81 if A.shape[0] <= 3 else 41
            out.append({"A": A.tolist(), "s": s, "phi2": re_grid_oracle(A, s, pts)})
    return out


if __name__ == "__main__":
    data = {"dantzig_lp": lp_cases(), "restricted_eigenvalue": re_cases()}
    path = ROOT / "tests" / "data" / "frozen_oracles.json"
    path.write_text(json.dumps(data, indent=1))
    print(f"wrote {path}")
