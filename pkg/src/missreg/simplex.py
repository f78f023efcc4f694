"""Dense two-phase tableau simplex with Bland's anti-cycling rule.

Solves  min c^T x  subject to  A x = b, x >= 0  with b >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.linalg import blas

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-9

Status = Literal["optimal", "infeasible", "unbounded", "iteration-cap"]


@dataclass(frozen=True, eq=False)
class StandardFormLP:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        c = np.asarray(self.c, dtype=float)
        if A.shape != (b.size, c.size):
            raise ValueError(f"inconsistent LP shapes A{A.shape}, b{b.shape}, c{c.shape}")
        neg = b < 0
        if neg.any():
            A = A.copy()
            b = b.copy()
            A[neg] *= -1
            b[neg] *= -1
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


@dataclass(frozen=True, eq=False)
class SimplexResult:
    x: np.ndarray
    objective: float
    iterations: int
    status: Status
    basis: np.ndarray


def _pivot(T: np.ndarray, r: int, col: int) -> None:
    # T is Fortran-ordered so the rank-one update runs in place
    T[r] /= T[r, col]
    colv = T[:, col].copy()
    colv[r] = 0.0
    blas.dger(-1.0, colv, T[r].copy(), a=T, overwrite_a=1)


def _run(T: np.ndarray, basis: np.ndarray, ncols: int, cap: int, used: int,
         allowed: np.ndarray) -> tuple[str, int]:
    """Bland's rule on tableau T whose last row is the reduced-cost row and last column the RHS.

    Only columns with ``allowed`` set may enter. Returns (status, iterations used so far).
    """
    m = T.shape[0] - 1
    it = used
    while True:
        red = T[-1, :ncols]
        cand = np.flatnonzero((red < -PIVOT_TOL) & allowed)
        if cand.size == 0:
            return "optimal", it
        if it >= cap:
            return "iteration-cap", it
        col = int(cand[0])
        a = T[:m, col]
        pos = a > PIVOT_TOL
        if not pos.any():
            return "unbounded", it
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / a[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + PIVOT_TOL * max(1.0, abs(best)))
        r = int(ties[np.argmin(basis[ties])])
        _pivot(T, r, col)
        basis[r] = col
        it += 1


def simplex(lp: StandardFormLP, max_iter: int | None = None) -> SimplexResult:
    """Two-phase simplex. Unit columns of A are used as the starting basis where possible;
    the remaining rows get artificial variables that phase one drives to zero."""
    A, b, c = lp.A, lp.b, lp.c
    m, n = A.shape
    cap = 50 * (m + n) if max_iter is None else max_iter

    # starting basis from existing identity columns
    basis = -np.ones(m, dtype=int)
    unit = (np.abs(A) <= 0) | (A == 1)
    for j in np.flatnonzero(unit.all(axis=0) & ((A == 1).sum(axis=0) == 1)):
        r = int(np.flatnonzero(A[:, j] == 1)[0])
        if basis[r] < 0:
            basis[r] = j
    need = np.flatnonzero(basis < 0)
    n_art = need.size

    T = np.zeros((m + 1, n + n_art + 1), order="F")
    T[:m, :n] = A
    T[:m, -1] = b
    for i, r in enumerate(need):
        T[r, n + i] = 1.0
        basis[r] = n + i
    allowed = np.ones(n + n_art, dtype=bool)
    it = 0

    if n_art:
        # phase one: minimise the sum of artificials
        T[-1, :] = 0.0
        T[-1, n:n + n_art] = 1.0
        T[-1] -= T[need].sum(axis=0)
        status, it = _run(T, basis, n + n_art, cap, it, allowed)
        if status == "iteration-cap":
            return SimplexResult(np.full(n, np.nan), np.nan, it, "iteration-cap", basis)
        if -T[-1, -1] > FEAS_TOL * max(1.0, float(np.abs(b).max(initial=0.0))):
            return SimplexResult(np.full(n, np.nan), np.nan, it, "infeasible", basis)
        # drive remaining artificials out of the basis, dropping redundant rows
        keep = np.ones(m + 1, dtype=bool)
        for r in range(m):
            if basis[r] >= n:
                row = T[r, :n]
                nz = np.flatnonzero(np.abs(row) > PIVOT_TOL)
                if nz.size:
                    _pivot(T, r, int(nz[0]))
                    basis[r] = int(nz[0])
                else:
                    keep[r] = False
        T = np.asfortranarray(T[keep])
        basis = basis[keep[:m]]
        m = T.shape[0] - 1
        allowed = np.zeros(n + n_art, dtype=bool)
        allowed[:n] = True

    # phase two
    T[-1, :] = 0.0
    T[-1, :n] = c
    cb = np.where(basis < n, c[np.minimum(basis, n - 1)], 0.0)
    T[-1] -= cb @ T[:m]
    status, it = _run(T, basis, n + n_art, cap, it, allowed)
    x = np.zeros(n)
    inb = basis < n
    x[basis[inb]] = T[:m, -1][inb]
    x[x < 0] = 0.0
    obj = float(c @ x)
    if status != "optimal":
        return SimplexResult(x, obj, it, status, basis)
    return SimplexResult(x, obj, it, "optimal", basis)
