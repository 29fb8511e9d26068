"""Dense primal simplex for ``max c@x  s.t.  A@x <= b, x >= 0`` with ``b >= 0``.

Both relaxations in this package have a nonnegative right-hand side, so the
slack basis is feasible and no phase one is needed.  Pivoting follows Bland's
rule, which rules out cycling on the degenerate vertices these LPs are full of.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-9
OPT_TOL = 1e-7


class SimplexError(RuntimeError):
    def __init__(self, message, primal_value=None, dual_value=None):
        super().__init__(message)
        self.primal_value = primal_value
        self.dual_value = dual_value


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    duals: np.ndarray
    iterations: int


def solve_lp(c, A, b, *, opt_tol: float = OPT_TOL, feas_tol: float = FEAS_TOL,
             max_iter: int = 50_000) -> LPResult:
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if b.shape != (m,) or c.shape != (n,):
        raise ValueError("dimension mismatch between c, A and b")
    if (b < -feas_tol).any():
        raise ValueError("right-hand side must be nonnegative")

    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = np.maximum(b, 0.0)
    T[m, :n] = c  # reduced costs; positive entries improve the objective
    basis = np.arange(n, n + m)

    it = 0
    while True:
        entering = np.flatnonzero(T[m, :-1] > opt_tol)
        if entering.size == 0:
            break
        if it >= max_iter:
            obj = -T[m, -1]
            raise SimplexError("simplex iteration cap reached", obj, float(b @ -T[m, n:n + m]))
        e = entering[0]
        col = T[:m, e]
        pos = col > feas_tol
        if not pos.any():
            raise SimplexError("LP is unbounded")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + feas_tol * max(1.0, abs(best)))
        r = ties[np.argmin(basis[ties])]
        T[r] /= T[r, e]
        others = np.arange(m + 1) != r
        T[others] -= np.outer(T[others, e], T[r])
        basis[r] = e
        it += 1

    sol = np.zeros(n + m)
    sol[basis] = T[:m, -1]
    x = np.clip(sol[:n], 0.0, None)
    duals = np.clip(-T[m, n:n + m], 0.0, None)
    return LPResult(x=x, objective=float(c @ x), duals=duals, iterations=it)
