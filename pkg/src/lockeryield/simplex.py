"""Dense two-phase tableau simplex with Bland's anti-cycling rule.

Solves ``max c @ z`` subject to ``A_ub @ z <= b_ub``, ``A_eq @ z = b_eq``,
``z >= 0``. Sized for the locker LP (tens of variables), where a dense
tableau is simpler and fully deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LockerError

PIVOT_TOL = 1e-11


class SolverError(LockerError):
    def __init__(self, message, residuals=None):
        super().__init__(message if residuals is None else f"{message} (residuals: {residuals})")
        self.residuals = residuals


class Infeasible(SolverError):
    pass


class Unbounded(SolverError):
    pass


@dataclass
class LpSolution:
    z: np.ndarray
    objective: float
    iterations: int
    basis: np.ndarray


class _Tableau:
    def __init__(self, A, b, basis):
        m, n = A.shape
        self.m, self.n = m, n
        self.T = np.zeros((m + 1, n + 1))
        self.T[:m, :n] = A
        self.T[:m, n] = b
        self.basis = np.array(basis, dtype=np.int64)
        self.iterations = 0

    def set_objective(self, c):
        """Load ``max c @ z`` as reduced costs w.r.t. the current basis."""
        row = np.zeros(self.n + 1)
        row[: len(c)] = -np.asarray(c, dtype=float)
        for i, j in enumerate(self.basis):
            if row[j] != 0.0:
                row -= row[j] * self.T[i]
        self.T[self.m] = row

    def pivot(self, r, j):
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        nz = np.flatnonzero(col)
        if nz.size:
            T[nz] -= np.outer(col[nz], T[r])
        self.basis[r] = j
        self.iterations += 1

    def run(self, allowed, max_iter):
        """Bland's rule: lowest-index improving column, lowest-index leaving basic variable."""
        T, m = self.T, self.m
        scale = max(1.0, np.abs(T[m, :-1]).max(initial=0.0))
        while True:
            if self.iterations > max_iter:
                raise SolverError(f"simplex exceeded {max_iter} pivots")
            red = T[m, :-1]
            cand = np.flatnonzero((red < -PIVOT_TOL * scale) & allowed)
            if cand.size == 0:
                return
            j = int(cand[0])
            col = T[:m, j]
            pos = np.flatnonzero(col > PIVOT_TOL)
            if pos.size == 0:
                raise Unbounded(f"objective unbounded along column {j}")
            ratios = T[pos, -1] / col[pos]
            best = ratios.min()
            tie = pos[ratios <= best + 1e-12 * max(1.0, abs(best))]
            r = int(tie[np.argmin(self.basis[tie])])
            self.pivot(r, j)


def solve(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, *, secondary=None, max_iter=50_000) -> LpSolution:
    """Maximise ``c @ z``; on ties, maximise ``secondary @ z`` over the optimal face."""
    c = np.asarray(c, dtype=float)
    nv = len(c)
    A_ub = np.zeros((0, nv)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, nv)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, nv)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, nv)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    m_ub, m_eq = len(A_ub), len(A_eq)
    m = m_ub + m_eq

    # structural | slacks | artificials
    A = np.zeros((m, nv + m_ub))
    A[:m_ub, :nv] = A_ub
    A[:m_ub, nv:] = np.eye(m_ub)
    A[m_ub:, :nv] = A_eq
    b = np.concatenate([b_ub, b_eq])
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    basis = [-1] * m
    for i in range(m_ub):
        if not neg[i]:
            basis[i] = nv + i
    # equality rows: reuse a structural unit column if one exists
    used = set(basis)
    for i in range(m_ub, m):
        for j in range(nv):
            if j in used:
                continue
            col = A[:, j]
            if col[i] == 1.0 and np.count_nonzero(col) == 1:
                basis[i] = j
                used.add(j)
                break
    need = [i for i in range(m) if basis[i] < 0]
    n_struct = A.shape[1]
    if need:
        art = np.zeros((m, len(need)))
        for k, i in enumerate(need):
            art[i, k] = 1.0
            basis[i] = n_struct + k
        A = np.hstack([A, art])
    tab = _Tableau(A, b, basis)
    n_total = A.shape[1]

    if need:
        c1 = np.zeros(n_total)
        c1[n_struct:] = -1.0
        tab.set_objective(c1)
        tab.run(np.ones(n_total, dtype=bool), max_iter)
        infeas = -tab.T[m, -1]
        if infeas > 1e-9 * max(1.0, np.abs(b).max()):
            raise Infeasible(f"phase one ended with infeasibility {infeas:.3g}")
        # drive remaining artificials out of the basis
        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if tab.basis[r] >= n_struct:
                row = tab.T[r, :n_struct]
                nz = np.flatnonzero(np.abs(row) > PIVOT_TOL)
                if nz.size:
                    tab.pivot(r, int(nz[0]))
                else:
                    keep[r] = False
        if not keep.all():
            rows = np.flatnonzero(keep)
            tab.T = np.vstack([tab.T[rows], tab.T[m:]])
            tab.basis = tab.basis[rows]
            tab.m = m = len(rows)
            A = A[rows]
            b = b[rows]
        tab.T = np.delete(tab.T, np.s_[n_struct:n_total], axis=1)
        A = A[:, :n_struct]
        tab.n = n_total = n_struct

    allowed = np.ones(n_total, dtype=bool)
    tab.set_objective(c)
    tab.run(allowed, max_iter)
    if secondary is not None:
        red = tab.T[m, :-1]
        scale = max(1.0, np.abs(red).max(initial=0.0))
        nonbasic = np.ones(n_total, dtype=bool)
        nonbasic[tab.basis] = False
        # moving along a column with a strictly positive reduced cost leaves the optimal face
        allowed = ~(nonbasic & (red > PIVOT_TOL * scale))
        tab.set_objective(np.asarray(secondary, dtype=float))
        tab.run(allowed, max_iter)

    # recompute the vertex from the final basis to shed accumulated pivot error
    B = A[:, tab.basis]
    try:
        zb = np.linalg.solve(B, b)
    except np.linalg.LinAlgError:
        zb = tab.T[:m, -1]
    z = np.zeros(n_total)
    z[tab.basis] = zb
    z = np.maximum(z, 0.0)[:nv]
    return LpSolution(z=z, objective=float(c @ z), iterations=tab.iterations, basis=tab.basis.copy())
