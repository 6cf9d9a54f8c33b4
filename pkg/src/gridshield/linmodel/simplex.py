"""Dense two-phase primal simplex for small LPs.

Only meant for desk-scale instances (a few hundred rows); it trades speed for
having no dependency beyond numpy. Bounds are folded into a standard-form
problem ``min c y, A y = b, y >= 0`` before pivoting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS = 1e-9


@dataclass
class LPResult:
    status: str  # optimal | infeasible | unbounded | limit
    x: np.ndarray | None
    fun: float


def _pivot(T: np.ndarray, r: int, c: int):
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _run(T: np.ndarray, basis: list[int], ncols: int, max_iter: int) -> str:
    """Pivot on tableau ``T`` (last row = reduced costs, last col = rhs)."""
    degenerate = 0
    for _ in range(max_iter):
        red = T[-1, :ncols]
        if degenerate > 50:
            cand = np.flatnonzero(red < -_EPS)
            if cand.size == 0:
                return "optimal"
            c = int(cand[0])
        else:
            c = int(np.argmin(red))
            if red[c] >= -_EPS:
                return "optimal"
        col = T[:-1, c]
        pos = col > _EPS
        if not pos.any():
            return "unbounded"
        ratios = np.full(col.shape, np.inf)
        ratios[pos] = T[:-1, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + _EPS * max(1.0, abs(best)))
        r = int(min(ties, key=lambda i: basis[i]))
        degenerate = degenerate + 1 if best <= _EPS else 0
        _pivot(T, r, c)
        basis[r] = c
    return "limit"


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, lb=None, ub=None,
             max_iter: int = 50_000) -> LPResult:
    """Minimize ``c @ x`` subject to rows and bounds (dense inputs)."""
    c = np.asarray(c, dtype=float)
    n = c.size
    lb = np.zeros(n) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    if np.any(lb > ub + _EPS):
        return LPResult("infeasible", None, np.nan)
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)

    # x = shift + M y, y >= 0; free variables get two columns
    cols = []  # (orig index, sign)
    shift = np.zeros(n)
    extra_ub = []  # (column in y, bound)
    for j in range(n):
        lo, hi = lb[j], ub[j]
        if np.isfinite(lo):
            shift[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                extra_ub.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            shift[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    m_y = len(cols)
    M = np.zeros((n, m_y))
    for k, (j, s) in enumerate(cols):
        M[j, k] = s

    Aub_y = A_ub @ M
    bub_y = b_ub - A_ub @ shift
    if extra_ub:
        E = np.zeros((len(extra_ub), m_y))
        for i, (k, h) in enumerate(extra_ub):
            E[i, k] = 1.0
        Aub_y = np.vstack([Aub_y, E])
        bub_y = np.concatenate([bub_y, [h for _, h in extra_ub]])
    Aeq_y = A_eq @ M
    beq_y = b_eq - A_eq @ shift

    n_s = Aub_y.shape[0]
    A = np.block([
        [Aub_y, np.eye(n_s)],
        [Aeq_y, np.zeros((Aeq_y.shape[0], n_s))],
    ]) if (n_s + Aeq_y.shape[0]) else np.zeros((0, m_y))
    b = np.concatenate([bub_y, beq_y])
    cy = np.concatenate([M.T @ c, np.zeros(n_s)])
    const = float(c @ shift)
    rows, nv = A.shape if A.size else (0, m_y + n_s)

    if rows == 0:
        if np.any(cy < -_EPS):
            return LPResult("unbounded", None, -np.inf)
        y = np.zeros(nv)
        return LPResult("optimal", shift + M @ y[:m_y], const)

    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    # phase 1: artificials on every row
    T = np.zeros((rows + 1, nv + rows + 1))
    T[:rows, :nv] = A
    T[:rows, nv:nv + rows] = np.eye(rows)
    T[:rows, -1] = b
    T[-1, :nv] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(nv, nv + rows))
    status = _run(T, basis, nv + rows, max_iter)
    if status == "limit":
        return LPResult("limit", None, np.nan)
    if -T[-1, -1] > 1e-7 * max(1.0, np.abs(b).max()):
        return LPResult("infeasible", None, np.nan)

    # drive artificials out of the basis; drop redundant rows
    keep = []
    for r in range(rows):
        if basis[r] >= nv:
            nz = np.flatnonzero(np.abs(T[r, :nv]) > 1e-9)
            if nz.size:
                _pivot(T, r, int(nz[0]))
                basis[r] = int(nz[0])
                keep.append(r)
        else:
            keep.append(r)
    T2 = np.zeros((len(keep) + 1, nv + 1))
    T2[:-1, :nv] = T[keep, :nv]
    T2[:-1, -1] = T[keep, -1]
    basis = [basis[r] for r in keep]
    T2[-1, :nv] = cy
    for r, bj in enumerate(basis):
        if T2[-1, bj] != 0.0:
            T2[-1] -= T2[-1, bj] * T2[r]
    status = _run(T2, basis, nv, max_iter)
    if status != "optimal":
        return LPResult(status, None, -np.inf if status == "unbounded" else np.nan)
    y = np.zeros(nv)
    for r, bj in enumerate(basis):
        y[bj] = T2[r, -1]
    x = shift + M @ y[:m_y]
    return LPResult("optimal", x, float(c @ x))
