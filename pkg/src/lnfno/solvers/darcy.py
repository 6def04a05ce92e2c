"""Darcy flow -div(a grad u) = 1 on the unit square, u = 0 on the boundary."""

import numpy as np

from ..errors import ContractError
from ..numerics import build_csr, cg_solve
from .grid import Grid


def darcy_operator(a):
    """Five-point operator with arithmetic face averages, on interior unknowns."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    grid = Grid(2, n)
    h2 = grid.h ** 2
    ii = grid.interior
    iid = np.full(grid.n_nodes, -1, dtype=np.int64)
    iid[ii] = np.arange(ii.size)
    af = a.ravel()
    diag = np.zeros(ii.size)
    rows, cols, vals = [], [], []
    for off in (-n, n, -1, 1):
        nb = ii + off
        w = 0.5 * (af[ii] + af[nb]) / h2
        diag += w
        inner = iid[nb] >= 0
        rows.append(np.flatnonzero(inner))
        cols.append(iid[nb[inner]])
        vals.append(-w[inner])
    rows.append(np.arange(ii.size))
    cols.append(np.arange(ii.size))
    vals.append(diag)
    A = build_csr(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), ii.size, ii.size)
    return grid, A


def darcy_solve(a, n=None, tol=1e-10):
    """Pressure field on the ``(n, n)`` node grid of the coefficient ``a``."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError("coefficient must be a square grid")
    if n is not None and a.shape[0] != n:
        raise ContractError(f"coefficient grid is {a.shape[0]}, expected {n}")
    if not np.all(np.isfinite(a)) or np.min(a) <= 0:
        raise ContractError("coefficient must be finite and strictly positive")
    grid, A = darcy_operator(a)
    u_i = cg_solve(A, np.ones(grid.interior.size), tol=tol)
    return grid.assemble(u_i, np.zeros(grid.n_boundary))
