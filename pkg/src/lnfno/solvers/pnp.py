"""Steady Poisson-Nernst-Planck on the unit square by Gummel iteration.

    -Delta phi = c+ - c-,   div(grad c+ + c+ grad phi) = 0,   div(grad c- - c- grad phi) = 0

Each sweep takes one nonlinear-Poisson step for phi (the charge is assumed
to respond as Boltzmann factors, which keeps the sweep stable at large
concentrations) and one defect-correction step per species. The correction
operator is the Scharfetter-Gummel discretization written in Slotboom
variables, which is symmetric and an M-matrix; the defect is measured with
the centered scheme, so the fixed point is the centered discretization.
"""

import numpy as np

from ..errors import ContractError, SolverError
from ..numerics import build_csr, cg_solve
from .grid import Grid, assemble_laplacian, discrete_laplacian

_INNER = (slice(1, -1), slice(1, -1))


def bernoulli(x):
    """B(x) = x / (exp(x) - 1), with B(0) = 1."""
    x = np.asarray(x, dtype=np.float64)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, safe / np.expm1(safe))


def _neighbours(u):
    """Views of the four neighbour slabs of the interior block."""
    return (u[:-2, 1:-1], u[2:, 1:-1], u[1:-1, :-2], u[1:-1, 2:])


def np_residual(c, phi, s, h):
    """Centered residual of div(grad c + s c grad phi) at interior nodes."""
    cc, pc = c[_INNER], phi[_INNER]
    r = np.zeros_like(cc)
    for cn, pn in zip(_neighbours(c), _neighbours(phi)):
        r += (cn - cc) + s * 0.5 * (cc + cn) * (pn - pc)
    return r / h ** 2


def _np_scale(c, phi, s, h):
    cc, pc = c[_INNER], phi[_INNER]
    acc = np.zeros_like(cc)
    for cn, pn in zip(_neighbours(c), _neighbours(phi)):
        acc += np.abs(cn - cc) + np.abs(0.5 * (cc + cn) * (pn - pc))
    return acc / h ** 2


def pnp_residuals(phi, c_plus, c_minus):
    """Relative max-norm residuals (poisson, nernst_planck_plus, nernst_planck_minus).

    Each is ``max|r| / max(sum of |stencil terms|)`` over interior nodes,
    or 0 when every term vanishes.
    """
    n = phi.shape[0]
    h = 1.0 / (n - 1)
    out = []
    lap = discrete_laplacian(phi, h)
    charge = c_plus[_INNER] - c_minus[_INNER]
    rp = -lap - charge
    out.append(_relative(rp, np.abs(lap) + np.abs(c_plus[_INNER]) + np.abs(c_minus[_INNER])))
    for c, s in ((c_plus, 1.0), (c_minus, -1.0)):
        out.append(_relative(np_residual(c, phi, s, h), _np_scale(c, phi, s, h)))
    return tuple(out)


def _relative(r, scale):
    m = float(np.max(np.abs(r)))
    sc = float(np.max(scale))
    if sc == 0.0:
        return m
    return m / sc


class _SlotboomOperator:
    """-L_W on interior unknowns for weights w_ij = exp(-psi_i) B(psi_j - psi_i)."""

    def __init__(self, grid):
        n = grid.n
        self.grid = grid
        self.interior_id = np.full(grid.n_nodes, -1, dtype=np.int64)
        self.interior_id[grid.interior] = np.arange(grid.interior.size)
        self.offsets = (-n, n, -1, 1)
        self.inv_h2 = 1.0 / grid.h ** 2

    def matrix(self, psi_flat):
        grid = self.grid
        ii = grid.interior
        ni = ii.size
        diag = np.zeros(ni)
        rows, cols, vals = [], [], []
        for off in self.offsets:
            nb = ii + off
            w = self.inv_h2 * np.exp(-psi_flat[ii]) * bernoulli(psi_flat[nb] - psi_flat[ii])
            diag += w
            inner = self.interior_id[nb] >= 0
            rows.append(np.flatnonzero(inner))
            cols.append(self.interior_id[nb[inner]])
            vals.append(-w[inner])
        rows.append(np.arange(ni))
        cols.append(np.arange(ni))
        vals.append(diag)
        return build_csr(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), ni, ni)


def _harmonic(grid, A, B, g, cg_tol):
    return grid.assemble(cg_solve(A, B.matvec(g), tol=cg_tol), g)


def gummel_pnp(g_phi, g_cp, g_cm, n=129, tol=1e-8, max_sweeps=200, cg_tol=1e-12,
               return_info=False):
    """Solve the coupled system for Dirichlet traces in the grid's boundary order.

    Returns ``(phi, c_plus, c_minus)`` as ``(n, n)`` fields, plus a dict
    with the sweep count and final residuals when ``return_info``.
    """
    grid = Grid(2, n)
    traces = [np.asarray(t, dtype=np.float64) for t in (g_phi, g_cp, g_cm)]
    for t in traces:
        if t.shape != (grid.n_boundary,) or not np.all(np.isfinite(t)):
            raise ContractError(f"boundary traces must be finite with length {grid.n_boundary}")
    g_phi, g_cp, g_cm = traces
    if np.min(g_cp) <= 0 or np.min(g_cm) <= 0:
        raise ContractError("concentration traces must be strictly positive")
    h = grid.h
    A, B = assemble_laplacian(grid)
    ii = grid.interior
    op = _SlotboomOperator(grid)

    phi = _harmonic(grid, A, B, g_phi, cg_tol)
    cs = [_harmonic(grid, A, B, g_cp, cg_tol), _harmonic(grid, A, B, g_cm, cg_tol)]
    bg = B.matvec(g_phi)
    update = np.inf
    for sweep in range(1, max_sweeps + 1):
        cp_i = cs[0].ravel()[ii]
        cm_i = cs[1].ravel()[ii]
        r = A.matvec(phi.ravel()[ii]) - bg - (cp_i - cm_i)
        d_phi = cg_solve(A.add_diagonal(cp_i + cm_i), -r, tol=cg_tol)
        phi.ravel()[ii] += d_phi
        update = float(np.max(np.abs(d_phi)))
        for idx, s in ((0, 1.0), (1, -1.0)):
            c = cs[idx]
            psi = s * phi.ravel()
            psi = psi - psi.mean()
            rc = np_residual(c, phi, s, h).ravel()
            y = cg_solve(op.matrix(psi), rc, tol=cg_tol)
            dc = np.exp(-psi[ii]) * y
            c.ravel()[ii] += dc
            update = max(update, float(np.max(np.abs(dc))))
        if not all(np.all(np.isfinite(f)) for f in (phi, *cs)):
            raise SolverError(f"Gummel iteration diverged at sweep {sweep}", residual=np.inf)
        if update < tol:
            break
    else:
        raise SolverError(f"Gummel did not converge in {max_sweeps} sweeps", residual=update)
    if min(float(cs[0].min()), float(cs[1].min())) <= 0:
        raise SolverError("concentration lost positivity", residual=update)
    if return_info:
        return phi, cs[0], cs[1], {"sweeps": sweep, "residuals": pnp_residuals(phi, *cs)}
    return phi, cs[0], cs[1]
