"""Poisson-Boltzmann -Delta u + k sinh(u) = f by homotopy + damped Newton."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, SolverError
from ..numerics import cg_solve
from .grid import assemble_laplacian, discrete_laplacian


@dataclass
class HomotopyConfig:
    steps: int = 8
    tol: float = 1e-8
    max_newton: int = 50
    min_damping: float = 2.0 ** -8
    picard_iters: int = 3
    cg_tol: float = 1e-10

    def __post_init__(self):
        if self.steps < 1:
            raise ContractError("homotopy needs at least one step")
        if self.tol <= 0:
            raise ContractError("tolerance must be positive")


@dataclass
class NewtonTrace:
    """Residual history: one list of accepted merit values per homotopy step."""

    merit: list = field(default_factory=list)
    damping: list = field(default_factory=list)
    final_residual: float = np.inf


def damped_newton(residual, jacobian_solve, u, tol, max_iter, min_damping, merit_log=None,
                  damping_log=None):
    """Newton with halving line search on the 2-norm of the residual.

    ``residual(u)`` returns the residual vector; ``jacobian_solve(u, r)``
    returns the Newton direction solving J(u) du = -r. Converged when the
    max-norm residual is <= tol.
    """
    r = residual(u)
    merit = np.linalg.norm(r)
    if merit_log is not None:
        merit_log.append(merit)
    for _ in range(max_iter):
        if np.max(np.abs(r), initial=0.0) <= tol:
            return u, r
        du = jacobian_solve(u, r)
        step = 1.0
        while True:
            un = u + step * du
            rn = residual(un)
            mn = np.linalg.norm(rn)
            if np.isfinite(mn) and mn < merit:
                break
            step *= 0.5
            if step < min_damping:
                raise SolverError("line search failed to reduce the residual",
                                  residual=float(np.max(np.abs(r))))
        u, r, merit = un, rn, mn
        if merit_log is not None:
            merit_log.append(merit)
        if damping_log is not None:
            damping_log.append(step)
    if np.max(np.abs(r), initial=0.0) <= tol:
        return u, r
    raise SolverError(f"Newton did not converge in {max_iter} iterations",
                      residual=float(np.max(np.abs(r))))


def solve_pb_grid(grid, k, f, g, cfg=None, return_trace=False):
    """Finite-difference PB solve on a 2-D/3-D grid.

    ``f`` is given on interior nodes (array of length n_interior, a full
    field, or None for source-free); ``g`` is the boundary trace in the
    grid's boundary order. The continuation ramps the boundary amplitude
    ``lambda*g`` over ``cfg.steps`` uniform steps. Returns the full field.
    """
    cfg = cfg or HomotopyConfig()
    if k < 0:
        raise ContractError("k must be non-negative")
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (grid.n_boundary,) or not np.all(np.isfinite(g)):
        raise ContractError(f"boundary trace must be finite with length {grid.n_boundary}")
    A, Bmap = assemble_laplacian(grid)
    ni = grid.interior.size
    if f is None:
        f_i = np.zeros(ni)
    else:
        f = np.asarray(f, dtype=np.float64)
        f_i = f.ravel()[grid.interior] if f.size == grid.n_nodes else f.ravel()
    if f_i.shape != (ni,):
        raise ContractError("source has the wrong size")
    trace = NewtonTrace()
    u = np.zeros(ni)

    for s in range(1, cfg.steps + 1):
        lam = s / cfg.steps
        bg = Bmap.matvec(lam * g)

        def residual(v):
            return A.matvec(v) - bg + k * np.sinh(v) - f_i

        def jsolve(v, r):
            J = A.add_diagonal(k * np.cosh(v)) if k else A
            return cg_solve(J, -r, tol=cfg.cg_tol)

        log, dlog = [], []
        u, r = damped_newton(residual, jsolve, u, cfg.tol, cfg.max_newton, cfg.min_damping, log, dlog)
        trace.merit.append(log)
        trace.damping.append(dlog)
        trace.final_residual = float(np.max(np.abs(r), initial=0.0))
    full = grid.assemble(u, g)
    return (full, trace) if return_trace else full


def pb_residual(grid, u, k, f=None):
    """Max-norm of -Delta_h u + k sinh(u) - f on interior nodes (full fields)."""
    u = np.asarray(u, dtype=np.float64).reshape(grid.shape)
    c = (slice(1, -1),) * grid.dim
    r = -discrete_laplacian(u, grid.h) + k * np.sinh(u[c])
    if f is not None:
        r = r - np.asarray(f, dtype=np.float64).reshape(grid.shape)[c]
    return float(np.max(np.abs(r)))
