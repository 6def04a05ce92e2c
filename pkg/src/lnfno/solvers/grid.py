"""Uniform node grids on the unit square/cube and the 5/7-point Laplacian.

Fields are stored as arrays indexed ``[i, j(, k)]`` with ``x = i*h``,
``y = j*h`` (``z = k*h``) and flattened row-major. Boundary nodes are
enumerated in a fixed order:

* 2-D: counterclockwise edge concatenation starting at the origin
  (bottom, right, top, left), each corner counted once, ``4(n-1)`` nodes.
* 3-D: faces x=0, x=1 (full), y=0, y=1 (excluding x-faces),
  z=0, z=1 (excluding x- and y-faces), ``6n^2 - 12n + 8`` nodes.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError
from ..numerics import build_csr


def boundary_order_2d(n):
    bottom = [(i, 0) for i in range(n - 1)]
    right = [(n - 1, j) for j in range(n - 1)]
    top = [(i, n - 1) for i in range(n - 1, 0, -1)]
    left = [(0, j) for j in range(n - 1, 0, -1)]
    ij = np.array(bottom + right + top + left, dtype=np.int64)
    return ij[:, 0] * n + ij[:, 1]


def boundary_order_3d(n):
    idx = np.arange(n ** 3).reshape(n, n, n)
    inner = slice(1, n - 1)
    parts = [
        idx[0, :, :].ravel(), idx[n - 1, :, :].ravel(),
        idx[inner, 0, :].ravel(), idx[inner, n - 1, :].ravel(),
        idx[inner, inner, 0].ravel(), idx[inner, inner, n - 1].ravel(),
    ]
    return np.concatenate(parts)


@dataclass
class Grid:
    dim: int
    n: int
    boundary: np.ndarray = field(init=False, repr=False)
    interior: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise DimensionError(f"grid dim must be 2 or 3, got {self.dim}")
        if self.n < 2:
            raise DimensionError(f"grid needs n >= 2, got {self.n}")
        self.boundary = boundary_order_2d(self.n) if self.dim == 2 else boundary_order_3d(self.n)
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary] = False
        self.interior = np.flatnonzero(mask)

    @property
    def h(self):
        return 1.0 / (self.n - 1)

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def n_nodes(self):
        return self.n ** self.dim

    @property
    def n_boundary(self):
        return self.boundary.size

    def coords(self):
        """Node coordinates, shape ``(*shape, dim)``."""
        t = np.linspace(0.0, 1.0, self.n)
        return np.stack(np.meshgrid(*([t] * self.dim), indexing="ij"), axis=-1)

    def boundary_coords(self):
        return self.coords().reshape(-1, self.dim)[self.boundary]

    def assemble(self, u_interior, g):
        """Full node field from interior values and boundary trace."""
        u = np.empty(self.n_nodes)
        u[self.interior] = u_interior
        u[self.boundary] = g
        return u.reshape(self.shape)

    def interior_mask(self):
        m = np.zeros(self.n_nodes, dtype=bool)
        m[self.interior] = True
        return m.reshape(self.shape)


def assemble_laplacian(grid):
    """Interior operator for -Delta with Dirichlet elimination.

    Returns ``(A, B)``: ``A`` acts on interior unknowns (diagonal 2*dim/h^2,
    -1/h^2 to interior neighbours) and ``B`` maps the boundary trace to the
    right-hand side, so that ``-Delta_h u = A u_I - B g`` on interior nodes.
    """
    n, dim = grid.n, grid.dim
    if n < 3:
        raise DimensionError(f"need n >= 3 for an interior node, got {n}")
    h2 = grid.h ** 2
    interior_id = np.full(grid.n_nodes, -1, dtype=np.int64)
    interior_id[grid.interior] = np.arange(grid.interior.size)
    boundary_id = np.full(grid.n_nodes, -1, dtype=np.int64)
    boundary_id[grid.boundary] = np.arange(grid.n_boundary)
    ni = grid.interior.size
    rows = [np.arange(ni)]
    cols = [np.arange(ni)]
    vals = [np.full(ni, 2.0 * dim / h2)]
    b_rows, b_cols = [], []
    strides = [n ** (dim - 1 - a) for a in range(dim)]
    for s in strides:
        for sign in (-1, 1):
            nb = grid.interior + sign * s
            inner = interior_id[nb] >= 0
            rows.append(np.flatnonzero(inner))
            cols.append(interior_id[nb[inner]])
            vals.append(np.full(inner.sum(), -1.0 / h2))
            b_rows.append(np.flatnonzero(~inner))
            b_cols.append(boundary_id[nb[~inner]])
    A = build_csr(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), ni, ni)
    br = np.concatenate(b_rows)
    B = build_csr(br, np.concatenate(b_cols), np.full(br.size, 1.0 / h2), ni, grid.n_boundary)
    return A, B


def discrete_laplacian(u, h):
    """5/7-point Delta_h of a full node field at interior nodes (no elimination)."""
    u = np.asarray(u, dtype=np.float64)
    c = (slice(1, -1),) * u.ndim
    out = -2.0 * u.ndim * u[c]
    for a in range(u.ndim):
        lo = list(c)
        hi = list(c)
        lo[a] = slice(0, -2)
        hi[a] = slice(2, None)
        out = out + u[tuple(lo)] + u[tuple(hi)]
    return out / h ** 2
