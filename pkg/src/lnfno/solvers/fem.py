"""P1 finite elements for source-free PB on triangular meshes.

Mesh text format::

    NODES n
    x y            (n lines)
    TRIS m
    i j k          (m lines, 0-based)
    BOUNDARY b
    loop_id node   (b lines, traversal order within each loop)
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, MeshError
from ..numerics import build_csr, cg_solve
from .pb import HomotopyConfig, NewtonTrace, damped_newton

# 3-point rule, exact for quadratics: barycentric (2/3,1/6,1/6) and permutations
_QUAD_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
_QUAD_W = np.full(3, 1 / 3)

MIN_AREA = 1e-14


@dataclass
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_loops: list

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.float64).reshape(-1, 2)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.boundary_loops = [np.asarray(l, dtype=np.int64) for l in self.boundary_loops]

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def boundary_nodes(self):
        return np.concatenate(self.boundary_loops) if self.boundary_loops else np.zeros(0, np.int64)

    @property
    def free_nodes(self):
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    def areas(self):
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def validate(self):
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= self.n_nodes):
            raise MeshError("triangle index out of range")
        a = self.areas()
        bad = np.flatnonzero(a < MIN_AREA)
        if bad.size:
            raise MeshError(f"{bad.size} degenerate or negatively oriented triangles (first {bad[0]})")
        bnodes = self.boundary_nodes
        if np.unique(bnodes).size != bnodes.size:
            raise MeshError("a boundary node appears in more than one loop position")
        edges = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        bedges = {tuple(e) for e in uniq[counts == 1]}
        for li, loop in enumerate(self.boundary_loops):
            if loop.size < 3:
                raise MeshError(f"boundary loop {li} has fewer than 3 nodes")
            for a_, b_ in zip(loop, np.roll(loop, -1)):
                if (min(a_, b_), max(a_, b_)) not in bedges:
                    raise MeshError(f"boundary loop {li} is not closed along mesh edges at ({a_}, {b_})")
        nb = sum(l.size for l in self.boundary_loops)
        if nb != len(bedges):
            raise MeshError(f"boundary loops cover {nb} edges but the mesh has {len(bedges)}")
        return self


def parse_mesh(text, source="<text>"):
    tokens = text.split()
    pos = 0

    def expect(word):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != word:
            raise MeshError(f"expected {word!r} at token {pos}")
        pos += 1
        cnt = int(tokens[pos])
        pos += 1
        return cnt

    try:
        n = expect("NODES")
        nodes = np.array(tokens[pos:pos + 2 * n], dtype=np.float64).reshape(n, 2)
        pos += 2 * n
        m = expect("TRIS")
        tris = np.array(tokens[pos:pos + 3 * m], dtype=np.int64).reshape(m, 3)
        pos += 3 * m
        b = expect("BOUNDARY")
        pairs = np.array(tokens[pos:pos + 2 * b], dtype=np.int64).reshape(b, 2)
    except (ValueError, IndexError) as exc:
        raise MeshError(f"malformed mesh {source}: {exc}") from exc
    loops = []
    for lid in dict.fromkeys(pairs[:, 0].tolist()):
        loops.append(pairs[pairs[:, 0] == lid, 1])
    return Mesh(nodes, tris, loops).validate()


def format_mesh(mesh):
    lines = [f"NODES {mesh.n_nodes}"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.nodes]
    lines.append(f"TRIS {len(mesh.triangles)}")
    lines += [f"{t[0]} {t[1]} {t[2]}" for t in mesh.triangles]
    lines.append(f"BOUNDARY {sum(l.size for l in mesh.boundary_loops)}")
    lines += [f"{lid} {v}" for lid, loop in enumerate(mesh.boundary_loops) for v in loop]
    return "\n".join(lines) + "\n"


def read_mesh(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_mesh(fh.read(), path)


def write_mesh(mesh, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_mesh(mesh))


def unit_square_mesh(n):
    """Structured right-triangle mesh; node ``i*n + j`` sits at (i, j)/(n-1)."""
    from .grid import boundary_order_2d

    t = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(t, t, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="ij")
    v00 = (i * n + j).ravel()
    v10 = v00 + n
    v01 = v00 + 1
    v11 = v10 + 1
    tris = np.concatenate([np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])])
    return Mesh(nodes, tris, [boundary_order_2d(n)]).validate()


def star_mesh(n_rings=8, n_theta=40, points=5, depth=0.3):
    """Polar mesh of the star r(t) = 1 + depth*cos(points*t), center at origin."""
    theta = 2 * np.pi * np.arange(n_theta) / n_theta
    radius = 1.0 + depth * np.cos(points * theta)
    nodes = [np.zeros((1, 2))]
    for l in range(1, n_rings + 1):
        rho = l / n_rings
        nodes.append(np.column_stack([rho * radius * np.cos(theta), rho * radius * np.sin(theta)]))
    nodes = np.concatenate(nodes)

    def ring(l, k):
        return 1 + (l - 1) * n_theta + (k % n_theta)

    tris = []
    for k in range(n_theta):
        tris.append((0, ring(1, k), ring(1, k + 1)))
    for l in range(1, n_rings):
        for k in range(n_theta):
            a, b = ring(l, k), ring(l, k + 1)
            c, d = ring(l + 1, k), ring(l + 1, k + 1)
            tris.append((a, c, d))
            tris.append((a, d, b))
    loop = [ring(n_rings, k) for k in range(n_theta)]
    return Mesh(nodes, np.array(tris), [np.array(loop)]).validate()


class P1Space:
    """Precomputed element geometry for stiffness and quadrature assembly."""

    def __init__(self, mesh):
        self.mesh = mesh
        tri = mesh.triangles
        p = mesh.nodes[tri]
        self.area = mesh.areas()
        # gradients of barycentric basis functions, shape (m, 3, 2)
        d = np.stack([p[:, 1] - p[:, 2], p[:, 2] - p[:, 0], p[:, 0] - p[:, 1]], axis=1)
        self.grad = np.stack([d[:, :, 1], -d[:, :, 0]], axis=-1) / (2 * self.area)[:, None, None]
        self.rows = np.repeat(tri, 3, axis=1).ravel()
        self.cols = np.tile(tri, (1, 3)).ravel()
        n = mesh.n_nodes
        ke = self.area[:, None, None] * np.einsum("tid,tjd->tij", self.grad, self.grad)
        self.K = build_csr(self.rows, self.cols, ke.ravel(), n, n)
        # basis values at quadrature points: (3 points, 3 basis)
        self.phi_q = _QUAD_BARY

    def quad_values(self, u):
        """u_h at the quadrature points, shape (m, 3)."""
        return u[self.mesh.triangles] @ self.phi_q.T

    def load(self, fq):
        """Assemble sum_T area * sum_q w_q f_q phi_i(x_q) for f given at quad points."""
        le = self.area[:, None] * ((fq * _QUAD_W) @ self.phi_q)
        return np.bincount(self.mesh.triangles.ravel(), weights=le.ravel(), minlength=self.mesh.n_nodes)

    def weighted_mass(self, wq):
        """Matrix sum_T area * sum_q w_q c_q phi_i phi_j for c given at quad points."""
        me = self.area[:, None, None] * np.einsum("tq,qi,qj->tij", wq * _QUAD_W, self.phi_q, self.phi_q)
        n = self.mesh.n_nodes
        return build_csr(self.rows, self.cols, me.ravel(), n, n)


def _restrict(M, free):
    """Free-by-free block of a CSR matrix."""
    n = M.n_rows
    fid = np.full(n, -1, dtype=np.int64)
    fid[free] = np.arange(free.size)
    rows = M._rows
    keep = (fid[rows] >= 0) & (fid[M.col_idx] >= 0)
    return build_csr(fid[rows[keep]], fid[M.col_idx[keep]], M.values[keep], free.size, free.size)


def _sinhc(x):
    out = np.ones_like(x)
    nz = np.abs(x) > 1e-8
    out[nz] = np.sinh(x[nz]) / x[nz]
    return out


def solve_pb_fem(mesh, k, g, cfg=None, return_trace=False):
    """Solve K u + k N(u) = 0 on free nodes with u = g on the boundary.

    N(u)_i = int sinh(u_h) phi_i by 3-point quadrature. The continuation
    ramps k over ``cfg.steps`` uniform steps; each step runs
    ``cfg.picard_iters`` Picard sweeps then damped Newton.
    """
    cfg = cfg or HomotopyConfig()
    g = np.asarray(g, dtype=np.float64)
    bnodes = mesh.boundary_nodes
    if g.shape != bnodes.shape or not np.all(np.isfinite(g)):
        raise ContractError(f"boundary values must be finite with length {bnodes.size}")
    space = P1Space(mesh)
    free = mesh.free_nodes
    u = np.zeros(mesh.n_nodes)
    u[bnodes] = g
    K = space.K
    trace = NewtonTrace()

    def full(v):
        w = u.copy()
        w[free] = v
        return w

    # start from the harmonic extension
    Kff = _restrict(K, free)
    rhs = -K.matvec(u)[free]
    v = cg_solve(Kff, rhs, tol=cfg.cg_tol) if free.size else np.zeros(0)

    for s in range(1, cfg.steps + 1):
        ks = k * s / cfg.steps

        def residual(x):
            w = full(x)
            r = K.matvec(w)
            if ks:
                r = r + ks * space.load(np.sinh(space.quad_values(w)))
            return r[free]

        def jsolve(x, r):
            w = full(x)
            J = K
            if ks:
                J = _add(K, space.weighted_mass(ks * np.cosh(space.quad_values(w))))
            return cg_solve(_restrict(J, free), -r, tol=cfg.cg_tol)

        if ks:
            for _ in range(cfg.picard_iters):
                w = full(v)
                M = _add(K, space.weighted_mass(ks * _sinhc(space.quad_values(w))))
                Mff = _restrict(M, free)
                b = -M.matvec(np.where(np.isin(np.arange(mesh.n_nodes), free), 0.0, w))[free]
                v_new = cg_solve(Mff, b, tol=cfg.cg_tol)
                if np.linalg.norm(residual(v_new)) < np.linalg.norm(residual(v)):
                    v = v_new
        log, dlog = [], []
        v, r = damped_newton(residual, jsolve, v, cfg.tol, cfg.max_newton, cfg.min_damping, log, dlog)
        trace.merit.append(log)
        trace.damping.append(dlog)
        trace.final_residual = float(np.max(np.abs(r), initial=0.0))
    out = full(v)
    return (out, trace) if return_trace else out


def _add(A, B):
    return build_csr(np.concatenate([A._rows, B._rows]), np.concatenate([A.col_idx, B.col_idx]),
                     np.concatenate([A.values, B.values]), A.n_rows, A.n_cols)


def fem_residual(mesh, u, k):
    """Free-node max-norm of the P1 PB residual K u + k N(u)."""
    space = P1Space(mesh)
    r = space.K.matvec(u) + k * space.load(np.sinh(space.quad_values(u)))
    return float(np.max(np.abs(r[mesh.free_nodes]), initial=0.0))
