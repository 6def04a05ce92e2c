"""Benchmark dataset generation and residual audits.

Each sample ``i`` draws from its own stream ``(seed, stream_id(DATA, attempt, i))``,
so a dataset is a pure function of its spec no matter how samples are
scheduled. Samples whose solver fails are regenerated with the next
attempt stream; more than 20% discards aborts generation.
"""

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from . import fieldgen
from .errors import (BlowUpError, ConfigurationError, ContractError, GenerationError,
                     SolverError, VerificationError)
from .nodf import Component, blob, by_name
from .numerics import bilinear_downsample, spectral_lowpass_downsample
from .rng import Rng, stream_id
from .solvers import (Grid, HomotopyConfig, darcy_solve, etdrk4_burgers, gummel_pnp,
                      ns_rollout, pb_residual, pnp_residuals, read_mesh, solve_pb_fem,
                      solve_pb_grid, star_mesh)
from .solvers.fem import fem_residual, format_mesh, parse_mesh
from .solvers.grid import discrete_laplacian

STREAM_DATA = 2
STREAM_VERIFY = 4
MAX_DISCARD_FRACTION = 0.2

BENCHMARKS = ("laplace", "burgers", "darcy_smooth", "pb_square", "pb_source", "pb_fem",
              "pb_3d", "ns", "pnp")

DEFAULTS = {
    "laplace": {"res": 51},
    "burgers": {"res": 64, "fine_res": 512, "n_t": 100, "nu": 0.01, "T": 1.0, "dt": 1e-4},
    "darcy_smooth": {"res": 129, "fine_res": 241},
    "pb_square": {"res": 101},
    "pb_source": {"res": 101},
    "pb_fem": {"res": 0},
    "pb_3d": {"res": 33},
    "ns": {"res": 64, "n_t": 50, "nu": 1e-3, "T": 50.0, "dt": 1e-4},
    "pnp": {"res": 129},
}


@dataclass(frozen=True)
class BenchmarkSpec:
    """What to generate. Zero/empty resolution fields take the benchmark default."""

    benchmark: str
    n_samples: int = 2000
    seed: int = 0
    res: int = 0
    fine_res: int = 0
    n_t: int = 0
    nu: float = 0.0
    T: float = 0.0
    dt: float = 0.0
    k: float = 1.0
    mesh: str = "star"
    laplace_sources: int = 10
    yukawa_sources: int = 8
    pnp_tol: float = 1e-8

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise ConfigurationError(f"unknown benchmark {self.benchmark!r}")
        if self.n_samples < 1:
            raise ConfigurationError("n_samples must be at least 1")
        if self.k < 0:
            raise ConfigurationError("k must be non-negative")
        for key, value in DEFAULTS[self.benchmark].items():
            if not getattr(self, key):
                object.__setattr__(self, key, value)

    def to_metadata(self):
        return {f"spec.{f.name}": repr(getattr(self, f.name)) if isinstance(getattr(self, f.name), float)
                else str(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_metadata(cls, meta):
        kw = {}
        for f in fields(cls):
            key = f"spec.{f.name}"
            if key in meta:
                kw[f.name] = f.type(meta[key]) if f.type in (int, float) else meta[key]
        return cls(**kw)


def load_mesh(name):
    if name == "star":
        return star_mesh()
    return read_mesh(name)


# ---------------------------------------------------------------- per-sample draws

def _laplace(spec, rng, ctx):
    grid = ctx["grid"]
    g, u, (centers, weights) = fieldgen.laplace_mad_sample(grid, spec.laplace_sources, rng=rng,
                                                           return_sources=True)
    src = np.concatenate([centers, weights[:, None]], axis=1)
    return {"g": g}, {"u": u}, {"sources": src}


def _burgers(spec, rng, ctx):
    u0 = fieldgen.fourier_ic_1d(8, 2.0, spec.fine_res, rng)
    traj = etdrk4_burgers(u0, spec.nu, spec.dt, spec.T, spec.n_t)
    coarse0 = spectral_lowpass_downsample(u0, spec.res)
    coarse = spectral_lowpass_downsample(traj, spec.res, axis=1)
    return {"u0": coarse0}, {"u": coarse.T.copy()}, {}


def _darcy(spec, rng, ctx):
    fine = Grid(2, spec.fine_res)
    a = fieldgen.darcy_coefficient(fieldgen.sine_net_field((2, 50, 50, 1), fine, rng))
    u = darcy_solve(a)
    return ({"a": bilinear_downsample(a, spec.res)},
            {"u": bilinear_downsample(u, spec.res).ravel()}, {})


def _pb_square(spec, rng, ctx):
    grid = ctx["grid"]
    g = fieldgen.boundary_grf_mix(grid.n_boundary, rng)
    u = solve_pb_grid(grid, spec.k, None, g, ctx["homotopy"])
    return {"g": g}, {"u": u.ravel()}, {}


def _pb_source(spec, rng, ctx):
    grid = ctx["grid"]
    raw, net = fieldgen.sine_net_field((2, 50, 50, 1), grid, rng, return_net=True)
    pts = grid.coords().reshape(-1, 2)
    u = raw.ravel()
    f_tilde = net.laplacian(pts) - spec.k * np.sinh(u)
    return {"g": u[grid.boundary], "f": f_tilde.reshape(grid.shape)}, {"u": u}, {}


def _pb_fem(spec, rng, ctx):
    mesh = ctx["mesh"]
    g = fieldgen.boundary_grf_mix(mesh.boundary_nodes.size, rng)
    u = solve_pb_fem(mesh, spec.k, g, ctx["homotopy"])
    return {"g": g}, {"u": u}, {}


def _pb_3d(spec, rng, ctx):
    grid = ctx["grid"]
    g = fieldgen.yukawa_boundary_3d(grid, spec.yukawa_sources, rng)
    u = solve_pb_grid(grid, spec.k, None, g, ctx["homotopy"])
    return {"g": g}, {"u": u.ravel()}, {}


def _ns(spec, rng, ctx):
    w0 = fieldgen.grf_periodic_2d(spec.res, 2.5, 7.0, rng)
    snaps = ns_rollout(w0, spec.nu, spec.dt, spec.T, spec.T / spec.n_t)
    return {"w0": w0}, {"w": np.moveaxis(snaps, 0, -1).copy()}, {}


def _pnp(spec, rng, ctx):
    nb = ctx["grid"].n_boundary
    g_phi = fieldgen.fourier_boundary_series(nb, rng)
    g_cp = fieldgen.fourier_boundary_positive(nb, 0.1, rng)
    g_cm = fieldgen.fourier_boundary_positive(nb, 0.1, rng)
    phi, cp, cm = gummel_pnp(g_phi, g_cp, g_cm, n=spec.res, tol=spec.pnp_tol)
    return ({"g_phi": g_phi, "g_cp": g_cp, "g_cm": g_cm},
            {"phi": phi.ravel(), "c_plus": cp.ravel(), "c_minus": cm.ravel()}, {})


_DRAW = {"laplace": _laplace, "burgers": _burgers, "darcy_smooth": _darcy, "pb_square": _pb_square,
         "pb_source": _pb_source, "pb_fem": _pb_fem, "pb_3d": _pb_3d, "ns": _ns, "pnp": _pnp}


def _context(spec):
    ctx = {"homotopy": HomotopyConfig()}
    if spec.benchmark in ("laplace", "pb_square", "pb_source", "pnp"):
        ctx["grid"] = Grid(2, spec.res)
    elif spec.benchmark == "pb_3d":
        ctx["grid"] = Grid(3, spec.res)
    elif spec.benchmark == "pb_fem":
        mesh = load_mesh(spec.mesh)
        mesh.validate()
        ctx["mesh"] = mesh
    return ctx


def _sample(spec, index, ctx, max_attempts):
    """(inputs, outputs, aux, discards) for sample ``index``."""
    for attempt in range(max_attempts):
        rng = Rng(spec.seed, stream_id(STREAM_DATA, attempt, index))
        try:
            inputs, outputs, aux = _DRAW[spec.benchmark](spec, rng, ctx)
        except (SolverError, BlowUpError):
            continue
        if not all(np.all(np.isfinite(v)) for v in inputs.values()):
            continue
        return inputs, outputs, aux, attempt
    return None, None, None, max_attempts


def _sample_job(args):
    spec, index, max_attempts = args
    return _sample(spec, index, _context(spec), max_attempts)


def worker_count():
    raw = os.environ.get("NODF_THREADS", "")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigurationError(f"NODF_THREADS must be an integer, got {raw!r}") from None
        return max(1, n)
    return os.cpu_count() or 1


def generate(spec, workers=None, timestamp=None):
    """Components and metadata for the whole dataset, in sample order."""
    limit = int(np.floor(MAX_DISCARD_FRACTION * spec.n_samples))
    workers = worker_count() if workers is None else max(1, int(workers))
    if workers > 1 and spec.n_samples > 1:
        jobs = [(spec, i, limit + 1) for i in range(spec.n_samples)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sample_job, jobs))
    else:
        ctx = _context(spec)
        results = []
        discards = 0
        for i in range(spec.n_samples):
            res = _sample(spec, i, ctx, limit - discards + 1)
            discards += res[3]
            if res[0] is None or discards > limit:
                raise GenerationError(f"{discards} discarded samples exceed the "
                                      f"{MAX_DISCARD_FRACTION:.0%} limit of {spec.n_samples}")
            results.append(res)
    discards = sum(r[3] for r in results)
    if discards > limit or any(r[0] is None for r in results):
        raise GenerationError(f"{discards} discarded samples exceed the "
                              f"{MAX_DISCARD_FRACTION:.0%} limit of {spec.n_samples}")
    components = []
    for role, pos in (("input", 0), ("output", 1)):
        for name in results[0][pos]:
            stacked = np.stack([r[pos][name] for r in results])
            components.append(Component(name, role, stacked))
    for name in results[0][2]:
        components.append(Component(name, "aux", np.stack([r[2][name] for r in results])))
    if spec.benchmark == "pb_fem":
        components.append(blob("mesh", format_mesh(_context(spec)["mesh"]).encode("utf-8")))
    meta = {"benchmark": spec.benchmark, "seed": str(spec.seed), "discards": str(discards)}
    meta.update(spec.to_metadata())
    for c in components:
        if c.role != "aux":
            meta[f"shape.{c.name}"] = "x".join(str(d) for d in c.data.shape[1:])
    meta["created"] = timestamp if timestamp is not None else time.strftime("%Y-%m-%dT%H:%M:%SZ",
                                                                            time.gmtime())
    return components, meta


# ---------------------------------------------------------------- verification

def _mesh_of(comps):
    return parse_mesh(bytes(comps["mesh"].data).decode("utf-8"), "dataset blob")


def _check_laplace(spec, comps, idx):
    grid = Grid(2, spec.res)
    fine = Grid(2, 2 * spec.res - 1)
    pts = grid.coords().reshape(-1, 2)
    fpts = fine.coords().reshape(-1, 2)
    out, ratios = {}, []
    for i in idx:
        u = comps["u"].data[i]
        g = comps["g"].data[i]
        src = comps["sources"].data[i]
        exact = fieldgen.log_sources(pts, src[:, :2], src[:, 2])
        err = max(float(np.max(np.abs(u - exact))), float(np.max(np.abs(g - u[grid.boundary]))))
        out[i] = err
        uf = fieldgen.log_sources(fpts, src[:, :2], src[:, 2]).reshape(fine.shape)
        rc = np.abs(discrete_laplacian(u.reshape(grid.shape), grid.h))
        rf = np.abs(discrete_laplacian(uf, fine.h))[1::2, 1::2]
        ratios.append(float(rc.max() / rf.max()))
    return out, 1e-10, {"harmonicity_ratio": float(np.median(ratios))}


def _check_grid_pb(spec, comps, idx, dim):
    grid = Grid(dim, spec.res)
    out = {}
    for i in idx:
        u = comps["u"].data[i].reshape(grid.shape)
        g = comps["g"].data[i]
        bc = float(np.max(np.abs(u.ravel()[grid.boundary] - g)))
        out[i] = max(pb_residual(grid, u, spec.k), bc)
    return out, 1e-6, {}


def _check_pb_source(spec, comps, idx):
    grid = Grid(2, spec.res)
    out = {}
    for i in idx:
        u = comps["u"].data[i].reshape(grid.shape)
        f = -comps["f"].data[i]
        # the stored forcing is exact, so the discrete residual is the
        # stencil truncation error, O(h^2)
        out[i] = pb_residual(grid, u, spec.k, f) / grid.h ** 2
    return out, 10.0, {}


def _check_fem(spec, comps, idx):
    mesh = _mesh_of(comps)
    out = {}
    for i in idx:
        u = comps["u"].data[i]
        bc = float(np.max(np.abs(u[mesh.boundary_nodes] - comps["g"].data[i])))
        out[i] = max(fem_residual(mesh, u, spec.k), bc)
    return out, 1e-6, {}


def _check_pnp(spec, comps, idx):
    n = spec.res
    out = {}
    for i in idx:
        fields_ = [comps[k].data[i].reshape(n, n) for k in ("phi", "c_plus", "c_minus")]
        out[i] = max(pnp_residuals(*fields_))
        if min(fields_[1].min(), fields_[2].min()) <= 0:
            out[i] = np.inf
    return out, 1e-6, {}


def _check_burgers(spec, comps, idx):
    out = {}
    for i in idx:
        u = comps["u"].data[i]
        m0 = comps["u0"].data[i].mean()
        out[i] = float(np.max(np.abs(u.mean(axis=0) - m0)))
    return out, 1e-10, {}


def _check_ns(spec, comps, idx):
    out = {}
    for i in idx:
        w = comps["w"].data[i]
        out[i] = float(np.max(np.abs(w.mean(axis=(0, 1))))) if np.all(np.isfinite(w)) else np.inf
    return out, 1e-10, {}


def _check_darcy(spec, comps, idx):
    out = {}
    for i in idx:
        u = comps["u"].data[i].reshape(spec.res, spec.res)
        a = comps["a"].data[i]
        edge = np.concatenate([u[0], u[-1], u[:, 0], u[:, -1]])
        bad = float(max(np.max(np.abs(edge)), max(0.0, -u.min()), max(0.0, 0.1 - a.min())))
        out[i] = bad
    return out, 1e-12, {}


def verify_dataset(components, metadata, n_check=5, seed=0):
    """Re-audit ``n_check`` random samples; raises VerificationError on failure.

    Returns a report dict with the checked indices, the worst residual and
    the threshold it was compared against.
    """
    spec = BenchmarkSpec.from_metadata(metadata)
    comps = by_name(components)
    n = next(c.data.shape[0] for c in components if c.role != "aux")
    n_check = min(max(1, int(n_check)), n)
    idx = sorted(int(i) for i in Rng(seed, stream_id(STREAM_VERIFY, 0)).permutation(n)[:n_check])
    b = spec.benchmark
    if b == "laplace":
        res, thr, extra = _check_laplace(spec, comps, idx)
    elif b in ("pb_square", "pb_3d"):
        res, thr, extra = _check_grid_pb(spec, comps, idx, 3 if b == "pb_3d" else 2)
    elif b == "pb_source":
        res, thr, extra = _check_pb_source(spec, comps, idx)
    elif b == "pb_fem":
        res, thr, extra = _check_fem(spec, comps, idx)
    elif b == "pnp":
        res, thr, extra = _check_pnp(spec, comps, idx)
    elif b == "burgers":
        res, thr, extra = _check_burgers(spec, comps, idx)
    elif b == "ns":
        res, thr, extra = _check_ns(spec, comps, idx)
    elif b == "darcy_smooth":
        res, thr, extra = _check_darcy(spec, comps, idx)
    else:
        raise ContractError(f"no audit for {b!r}")
    failing = [i for i, r in res.items() if not r <= thr]
    report = {"benchmark": b, "checked": idx, "max_residual": max(res.values()),
              "threshold": thr, "passed": not failing}
    report.update(extra)
    if "harmonicity_ratio" in extra and not 3.5 <= extra["harmonicity_ratio"] <= 4.5:
        failing = failing or list(idx)
        report["passed"] = False
    if failing:
        raise VerificationError(f"{b}: residual above {thr:g} for samples {failing}", indices=failing)
    return report
