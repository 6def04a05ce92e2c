import numpy as np
import pytest

from lnfno.errors import BlowUpError, ContractError, MeshError
from lnfno.solvers import (Grid, HomotopyConfig, assemble_laplacian, darcy_solve, discrete_laplacian,
                           etdrk4_burgers, gummel_pnp, ns_rollout, pb_residual, pnp_residuals,
                           solve_pb_fem, solve_pb_grid, star_mesh, unit_square_mesh)
from lnfno.solvers.fem import fem_residual, format_mesh, parse_mesh
from lnfno.solvers.ns import enstrophy
from lnfno.solvers.pnp import bernoulli


def manufactured_error(n, k=1.0):
    grid = Grid(2, n)
    X, Y = np.moveaxis(grid.coords(), -1, 0)
    exact = np.sin(np.pi * X) * np.sin(np.pi * Y)
    f = 2 * np.pi ** 2 * exact + k * np.sinh(exact)
    u = solve_pb_grid(grid, k, f, np.zeros(grid.n_boundary))
    return float(np.max(np.abs(u - exact)))


def test_pb_grid_second_order():
    ratio = manufactured_error(17) / manufactured_error(33)
    assert 3.5 <= ratio <= 4.5


def test_pb_grid_residual_and_newton_trace():
    grid = Grid(2, 17)
    t = np.linspace(0, 2 * np.pi, grid.n_boundary, endpoint=False)
    g = 2.0 * np.sin(t)
    u, trace = solve_pb_grid(grid, 1.0, None, g, HomotopyConfig(), return_trace=True)
    assert pb_residual(grid, u, 1.0) < 1e-6
    np.testing.assert_array_equal(u.ravel()[grid.boundary], g)
    for merit in trace.merit:
        assert all(b <= a for a, b in zip(merit, merit[1:]))
    assert len(trace.merit) == 8


def test_pb_grid_3d_residual():
    grid = Grid(3, 9)
    g = grid.boundary_coords() @ np.array([0.5, -1.0, 0.8])
    u = solve_pb_grid(grid, 1.0, None, g)
    assert pb_residual(grid, u, 1.0) < 1e-6


def test_laplacian_assembly_matches_stencil():
    grid = Grid(2, 7)
    A, B = assemble_laplacian(grid)
    u = np.random.default_rng(0).standard_normal(grid.shape)
    lhs = A.matvec(u.ravel()[grid.interior]) - B.matvec(u.ravel()[grid.boundary])
    np.testing.assert_allclose(lhs, -discrete_laplacian(u, grid.h).ravel(), atol=1e-9)


def test_pb_rejects_bad_trace():
    with pytest.raises(ContractError):
        solve_pb_grid(Grid(2, 9), 1.0, None, np.zeros(5))


def fem_harmonic_error(n):
    mesh = unit_square_mesh(n)
    exact = np.exp(mesh.nodes[:, 0]) * np.sin(mesh.nodes[:, 1])
    u = solve_pb_fem(mesh, 0.0, exact[mesh.boundary_nodes])
    return float(np.max(np.abs(u - exact)))


def test_fem_second_order_on_harmonic_function():
    ratio = fem_harmonic_error(9) / fem_harmonic_error(17)
    assert 3.5 <= ratio <= 4.5


def test_fem_reproduces_linear_functions_exactly():
    mesh = star_mesh(4, 20)
    exact = 1 + 2 * mesh.nodes[:, 0] - mesh.nodes[:, 1]
    u = solve_pb_fem(mesh, 0.0, exact[mesh.boundary_nodes])
    assert np.max(np.abs(u - exact)) < 1e-9


def test_fem_nonlinear_residual():
    mesh = star_mesh(5, 24)
    g = 2.0 * np.cos(3 * np.arctan2(*mesh.nodes[mesh.boundary_nodes].T[::-1]))
    u = solve_pb_fem(mesh, 1.0, g)
    assert fem_residual(mesh, u, 1.0) < 1e-6


def test_mesh_text_round_trip_and_validation():
    mesh = star_mesh(3, 12)
    again = parse_mesh(format_mesh(mesh))
    np.testing.assert_array_equal(again.nodes, mesh.nodes)
    np.testing.assert_array_equal(again.triangles, mesh.triangles)
    bad = format_mesh(mesh).replace("\n0 1 2\n", "\n0 1 999\n", 1)
    if bad != format_mesh(mesh):
        with pytest.raises(MeshError):
            parse_mesh(bad)


def test_burgers_conserves_mean_and_matches_heat_limit():
    n = 256
    x = 2 * np.pi * np.arange(n) / n
    u0 = 0.3 + np.sin(x) + 0.5 * np.cos(2 * x)
    traj = etdrk4_burgers(u0, 0.01, 1e-3, 0.5, n_records=10)
    assert np.max(np.abs(traj.mean(axis=1) - u0.mean())) < 1e-10
    heat = etdrk4_burgers(np.sin(3 * x), 0.01, 1e-3, 0.1, n_records=1, nonlinear=False)[0]
    np.testing.assert_allclose(heat, np.exp(-0.01 * 9 * 0.1) * np.sin(3 * x), atol=1e-12)


def test_burgers_step_count_contract():
    with pytest.raises(ContractError):
        etdrk4_burgers(np.zeros(16), 0.01, 0.25, 1.0, n_records=3)


def test_ns_unforced_enstrophy_decays():
    n = 32
    rng = np.random.default_rng(0)
    w0 = rng.standard_normal((n, n))
    w0 -= w0.mean()
    snaps = ns_rollout(w0, nu=1e-3, dt=1e-3, T=0.1, record_every=0.01, forcing=None)
    ens = [enstrophy(w0)] + [enstrophy(s) for s in snaps]
    assert all(b <= a + 1e-12 for a, b in zip(ens, ens[1:]))
    assert np.max(np.abs(snaps.mean(axis=(1, 2)))) < 1e-12


def test_ns_blowup_is_reported():
    with pytest.raises(BlowUpError):
        ns_rollout(np.full((8, 8), np.nan), T=1e-3, dt=1e-4, record_every=1e-3)


def test_darcy_constant_coefficient_series():
    u = darcy_solve(np.ones((65, 65)))
    # series for -Lap u = 1 on the unit square, evaluated at the center
    s = 0.0
    for i in range(1, 80, 2):
        for j in range(1, 80, 2):
            s += 16 / (np.pi ** 4 * i * j * (i * i + j * j)) * np.sin(i * np.pi / 2) * np.sin(j * np.pi / 2)
    assert abs(u[32, 32] - s) < 1e-4
    assert np.all(u >= 0)


def test_bernoulli_function():
    np.testing.assert_allclose(bernoulli([0.0, 1e-10, 1.0]), [1.0, 1.0, 1 / (np.e - 1)], rtol=1e-9)
    np.testing.assert_allclose(bernoulli(2.0) - bernoulli(-2.0), -2.0, rtol=1e-12)


def test_pnp_neutral_constant_state():
    n = 17
    nb = 4 * (n - 1)
    phi, cp, cm = gummel_pnp(np.zeros(nb), np.full(nb, 0.7), np.full(nb, 0.7), n=n)
    np.testing.assert_allclose(phi, 0.0, atol=1e-12)
    np.testing.assert_allclose(cp, 0.7, atol=1e-12)
    np.testing.assert_allclose(cm, 0.7, atol=1e-12)


def test_pnp_random_draw_converges():
    n = 33
    nb = 4 * (n - 1)
    t = 2 * np.pi * np.arange(nb) / nb
    phi, cp, cm, info = gummel_pnp(np.sin(t) + 0.5 * np.cos(3 * t), 1.0 + 0.5 * np.cos(t),
                                   1.0 + 0.4 * np.sin(2 * t), n=n, return_info=True)
    assert max(pnp_residuals(phi, cp, cm)) < 1e-6
    assert min(cp.min(), cm.min()) > 0
    assert info["sweeps"] < 50


def test_pnp_rejects_nonpositive_concentration():
    nb = 4 * 16
    with pytest.raises(ContractError):
        gummel_pnp(np.zeros(nb), np.zeros(nb), np.ones(nb), n=17)
