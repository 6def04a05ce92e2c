"""Reference PDE solvers producing ground-truth fields."""

from .burgers import etdrk4_burgers
from .darcy import darcy_solve
from .fem import Mesh, P1Space, read_mesh, solve_pb_fem, star_mesh, unit_square_mesh, write_mesh
from .grid import Grid, assemble_laplacian, discrete_laplacian
from .ns import ns_rollout
from .pb import HomotopyConfig, pb_residual, solve_pb_grid
from .pnp import gummel_pnp, pnp_residuals

__all__ = [
    "Grid", "HomotopyConfig", "Mesh", "P1Space", "assemble_laplacian", "darcy_solve",
    "discrete_laplacian", "etdrk4_burgers", "gummel_pnp", "ns_rollout", "pb_residual",
    "pnp_residuals", "read_mesh", "solve_pb_fem", "solve_pb_grid", "star_mesh",
    "unit_square_mesh", "write_mesh",
]
