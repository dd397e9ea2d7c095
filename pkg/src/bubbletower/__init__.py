"""Numerical laboratory for ancient two-bubble solutions of the cylindrical Yamabe flow."""

from .profiles import (
    Field,
    Grid,
    ModelParams,
    ansatz_z,
    ansatz_zbar,
    assemble_u,
    bubble,
    bubble_deriv,
    cylindrical_constants,
    cylindrical_rescaling,
    king_profile,
    sphere_solution,
)
from .numerics import make_grid, quad
from .spectral import build_l0, eigenpairs, project_out
from .flow import SolverControls, Trajectory, evolve, fit_ansatz, solve_linear_ancient
from .params import construct_ancient, xi0

__version__ = "0.1.0"
