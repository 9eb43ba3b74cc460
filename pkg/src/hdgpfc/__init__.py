"""HDG/EDG solver for the sixth-order phase field crystal equation."""
from .mesh import CartesianMesh, build_cartesian_mesh
from .fembasis import build_ref_element, build_dofmap, SpaceKind
from .assembly import (ConstantMobility, DegenerateMobility, Discretization, PfcParams, State)
from .stepper import NewtonConfig, advance, newton_solve, project_initial, run_to, l2_error

__all__ = [
    "CartesianMesh", "build_cartesian_mesh", "build_ref_element", "build_dofmap", "SpaceKind",
    "ConstantMobility", "DegenerateMobility", "Discretization", "PfcParams", "State",
    "NewtonConfig", "advance", "newton_solve", "project_initial", "run_to", "l2_error",
]
