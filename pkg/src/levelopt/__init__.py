"""P1 finite elements for level-function shape optimization with a penalized obstacle state."""

from .mesh import Mesh, MeshError, generate_structured, load_mesh, locate_point
from .regfun import RegParams
from .state import ProblemData, StateField, solve_state
from .sensitivity import ObservationSpec, grad_cost, select_I0
from .optimize import DescentConfig, descend

__all__ = [
    "Mesh", "MeshError", "generate_structured", "load_mesh", "locate_point",
    "RegParams", "ProblemData", "StateField", "solve_state",
    "ObservationSpec", "grad_cost", "select_I0", "DescentConfig", "descend",
]
