"""Numerical toolkit for weakly coupled Hamilton-Jacobi systems on the torus."""

from __future__ import annotations

from .coupling import CouplingField, check_monotone_coupling, is_irreducible, perron_left_null_vector
from .ergodic import solve_discounted, vanishing_discount
from .evolutive import solve_until
from .grid import DiscreteSystem, TorusGrid, VectorGridField
from .longtime import detect_convergence
from .model import ModelProblem, eikonal, quadratic, shifted_eikonal

__version__ = "0.1.0"

__all__ = [
    "CouplingField",
    "DiscreteSystem",
    "ModelProblem",
    "TorusGrid",
    "VectorGridField",
    "check_monotone_coupling",
    "detect_convergence",
    "eikonal",
    "is_irreducible",
    "perron_left_null_vector",
    "quadratic",
    "shifted_eikonal",
    "solve_discounted",
    "solve_until",
    "vanishing_discount",
]
