"""Optimal potentials for ``min int g u`` with ``-lap u + V u = f`` under ``int Psi(V) <= m``."""

__version__ = "0.1.0"

from .fem import Mesh, SolverError, build_structured_mesh
from .optimize import OptimizerConfig, run
from .problems import PsiFamily, ProblemSpec, builtin_problem

__all__ = [
    "Mesh",
    "SolverError",
    "build_structured_mesh",
    "OptimizerConfig",
    "run",
    "PsiFamily",
    "ProblemSpec",
    "builtin_problem",
]
