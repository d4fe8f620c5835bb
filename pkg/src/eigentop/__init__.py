"""Two-phase first-eigenvalue optimization on triangulated 2-D domains.

Subpackages: geometry (domains and meshing), fem (P1 elements), eig
(generalized eigensolver), levelset (the optimization flow), criteria
(optimality checks), oned (exact 1-D oracle), cli (command line).
"""

from .eig import EigenSet, multiplicity_ratio, solve_smallest
from .fem import BoundaryCondition, all_dirichlet, all_neumann
from .geometry import BUILTIN_DOMAINS, DomainSpec, Mesh, build_mesh, read_mesh, write_mesh
from .levelset import OptState, PhaseConfig, optimize

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_DOMAINS", "BoundaryCondition", "DomainSpec", "EigenSet", "Mesh",
    "OptState", "PhaseConfig", "all_dirichlet", "all_neumann", "build_mesh",
    "multiplicity_ratio", "optimize", "read_mesh", "solve_smallest",
    "write_mesh", "__version__",
]
