"""Coupled unsaturated flow and reactive transport with dynamic capillarity.

A linear finite-element engine (bilinear quadrilaterals by default, linear
triangles optionally) for the three-field system of Richards flow, a
dynamic capillary pressure relation, and convective-diffusive-reactive
solute transport, together with a family of nonlinear solver strategies:
monolithic or splitting coupling, Newton or L-scheme linearization, and a
mixed controller that warms Newton up with a few L-scheme sweeps.
"""

from .constitutive import ConstitutiveSet, VanGenuchtenParams
from .driver import IterationRecord, RunReport, Simulation, TimeGrid, run_simulation
from .kernels import BACKEND as KERNEL_BACKEND
from .mesh import BoundaryTags, Domain2D, GridMesh, build_grid, classify_boundary
from .problems import Problem, recharge_problem
from .schemes import STRATEGIES, IterationEngine, SchemeConfig, StateTriple

__version__ = "0.1.0"

__all__ = [
    "BoundaryTags",
    "ConstitutiveSet",
    "Domain2D",
    "GridMesh",
    "IterationEngine",
    "IterationRecord",
    "KERNEL_BACKEND",
    "Problem",
    "RunReport",
    "STRATEGIES",
    "SchemeConfig",
    "Simulation",
    "StateTriple",
    "TimeGrid",
    "VanGenuchtenParams",
    "build_grid",
    "classify_boundary",
    "recharge_problem",
    "run_simulation",
]
