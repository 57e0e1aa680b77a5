"""Grid solver and certificates for the first-order mean field games planning problem on the torus."""

__version__ = "0.1.0"

from .grid import DualField, GridSpec, StaggeredField  # noqa: E402
from .model import (  # noqa: E402
    AssumptionError,
    CouplingSpec,
    DensityPreset,
    Exponents,
    HamiltonianSpec,
    ProblemSpec,
    SpatialField,
    check_assumptions,
    exponents,
)
from .solver import SolutionBundle, SolverConfig, eval_A, eval_B, recover_alpha, solve  # noqa: E402

__all__ = [
    "AssumptionError",
    "CouplingSpec",
    "DensityPreset",
    "DualField",
    "Exponents",
    "GridSpec",
    "HamiltonianSpec",
    "ProblemSpec",
    "SolutionBundle",
    "SolverConfig",
    "SpatialField",
    "StaggeredField",
    "check_assumptions",
    "eval_A",
    "eval_B",
    "exponents",
    "recover_alpha",
    "solve",
]
