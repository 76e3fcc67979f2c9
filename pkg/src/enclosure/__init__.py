"""Time-domain enclosure method on a 3-D cavity.

A single time-reversed Neumann experiment on the boundary of Omega, its
Laplace-domain indicator I(tau) and the recovery of
R_D(p) = sup_{x in D} |x - p| from the decay rate of I.
"""

__version__ = "0.1.0"

from .analytic_waves import SourcePulse
from .extraction import ExtractionResult, Verdict, WindowPolicy, fit_slope, qualitative_criterion, validate_admissibility
from .forward_solver import BoundaryTrace, build_grid, solve, solve_with_volume_output
from .geometry import BallSpec, BoxSpec, UnionSpec, sup_radius, surface_quadrature
from .indicator import IndicatorSeries, TauGrid, compute_decomposition, compute_indicator
from .reference_field import TimeReversedNeumann

__all__ = [
    "BallSpec",
    "BoundaryTrace",
    "BoxSpec",
    "ExtractionResult",
    "IndicatorSeries",
    "SourcePulse",
    "TauGrid",
    "TimeReversedNeumann",
    "UnionSpec",
    "Verdict",
    "WindowPolicy",
    "build_grid",
    "compute_decomposition",
    "compute_indicator",
    "fit_slope",
    "qualitative_criterion",
    "solve",
    "solve_with_volume_output",
    "sup_radius",
    "surface_quadrature",
    "validate_admissibility",
]
