"""Continuum percolation clusters, lattice correctors and reflecting diffusions.

Submodules
----------
config      point configurations, boxes, seeded random streams, persistence
cluster     Boolean-model connectivity and union-of-balls geometry queries
lattice     delta-approximating site lattice, crossing events, geometry scans
field       stationary coefficient fields
corrector   discrete corrector, harmonic coordinates, effective matrix
diffusion   reflecting diffusion and lattice conductance walk
qip         diffusive scaling experiments
benchmarks  shipped geometries
cli         ``percqip`` command line
"""
from .errors import (
    DegenerateConfigurationError,
    DomainError,
    InvalidParameterError,
    NonConvergenceError,
    ParseError,
    PercqipError,
    SimulationFailureError,
    StepRejectedError,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateConfigurationError",
    "DomainError",
    "InvalidParameterError",
    "NonConvergenceError",
    "ParseError",
    "PercqipError",
    "SimulationFailureError",
    "StepRejectedError",
    "__version__",
]
