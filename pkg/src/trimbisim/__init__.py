"""Trimmed-input approximate bisimulation for linear control systems."""
from .errors import (
    AlignmentError,
    ConfigError,
    ConstructionError,
    CoverageError,
    DimensionError,
    DomainError,
    NumericalFailure,
    SynthesisError,
    TrimBisimError,
)
from .system import InputGrid, LinearSystem, PiecewiseConstantInput, reach, simulate_supervisory
from .trimming import OpenBox, contains, trim_box

__version__ = "0.1.0"
