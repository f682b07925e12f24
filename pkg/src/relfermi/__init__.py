"""Spectral variational solver for L2-critical pseudo-relativistic Fermi systems.

Ground states of ``tr((sqrt(-Lap+m^2) - m) gamma) - a int rho^{4/3}`` and
the scale-free quotient ``tr(sqrt(-Lap) gamma) / int rho^{4/3}`` over
orthonormal orbital frames on a periodic box.
"""

from .errors import (
    BandLimitViolation,
    DegenerateField,
    DivergingObjective,
    GridMismatch,
    InsufficientRecords,
    InvariantViolation,
    MaxItersExceeded,
    NearRankDeficient,
    NotConverged,
    NotOrthonormal,
    OscillationDetected,
    RelFermiError,
)
from .spectral import ComplexField, MultiplierSpectrum, SpectralGrid, make_grid
from .state import OrbitalSet, density, loewdin

__version__ = "0.1.0"

__all__ = [
    "BandLimitViolation",
    "ComplexField",
    "DegenerateField",
    "DivergingObjective",
    "GridMismatch",
    "InsufficientRecords",
    "InvariantViolation",
    "MaxItersExceeded",
    "MultiplierSpectrum",
    "NearRankDeficient",
    "NotConverged",
    "NotOrthonormal",
    "OrbitalSet",
    "OscillationDetected",
    "RelFermiError",
    "SpectralGrid",
    "density",
    "loewdin",
    "make_grid",
]
