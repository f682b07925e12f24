"""Exception types shared across the package."""


class RelFermiError(Exception):
    """Base class for all package errors."""


class GridMismatch(RelFermiError, ValueError):
    """Two fields (or a field and a multiplier) live on different grids."""


class BandLimitViolation(RelFermiError, ValueError):
    """A field carries spectral weight outside the band a dilation can keep."""


class NearRankDeficient(RelFermiError):
    """Gram matrix smallest eigenvalue fell below the rank threshold."""

    def __init__(self, min_eigenvalue, threshold=1e-12):
        self.min_eigenvalue = float(min_eigenvalue)
        self.threshold = threshold
        super().__init__(
            f"Gram matrix is near rank deficient: min eigenvalue "
            f"{self.min_eigenvalue:.3e} <= {threshold:.0e}"
        )


class NotOrthonormal(RelFermiError, ValueError):
    """Orbital set violates the orthonormality constraint."""


class DegenerateField(RelFermiError, ValueError):
    """Massless kinetic energy vanishes, so scale-free quotients are undefined."""


class MaxItersExceeded(RelFermiError):
    """Iteration budget exhausted; ``report`` holds the last state."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class DivergingObjective(RelFermiError):
    """Objective dropped below the collapse guard."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NotConverged(RelFermiError):
    """An iterative eigen/SCF solve stopped before meeting its tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class OscillationDetected(NotConverged):
    """SCF residual keeps growing even after mixing was reduced."""


class InsufficientRecords(RelFermiError, ValueError):
    """Too few sweep records for a scaling fit."""


class InvariantViolation(RelFermiError):
    """A result broke a property that holds for every valid state (a bug or a solver failure)."""
