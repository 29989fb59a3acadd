"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`BayesFCError`
so the CLI can map failures to exit codes without catching unrelated bugs.
"""


class BayesFCError(Exception):
    """Base class for package errors."""


class DomainError(BayesFCError, ValueError):
    """A parameter lies outside the domain where the operation is defined."""


class DataError(BayesFCError, ValueError):
    """Input data are malformed, non-finite or too small."""


class InvalidInput(BayesFCError, ValueError):
    """A matrix argument fails a structural check (shape, symmetry)."""


class InvalidCovariance(InvalidInput):
    """A covariance matrix has a non-positive diagonal or is not positive definite."""


class NotPositiveDefinite(InvalidCovariance):
    """Cholesky factorisation failed."""


class DegenerateSpectrum(DomainError):
    """Eigenvalues tie, so the SIW_1 kernel is undefined."""


class MomentUndefined(DomainError):
    """Degrees of freedom are too small for the requested moment formula."""


class CalibrationRequired(BayesFCError, LookupError):
    """No calibration table is available for the requested dimension or nu."""


class CalibrationError(BayesFCError, RuntimeError):
    """A calibration fit failed."""


class UnreachableMean(DomainError):
    """The requested prior correlation mean cannot be produced by SIW_1."""


class UnreachableVariance(DomainError):
    """The requested prior correlation variance cannot be produced by SIW_1."""


class RescaleRequired(DataError):
    """Sample variances fall below what SIW_1 can reach; rescale the data."""


class ParseError(DataError):
    """A CSV or config file could not be parsed."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(BayesFCError, ValueError):
    """A run configuration is missing keys or has conflicting settings."""
