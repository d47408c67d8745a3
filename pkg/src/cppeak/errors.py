"""Exception hierarchy.

The CLI maps the three top-level families to exit codes: configuration
problems exit with 2, data problems with 3 and numerical failures with 4.
"""


class CPPeakError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CPPeakError, ValueError):
    pass


class UnknownJurisdictionError(ConfigurationError, LookupError):
    def __init__(self, jurisdiction_id, available):
        self.jurisdiction_id = jurisdiction_id
        self.available = sorted(available)
        super().__init__(
            f"unknown jurisdiction {jurisdiction_id!r}; available: {', '.join(self.available)}"
        )


class LayoutError(ConfigurationError):
    pass


class DataError(CPPeakError, ValueError):
    pass


class ParseError(DataError):
    pass


class ValidationError(DataError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class DuplicateKeyError(ValidationError):
    pass


class AlignmentError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class CoverageError(DataError):
    pass


class LookAheadError(DataError):
    """Data dated on or after the decision point was requested."""


class IneligibleDayError(DataError):
    pass


class NumericalError(CPPeakError, ArithmeticError):
    pass


class FitError(NumericalError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class DegenerateDistributionError(FitError):
    pass


class SingularityError(NumericalError):
    pass


class EngineCorruptionError(NumericalError):
    pass


class DomainError(CPPeakError, ValueError):
    pass
