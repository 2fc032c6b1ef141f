"""Exception hierarchy.

Every error raised by the package derives from :class:`SqrtImpactError` and
belongs to one of two families: :class:`DataError` for bad or insufficient
input data, :class:`FitError` for estimators that could not produce a fit.
The command line maps the two families onto distinct exit codes.
"""


class SqrtImpactError(Exception):
    """Base class for all package errors."""


class DataError(SqrtImpactError):
    pass


class FitError(SqrtImpactError):
    pass


class ConfigError(SqrtImpactError, ValueError):
    pass


# -- tape --------------------------------------------------------------------

class TapeError(DataError):
    """A tape row violates the format; ``line`` is 1-based (header is line 1)."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MalformedRow(TapeError):
    pass


class NonMonotoneTimestamp(TapeError):
    pass


class UnknownEventKind(TapeError):
    pass


class NoQuotes(DataError):
    pass


class OutOfSession(DataError, ValueError):
    pass


# -- estimators --------------------------------------------------------------

class InsufficientData(FitError):
    pass


class NonPositiveMean(InsufficientData):
    pass


class InsufficientRanks(FitError):
    pass


class TooFewTailSamples(FitError):
    pass


class InsufficientSequences(FitError):
    pass


class FitUnavailable(FitError):
    pass


class DegenerateDuration(DataError):
    pass


class TruncatedWindow(DataError):
    pass


class UnsupportedBeta(SqrtImpactError, ValueError):
    pass


class TooFewOrders(DataError):
    pass


class BinMismatch(DataError, ValueError):
    pass
