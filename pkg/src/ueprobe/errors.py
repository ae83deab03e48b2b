"""Exception types shared across the package."""


class UEProbeError(Exception):
    """Base class for errors raised by this package."""


class NotPositiveDefinite(UEProbeError):
    """Cholesky factorization hit a non-positive pivot, even after jitter."""


class SingularMatrix(UEProbeError):
    """Triangular solve against a matrix with a zero diagonal entry."""


class NumericalError(UEProbeError):
    """A computed quantity violated a hard numerical bound."""


class DimensionMismatch(UEProbeError):
    """Operand shapes do not chain."""


class FormatError(UEProbeError):
    """Malformed binary file: bad magic, dimension mismatch, or truncation."""


class EmptyResult(UEProbeError):
    """A filter or sampler matched no data."""


class NoConvergence(UEProbeError):
    """Iterative fit exhausted its iteration budget.

    The last iterate is attached as ``state`` so callers can inspect it.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class Divergence(UEProbeError):
    """Training or sampling produced non-finite values or degenerate acceptance."""


class NonFinite(UEProbeError):
    """A log-density, gradient, or trajectory overflowed."""


class CheckFailure(UEProbeError):
    """A harness-level numerical assertion failed.

    ``detail`` carries the violating values; ``report`` carries the report
    built up to the point of failure, if any.
    """

    def __init__(self, message, detail=None, report=None):
        super().__init__(message)
        self.detail = detail
        self.report = report
