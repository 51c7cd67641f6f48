"""Exception and warning types raised by the link model."""


class InvariantError(ValueError):
    """A parameter container violates one of its invariants."""


class DomainError(ValueError):
    """An input lies outside the region where a formula is defined."""


class NoSignalError(DomainError):
    """A rate that appears in a denominator is zero (e.g. QBER with no clicks)."""


class NumericError(ArithmeticError):
    """NaN or overflow appeared during an evaluation."""


class ConvergenceError(RuntimeError):
    """The fixed-point iteration hit its iteration cap.

    Attributes
    ----------
    residual : float
        Largest relative change observed in the last iteration.
    iterations : int
        Number of iterations performed.
    best : object, optional
        Best-so-far result, when the caller can still use one.
    """

    def __init__(self, message, residual, iterations, best=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.best = best


class ParseError(ValueError):
    """Malformed configuration or data file.

    ``line`` (1-based) and ``field`` locate the problem when known.
    """

    def __init__(self, message, source=None, line=None, field=None):
        where = ":".join(str(x) for x in (source, line) if x is not None)
        if field is not None:
            where = f"{where} [{field}]" if where else f"[{field}]"
        super().__init__(f"{where}: {message}" if where else message)
        self.source = source
        self.line = line
        self.field = field


class ValidityWarning(UserWarning):
    """Inputs leave the domain in which the analytic model is accurate."""


class IdentifiabilityWarning(UserWarning):
    """A calibration dataset is unlikely to pin down every parameter."""
