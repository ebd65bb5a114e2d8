"""Exception types shared across the package."""


class LapsimError(Exception):
    """Base class for all package errors."""


class ValidationError(LapsimError, ValueError):
    """Raised when a system description fails validation.

    ``issues`` holds ``(code, message)`` pairs, one per problem found, where
    ``code`` is one of ``NotATree``, ``IsolatedVertex``, ``NonPositiveRate``
    or ``Malformed``.
    """

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(f"{code}: {msg}" for code, msg in self.issues))

    @property
    def codes(self):
        return {code for code, _ in self.issues}


class UnknownVertex(LapsimError, KeyError):
    pass


class AssumptionViolated(LapsimError):
    """A modelling assumption (subcritical load, positive equilibrium) fails."""

    def __init__(self, message, edges=(), pools=()):
        self.edges = list(edges)
        self.pools = list(pools)
        super().__init__(message)


class NumericalFailure(LapsimError):
    pass


class SingularSystem(NumericalFailure):
    pass


class SingularLyapunov(NumericalFailure):
    pass


class EigenFailure(NumericalFailure):
    pass


class RateOverflow(LapsimError):
    pass


class InvalidHorizon(LapsimError, ValueError):
    pass


class EmptyReport(LapsimError, ValueError):
    pass


class PartialReport(LapsimError):
    """Some sweep replicas failed; ``report`` holds the rows that completed."""

    def __init__(self, message, report=None, failures=()):
        self.report = report
        self.failures = list(failures)
        super().__init__(message)


class IoError(LapsimError, OSError):
    pass
