"""Exception taxonomy shared by all splatmetrics modules.

The CLI maps these onto process exit codes; library callers can catch the
base classes.
"""


class SplatMetricsError(Exception):
    """Base class for every error raised by this package."""


class FormatError(SplatMetricsError):
    """Input bytes do not match the declared file layout (bad magic,
    missing property, truncated payload)."""


class DataError(SplatMetricsError):
    """The file is structurally valid but carries values that violate an
    invariant (non-finite fields, zero-norm quaternion, negative depth)."""


class ContractError(SplatMetricsError):
    """A precondition of an operation was violated by the caller."""


class RangeError(ContractError):
    """A value sits exactly on a singular point of a transform
    (e.g. logit of 0 or 1)."""


class NumericError(SplatMetricsError):
    """A numerical operation cannot proceed (singular or ill-conditioned
    matrix, unexpected negative round-off)."""


class ConvergenceError(NumericError):
    """An iterative solver stopped at its iteration cap while still far
    from feasibility. Carries the partial result in ``plan``."""

    def __init__(self, message, plan=None):
        super().__init__(message)
        self.plan = plan
