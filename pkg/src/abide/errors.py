"""Exception hierarchy.

Validation errors (bad input data) and numerical errors (a fit or solve that
cannot produce a usable answer) are kept apart so the CLI can map them to
distinct exit codes.
"""


class AbideError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(AbideError, ValueError):
    """Input data violates a structural invariant.

    ``line`` is the 1-based line of the offending CSV row when the record came
    from a file.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingOutcome(ValidationError):
    pass


class PhantomOutcome(ValidationError):
    pass


class ArityMismatch(ValidationError):
    pass


class EmptyArm(ValidationError):
    pass


class NoRespondentsInArm(ValidationError):
    pass


class OutOfRangePropensity(ValidationError):
    pass


class EmptyVector(ValidationError):
    pass


class NumericalError(AbideError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy result."""


class Separation(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class Infeasible(NumericalError):
    pass


class SingularHessian(NumericalError):
    pass


class DiscriminatorFailure(NumericalError):
    pass


class DegenerateWeights(NumericalError):
    pass


class QuadratureNotConverged(NumericalError):
    pass


class DidNotConverge(RuntimeWarning):
    """Iteration cap reached; the returned object is flagged ``converged=False``."""


class EstimatorWarning(UserWarning):
    """Non-fatal condition worth surfacing next to an estimate."""
