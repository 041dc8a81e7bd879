"""Exception hierarchy.

Validation problems (bad input, bad configuration) derive from
:class:`ValidationError`; failures of a numerical procedure derive from
:class:`NumericalError`.  The CLI maps the two families to distinct exit codes.
"""


class FoliateError(Exception):
    pass


class ValidationError(FoliateError, ValueError):
    pass


class NumericalError(FoliateError, ArithmeticError):
    pass


# metric
class UnknownMetric(ValidationError):
    pass


class OutOfChart(ValidationError):
    pass


class OrderUnsupported(ValidationError):
    pass


class JetOrderTooLow(ValidationError):
    pass


class DegenerateMetric(NumericalError):
    pass


class DegenerateHessian(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


# normal chart
class LeftChart(NumericalError):
    pass


class IntegratorFailure(NumericalError):
    pass


class OutOfNormalNeighborhood(NumericalError):
    pass


# sphere
class LTooSmall(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class KernelComponent(NumericalError):
    pass


# surface / solver
class GraphDegenerate(NumericalError):
    pass


class SingularJacobian(NumericalError):
    pass


class OutOfRange(ValidationError):
    pass


class AreaOutOfRange(ValidationError):
    pass


class MonotonicityViolation(NumericalError):
    pass


# foliation
class InsufficientLeaves(ValidationError):
    pass


class LogMapFailure(NumericalError):
    pass


class BetaNotInvertible(NumericalError):
    pass


# cli
class ConfigError(ValidationError):
    pass


class IoError(ValidationError, OSError):
    pass
