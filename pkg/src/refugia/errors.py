"""Exception hierarchy shared by all refugia modules."""


class RefugiaError(Exception):
    """Base class for every error raised by refugia."""


# geometry
class GeometryError(RefugiaError, ValueError):
    pass


class RefugeTouchesBoundary(GeometryError):
    pass


class DisconnectedComplement(GeometryError):
    pass


class EmptyRefuge(GeometryError):
    pass


class RegionMismatch(RefugiaError, ValueError):
    pass


# operators / linear algebra
class NonellipticCoefficient(RefugiaError, ValueError):
    pass


class SolveFailure(RefugiaError, RuntimeError):
    pass


class NoConvergence(RefugiaError, RuntimeError):
    pass


# thresholds
class OutOfRegime(RefugiaError, ValueError):
    pass


class NoSignChange(RefugiaError, RuntimeError):
    pass


# steady states
class BadParameter(RefugiaError, ValueError):
    pass


class DegenerateDenominator(RefugiaError, FloatingPointError):
    pass


class MaxIterations(RefugiaError, RuntimeError):
    pass


# continuation
class CorrectionFailed(RefugiaError, RuntimeError):
    pass


class StallAtFold(RefugiaError, RuntimeError):
    pass


# evolution
class BlowupDetected(RefugiaError, RuntimeError):
    pass


class NonfiniteState(RefugiaError, FloatingPointError):
    pass


# asymptotics
class SolutionNotFound(RefugiaError, RuntimeError):
    pass


# configuration
class ConfigError(RefugiaError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError, ValueError):
    pass
