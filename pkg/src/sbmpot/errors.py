"""Exception types shared across the package."""


class SbmError(Exception):
    """Base class for all package errors."""


class EmptyGrid(SbmError, ValueError):
    pass


class DimensionTooSmall(SbmError, ValueError):
    pass


class RecurrentModel(SbmError, ValueError):
    pass


class QuadratureNonConvergent(SbmError, RuntimeError):
    pass


class NotFound(SbmError, RuntimeError):
    pass


class GeometryViolation(SbmError, ValueError):
    pass


class CoincidentPoints(SbmError, ValueError):
    pass


class DomainSyntaxError(SbmError, ValueError):
    def __init__(self, message, text="", pos=0):
        self.text = text
        self.pos = pos
        super().__init__(f"{message} at position {pos}: {text!r}")


class DegenerateDomain(SbmError, ValueError):
    pass


class SamplingStalled(SbmError, RuntimeError):
    pass


class MaxStepsExceeded(SbmError, RuntimeError):
    pass


class StepBudgetExceeded(MaxStepsExceeded):
    pass


class TiltingRejectionStalled(SbmError, RuntimeError):
    pass


class GridTooCoarse(SbmError, ValueError):
    pass


class SupportViolation(SbmError, ValueError):
    pass


class InvalidBoundaryPoint(SbmError, ValueError):
    pass


class NonConvergentRatio(SbmError, RuntimeError):
    pass


class InaccessibleSupport(SbmError, ValueError):
    pass


class UnsupportedModel(SbmError, NotImplementedError):
    pass


class ConfigError(SbmError, ValueError):
    pass
