"""Exception and warning types raised across the package."""


class LeorisError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(LeorisError, ValueError):
    pass


class MeanNotConverged(LeorisError, RuntimeError):
    pass


class CoincidentPoints(LeorisError, ValueError):
    """Two nodes are closer than the geometry can resolve (1e-6 m)."""


class IndexOutOfRange(LeorisError, IndexError):
    pass


class StepUnderflow(LeorisError, ArithmeticError):
    """A finite-difference step vanished against the parameter's magnitude."""


class SingularNoise(LeorisError, ValueError):
    pass


class NuisanceSingular(LeorisError, ArithmeticError):
    pass


class NoRisLinks(LeorisError, ValueError):
    pass


class DegenerateSpread(LeorisError, ValueError):
    pass


class NotPSD(LeorisError, ArithmeticError):
    pass


class InnovationSingular(LeorisError, ArithmeticError):
    pass


class LengthMismatch(LeorisError, ValueError):
    pass


class FilterStepError(LeorisError, RuntimeError):
    """A tracking step failed; ``step`` holds the zero-based step index."""

    def __init__(self, step, cause):
        super().__init__(f"filter failed at step {step}: {cause}")
        self.step = step
        self.cause = cause


class AngleNearPi(RuntimeWarning):
    """The SO(3) log map fell back to the eigenvector path (angle close to pi)."""
