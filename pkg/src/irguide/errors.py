"""Exception types raised across the package."""


class ShapeMismatch(ValueError):
    """Operands disagree on grid dimensions."""


class InvalidRange(ValueError):
    pass


class StepOutOfRange(ValueError):
    pass


class DegenerateAlpha(ValueError):
    pass


class DegenerateStep(ValueError):
    pass


class NonRealInverse(ValueError):
    pass


class NegativeRadicand(ValueError):
    pass


class MissingCondition(ValueError):
    pass


class IncompatibleShape(ValueError):
    pass


class IndivisibleDimensions(ValueError):
    pass


class Divergence(RuntimeError):
    """Training loss became non-finite."""


class NonFiniteState(RuntimeError):
    """Sampler state became non-finite at a given step."""

    def __init__(self, step, message="non-finite state"):
        super().__init__(f"{message} at step t={step}")
        self.step = step


class ImageFormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass
