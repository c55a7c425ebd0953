"""Exception hierarchy.

Everything a user can cause through bad input derives from ``ValidationError``
so the command line can map it to exit code 1.
"""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class BoundsError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class FormatError(ValidationError):
    """A file on disk does not follow its expected layout."""


class DomainError(ValidationError):
    pass


class GenerationError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, iteration, loss):
        super().__init__(f"loss became non-finite ({loss}) at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss
