"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class DegenerateInput(ValueError):
    """A rescaling strategy cannot define a direction/scale for this tensor."""


class InvalidCheckpoint(ValueError):
    pass


class NumericFailure(ArithmeticError):
    """A kernel produced NaN/Inf. `path` names the offending parameter or tensor."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        if path is not None:
            message = f"{message} [{path}]"
        super().__init__(message)
