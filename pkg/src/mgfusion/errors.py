"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(shapes)
        joined = " vs ".join(str(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


class DataError(ValueError):
    """Malformed dataset files or inconsistent dataset state."""


class OptimizerError(RuntimeError):
    """Optimizer received unusable input (e.g. a non-finite gradient)."""

    def __init__(self, message, parameter=None):
        self.parameter = parameter
        super().__init__(message)


class TrainingAbort(RuntimeError):
    """Training hit a non-finite loss; carries a diagnostic snapshot."""

    def __init__(self, message, snapshot=None):
        self.snapshot = snapshot or {}
        super().__init__(message)
