class TenrecError(Exception):
    """Base class for every error raised by tenrec."""


class ArgumentError(TenrecError, ValueError):
    pass


class UsageError(TenrecError):
    pass


class DegenerateProblemError(TenrecError):
    """
    Raised when a subproblem has no unique minimizer, e.g. procrustes on a
    vanishing cross product. Callers decide which minimizer to keep.
    """


class NumericalFailure(TenrecError, ArithmeticError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class StateError(TenrecError, RuntimeError):
    pass


class TensorFormatError(TenrecError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
