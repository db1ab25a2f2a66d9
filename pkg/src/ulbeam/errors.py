"""Exception hierarchy shared by every module."""


class UlbeamError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(UlbeamError, ValueError):
    pass


class SingularMatrix(UlbeamError, ArithmeticError):
    pass


class RankDeficient(SingularMatrix):
    pass


class NotScalar(UlbeamError, ValueError):
    pass


class GeometryError(UlbeamError):
    pass


class DivisionByZero(UlbeamError, ZeroDivisionError):
    pass


class DegenerateTraining(UlbeamError, ValueError):
    pass


class NoConvergence(UlbeamError, RuntimeError):
    pass


class NonMonotone(UlbeamError, RuntimeError):
    """Objective went the wrong way; indicates an implementation bug."""


class MissingLabels(UlbeamError, ValueError):
    pass


class SolverFailure(UlbeamError, RuntimeError):
    """Wraps a labeler failure with the index of the offending sample."""

    def __init__(self, index, cause):
        super().__init__(f"solver failed on sample {index}: {cause}")
        self.index = index
        self.cause = cause


class ConfigError(UlbeamError, ValueError):
    """Invalid or inconsistent scenario/experiment configuration."""


class DatasetError(UlbeamError, ValueError):
    """Dataset on disk is malformed or does not match its manifest."""


class MissingCheckpoint(UlbeamError, FileNotFoundError):
    """A learned scheme was requested but its trained model is not on disk."""
