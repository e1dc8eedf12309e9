"""Shared exception types."""


class GraspkitError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GraspkitError):
    """A configuration value or config file is invalid."""


class FormatError(GraspkitError):
    """An input file does not match its documented format."""


class GeometryError(GraspkitError):
    """Invalid grasp geometry input (non-finite angle, degenerate rectangle, ...)."""


class NumericError(GraspkitError):
    """Non-finite values where finite numbers are required."""


class TrainingDiverged(GraspkitError):
    """The training loss became non-finite."""


class FreezeViolation(GraspkitError):
    """A frozen weight array changed during training."""


class DegenerateObservationsError(GraspkitError):
    """Calibration observations do not span the full pose space."""

    def __init__(self, message: str, rank: int | None = None):
        super().__init__(message)
        self.rank = rank


class MappingDegenerateError(GraspkitError):
    """A fitted pose mapping produced a near-zero quaternion."""


class UnreachablePoseError(GraspkitError):
    """Inverse kinematics did not converge within its iteration budget."""

    def __init__(self, message: str, pos_residual: float, rot_residual: float):
        super().__init__(message)
        self.pos_residual = pos_residual
        self.rot_residual = rot_residual


class SafetyError(GraspkitError):
    """A planned motion would violate the table-top safety rules."""


class ExecutionAborted(GraspkitError):
    """Simulated execution stopped early; carries the partial log."""

    def __init__(self, message: str, log=None):
        super().__init__(message)
        self.log = log
