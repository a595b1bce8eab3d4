"""Exception types shared across the toolkit."""

from typing import Any, Optional


class PbsmcError(RuntimeError):
    """Base class for every error raised by the toolkit."""


class ModelInvalidError(PbsmcError):
    """The mechanical model violates one of its structural requirements."""


class FactorizationError(ModelInvalidError):
    """Cholesky factorization of the inverse inertia failed."""

    def __init__(self, message: str, eigenvalue: Optional[float] = None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class MapInvalidError(PbsmcError):
    """A sliding-map Jacobian is singular (or the map has the wrong kind)."""


class AssumptionViolatedError(PbsmcError):
    """A sampled certification found a point where an assumption fails."""

    def __init__(self, message: str, witness: Any = None, value: Optional[float] = None):
        super().__init__(message)
        self.witness = witness
        self.value = value


class TrajectoryError(PbsmcError):
    """The desired trajectory cannot be evaluated (e.g. unreachable target)."""


class DivergenceError(PbsmcError):
    def __init__(self, message: str, last_valid_time: float):
        super().__init__(message)
        self.last_valid_time = last_valid_time


class ParameterRangeError(PbsmcError, ValueError):
    """A constant is outside its admissible range."""


class ConfigError(PbsmcError, ValueError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        parts = []
        if key:
            parts.append(f"key: {key}")
        if line is not None:
            parts.append(f"line {line}")
        location = f" [{', '.join(parts)}]" if parts else ""
        super().__init__(f"{message}{location}")
        self.message = message
        self.key = key
        self.line = line


def exit_code_for(error: BaseException) -> int:
    """CLI exit status: 2 config, 3 certification, 4 divergence, 1 anything else."""
    if isinstance(error, ConfigError):
        return 2
    if isinstance(error, AssumptionViolatedError):
        return 3
    if isinstance(error, DivergenceError):
        return 4
    return 1
