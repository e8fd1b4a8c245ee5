"""Exception hierarchy shared by every package."""
from typing import Any, Optional


class RegistrationError(Exception):
    pass


class ShapeMismatchError(RegistrationError, ValueError):
    pass


class NonFiniteError(RegistrationError, ValueError):
    pass


class VolumeFormatError(RegistrationError):
    pass


class ConfigError(RegistrationError):
    pass


class CheckpointMismatchError(RegistrationError):
    pass


class NonFiniteLossError(RegistrationError):
    def __init__(self, message: str, dump_path: Optional[str] = None):
        super().__init__(message)
        self.dump_path = dump_path


class AblationError(RegistrationError):
    def __init__(self, message: str, partial_results: Any = None):
        super().__init__(message)
        self.partial_results = partial_results


def check_same_shape(a_shape, b_shape, what: str = "inputs"):
    if tuple(a_shape) != tuple(b_shape):
        raise ShapeMismatchError(f"{what} shape mismatch: {tuple(a_shape)} vs {tuple(b_shape)}")
