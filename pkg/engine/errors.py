"""Error hierarchy shared by every engine module."""

from typing import Optional


class UVMakeupError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 2


class ContractError(UVMakeupError, ValueError):
    """A shape, dimension or range precondition was violated."""


class SingularSystemError(UVMakeupError):
    """A least-squares system has no unique solution."""


class ExtractionError(UVMakeupError):
    """A UV texture could not be extracted from an image."""


class EmptyRegionError(UVMakeupError):
    """A histogram region holds no pixels."""


class DegenerateRenderError(UVMakeupError):
    """Every region mask of a render is empty."""


class ConfigError(UVMakeupError):
    """A config file holds an unknown key or an unparseable value."""


class ContainerError(UVMakeupError):
    """A UVT1 container is malformed or misses a tensor."""

    exit_code = 3


class TrainingError(UVMakeupError):
    """Training hit a non-finite loss."""

    exit_code = 4

    def __init__(self, message: str, dump_path: Optional[str] = None):
        super().__init__(message)
        self.dump_path = dump_path


def require(condition: bool, message: str):
    """Raise ContractError with message unless condition holds."""
    if not condition:
        raise ContractError(message)
