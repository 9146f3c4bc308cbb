"""Exception hierarchy shared by the workbench and mapped to CLI exit codes."""

from __future__ import annotations

from src.constants import (
    EXIT_CONFIG_ERROR,
    EXIT_DATA_ERROR,
    EXIT_NUMERICAL_ABORT,
)


class CanetError(Exception):
    """Base class for all workbench errors."""

    exit_code = 1


class ConfigError(CanetError, ValueError):
    """Invalid configuration, grid, count or schema."""

    exit_code = EXIT_CONFIG_ERROR


class ShapeError(ConfigError):
    """Tensor or matrix shapes that do not agree with the grid."""


class DataError(CanetError):
    """Dataset files that are missing, unreadable, unwritable or inconsistent."""

    exit_code = EXIT_DATA_ERROR


class NumericalError(CanetError, ArithmeticError):
    """A numerical precondition failed (non-finite input, PSD violation, ...)."""

    exit_code = EXIT_NUMERICAL_ABORT


class NumericalAbort(NumericalError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, batch_seed: int | None = None) -> None:
        super().__init__(message)
        self.batch_seed = batch_seed
