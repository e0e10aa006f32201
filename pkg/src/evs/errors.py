"""Exception hierarchy shared by all modules."""

from __future__ import annotations

from typing import Any


class EVSError(Exception):
    """Base class for every error raised by :mod:`evs`."""


class DomainError(EVSError, ValueError):
    """An input value lies outside the domain of an operation (e.g. NaN)."""


class ContractError(EVSError, ValueError):
    """A documented precondition of an operation was violated."""


class ConfigError(EVSError, ValueError):
    """Invalid grid, dictionary, system or run configuration."""


class StepError(EVSError, RuntimeError):
    """A time step could not be certified.

    The best iterate and its certificate are attached so callers can
    inspect (or persist) the partial result.
    """

    def __init__(self, message: str, *, state: Any = None,
                 certificate: Any = None, trajectory: Any = None) -> None:
        super().__init__(message)
        self.state = state
        self.certificate = certificate
        self.trajectory = trajectory
