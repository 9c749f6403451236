r"""Define the exceptions raised by ``covisac``."""

from __future__ import annotations

__all__ = [
    "BuildError",
    "CovisacError",
    "DegenerateDetectionError",
    "InfeasibleError",
    "InputError",
    "InternalError",
    "ScenarioError",
    "SingularityError",
    "SolverError",
]

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Sequence


class CovisacError(Exception):
    r"""Define the base class of all the ``covisac`` exceptions."""


class InputError(CovisacError, ValueError):
    r"""Raised when an argument value is outside its domain."""


class ScenarioError(InputError):
    r"""Raised when a scenario cannot be parsed or fails validation.

    Args:
        message: The error message.
        line: The line of the scenario file where parsing failed,
            if known.
    """

    def __init__(self, message: str, line: int | None = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SingularityError(CovisacError, ArithmeticError):
    r"""Raised when two nodes of a link are (numerically) coincident."""


class BuildError(CovisacError):
    r"""Raised when a conic program cannot be assembled."""


class InfeasibleError(CovisacError):
    r"""Raised when a scenario, a slot, or a trajectory is infeasible.

    Args:
        message: The error message.
        families: The constraint families that could not be
            satisfied.
        slot: The slot index, if the failure is slot-specific.

    Example usage:

    ```pycon
    >>> from covisac.errors import InfeasibleError
    >>> error = InfeasibleError("no feasible start", families=["edge_bits"], slot=3)
    >>> error.families
    ('edge_bits',)
    >>> error.slot
    3

    ```
    """

    def __init__(
        self, message: str, families: Sequence[str] = (), slot: int | None = None
    ) -> None:
        super().__init__(message)
        self.families = tuple(families)
        self.slot = slot


class SolverError(CovisacError):
    r"""Raised when the conic backend fails or returns an unusable
    solution."""


class InternalError(CovisacError, RuntimeError):
    r"""Raised when a solver breaks one of its own contracts."""


class DegenerateDetectionError(CovisacError):
    r"""Raised when the warden cannot tell the hypotheses apart
    (``mu`` at or below the detectability tolerance).

    Callers treat the detection error probability as 1 in that case.
    """
