r"""Implement the conditions used to thin solver trace handlers."""

from __future__ import annotations

__all__ = ["BaseCondition", "PeriodicCondition"]

from abc import ABC, abstractmethod
from typing import Any


class BaseCondition(ABC):
    r"""Define the base class of a condition for
    ``ConditionalEventHandler``.

    A child class has to implement the following methods:

        - ``evaluate``
        - ``equal``

    Example usage:

    ```pycon
    >>> from covisac.events import PeriodicCondition
    >>> condition = PeriodicCondition(freq=2)
    >>> [condition.evaluate() for _ in range(5)]
    [True, False, True, False, True]

    ```
    """

    def __eq__(self, other: object) -> bool:
        return self.equal(other)

    @abstractmethod
    def equal(self, other: Any) -> bool:
        r"""Compare two conditions.

        Args:
            other: The other object to compare with.

        Returns:
            ``True`` if the two conditions are equal, otherwise
                ``False``.
        """

    @abstractmethod
    def evaluate(self) -> bool:
        r"""Evaluate the condition for the current trigger.

        Returns:
            ``True`` if the guarded handler should run.
        """


class PeriodicCondition(BaseCondition):
    r"""Implement a condition that holds every ``freq`` triggers.

    The first trigger always passes, so the first solver iteration is
    always reported.

    Args:
        freq: The period, in number of triggers.

    Raises:
        ValueError: if ``freq`` is not positive.

    Example usage:

    ```pycon
    >>> from covisac.events import PeriodicCondition
    >>> condition = PeriodicCondition(freq=3)
    >>> condition
    PeriodicCondition(freq=3, count=0)
    >>> [condition.evaluate() for _ in range(7)]
    [True, False, False, True, False, False, True]

    ```
    """

    def __init__(self, freq: int) -> None:
        if freq < 1:
            msg = f"freq has to be a positive integer but received {freq}"
            raise ValueError(msg)
        self._freq = int(freq)
        self._count = 0

    def __repr__(self) -> str:
        return f"{self.__class__.__qualname__}(freq={self._freq:,}, count={self._count:,})"

    @property
    def freq(self) -> int:
        r"""The period of the condition."""
        return self._freq

    def equal(self, other: Any) -> bool:
        if isinstance(other, PeriodicCondition):
            return self.freq == other.freq
        return False

    def evaluate(self) -> bool:
        hit = self._count % self._freq == 0
        self._count += 1
        return hit
