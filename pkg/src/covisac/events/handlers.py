r"""Implement the handlers that receive solver trace records."""

from __future__ import annotations

__all__ = [
    "BaseEventHandler",
    "ConditionalEventHandler",
    "EventHandler",
    "LoggingEventHandler",
    "TraceRecorder",
]

from abc import ABC, abstractmethod
import logging
from typing import TYPE_CHECKING, Any

from coola import objects_are_equal
from coola.utils import str_indent, str_mapping

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping, Sequence

    from covisac.events.conditions import BaseCondition

logger = logging.getLogger(__name__)


class BaseEventHandler(ABC):
    r"""Define the base class of a trace handler.

    A handler is called with the record of the event (a flat mapping
    of scalars, or ``None`` for events without payload).

    A child class has to implement the following methods:

        - ``handle``
        - ``equal``
    """

    def __eq__(self, other: object) -> bool:
        return self.equal(other)

    @abstractmethod
    def equal(self, other: Any) -> bool:
        r"""Compare two handlers.

        Args:
            other: The other object to compare with.

        Returns:
            ``True`` if the two handlers are equal, otherwise
                ``False``.
        """

    @abstractmethod
    def handle(self, record: Mapping[str, Any] | None = None) -> None:
        r"""Handle one event.

        Args:
            record: The trace record attached to the event.
        """


class EventHandler(BaseEventHandler):
    r"""Implement a handler that forwards the record to a callable.

    The callable is invoked as
    ``handler(record, *handler_args, **handler_kwargs)``.

    Args:
        handler: The callable.
        handler_args: The extra positional arguments.
        handler_kwargs: The extra keyword arguments.

    Raises:
        TypeError: if ``handler`` is not callable.

    Example usage:

    ```pycon
    >>> from covisac.events import EventHandler
    >>> handler = EventHandler(print, handler_kwargs={"end": "!\n"})
    >>> handler.handle({"iteration": 1})
    {'iteration': 1}!

    ```
    """

    def __init__(
        self,
        handler: Callable,
        handler_args: Sequence | None = None,
        handler_kwargs: dict | None = None,
    ) -> None:
        if not callable(handler):
            msg = f"handler is not callable: {handler}"
            raise TypeError(msg)
        self._handler = handler
        self._handler_args = tuple(handler_args or ())
        self._handler_kwargs = handler_kwargs or {}

    def __repr__(self) -> str:
        args = str_indent(str_mapping(self._fields()))
        return f"{self.__class__.__qualname__}(\n  {args}\n)"

    def _fields(self) -> dict[str, Any]:
        return {
            "handler": self._handler,
            "handler_args": self._handler_args,
            "handler_kwargs": self._handler_kwargs,
        }

    @property
    def handler(self) -> Callable:
        r"""The wrapped callable."""
        return self._handler

    @property
    def handler_args(self) -> tuple:
        r"""The extra positional arguments."""
        return self._handler_args

    @property
    def handler_kwargs(self) -> dict:
        r"""The extra keyword arguments."""
        return self._handler_kwargs

    def equal(self, other: Any) -> bool:
        if type(other) is not type(self):
            return False
        return objects_are_equal(self._fields(), other._fields())

    def handle(self, record: Mapping[str, Any] | None = None) -> None:
        self._handler(record, *self._handler_args, **self._handler_kwargs)


class ConditionalEventHandler(EventHandler):
    r"""Implement a handler that runs only when its condition holds.

    The condition is evaluated once per event, so a
    ``PeriodicCondition(freq=5)`` lets through one record out of five.

    Args:
        handler: The callable.
        condition: The condition guarding the callable.
        handler_args: The extra positional arguments.
        handler_kwargs: The extra keyword arguments.

    Example usage:

    ```pycon
    >>> from covisac.events import ConditionalEventHandler, PeriodicCondition
    >>> handler = ConditionalEventHandler(print, PeriodicCondition(freq=2))
    >>> for i in range(3):
    ...     handler.handle({"iteration": i})
    ...
    {'iteration': 0}
    {'iteration': 2}

    ```
    """

    def __init__(
        self,
        handler: Callable,
        condition: BaseCondition,
        handler_args: Sequence | None = None,
        handler_kwargs: dict | None = None,
    ) -> None:
        super().__init__(handler=handler, handler_args=handler_args, handler_kwargs=handler_kwargs)
        self._condition = condition

    def _fields(self) -> dict[str, Any]:
        return super()._fields() | {"condition": self._condition}

    @property
    def condition(self) -> BaseCondition:
        r"""The condition."""
        return self._condition

    def handle(self, record: Mapping[str, Any] | None = None) -> None:
        if self._condition.evaluate():
            super().handle(record)


class LoggingEventHandler(BaseEventHandler):
    r"""Implement a handler that writes each record to a logger.

    Args:
        name: The label printed in front of the record.
        level: The logging level.

    Example usage:

    ```pycon
    >>> from covisac.events import LoggingEventHandler
    >>> handler = LoggingEventHandler("sca", level=20)
    >>> handler
    LoggingEventHandler(name=sca, level=20)
    >>> handler.handle({"iteration": 1, "objective": 2.5})

    ```
    """

    def __init__(self, name: str, level: int = logging.DEBUG) -> None:
        self._name = str(name)
        self._level = int(level)

    def __repr__(self) -> str:
        return f"{self.__class__.__qualname__}(name={self._name}, level={self._level})"

    def equal(self, other: Any) -> bool:
        if not isinstance(other, LoggingEventHandler):
            return False
        return self._name == other._name and self._level == other._level

    def handle(self, record: Mapping[str, Any] | None = None) -> None:
        fields = ", ".join(f"{key}={value}" for key, value in (record or {}).items())
        logger.log(self._level, f"[{self._name}] {fields}")


class TraceRecorder(BaseEventHandler):
    r"""Implement a handler that stores a copy of every record.

    Two recorders are equal if they hold the same records.

    Example usage:

    ```pycon
    >>> from covisac.events import TraceRecorder
    >>> recorder = TraceRecorder()
    >>> recorder.handle({"iteration": 1, "objective": 3.0})
    >>> recorder.handle({"iteration": 2, "objective": 2.0})
    >>> recorder.records
    ({'iteration': 1, 'objective': 3.0}, {'iteration': 2, 'objective': 2.0})
    >>> recorder.column("objective")
    [3.0, 2.0]

    ```
    """

    def __init__(self) -> None:
        self._records: list[dict[str, Any]] = []

    def __len__(self) -> int:
        return len(self._records)

    def __repr__(self) -> str:
        return f"{self.__class__.__qualname__}(num_records={len(self._records):,})"

    @property
    def records(self) -> tuple[dict[str, Any], ...]:
        r"""The stored records, in arrival order."""
        return tuple(self._records)

    def column(self, key: str) -> list[Any]:
        r"""Return the values of one field across all the records.

        Records without the field are skipped.

        Args:
            key: The field name.

        Returns:
            The values, in arrival order.
        """
        return [record[key] for record in self._records if key in record]

    def clear(self) -> None:
        r"""Remove all the stored records."""
        self._records.clear()

    def equal(self, other: Any) -> bool:
        if not isinstance(other, TraceRecorder):
            return False
        return objects_are_equal(self._records, other._records, equal_nan=True)

    def handle(self, record: Mapping[str, Any] | None = None) -> None:
        self._records.append(dict(record or {}))
