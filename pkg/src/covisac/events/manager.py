r"""Implement the event manager that routes solver trace records."""

from __future__ import annotations

__all__ = ["EventManager"]

from collections import defaultdict
import logging
from typing import TYPE_CHECKING, Any

from coola.utils import str_indent, str_mapping, str_sequence

if TYPE_CHECKING:
    from collections.abc import Mapping

    from covisac.events.handlers import BaseEventHandler

logger = logging.getLogger(__name__)


class EventManager:
    r"""Implement an event manager.

    Handlers are attached to case-sensitive event names. The solvers
    trigger their events with one trace record per iteration, and each
    attached handler receives that record.

    Example usage:

    ```pycon
    >>> from covisac.events import EventManager, TraceRecorder
    >>> manager = EventManager()
    >>> recorder = TraceRecorder()
    >>> manager.add_event_handler("sca_iteration", recorder)
    >>> manager.trigger_event("sca_iteration", {"iteration": 1, "objective": 4.2})
    >>> recorder.records
    ({'iteration': 1, 'objective': 4.2},)
    >>> manager.num_triggers("sca_iteration")
    1

    ```
    """

    def __init__(self) -> None:
        self._event_handlers: defaultdict[str, list[BaseEventHandler]] = defaultdict(list)
        self._num_triggers: defaultdict[str, int] = defaultdict(int)
        self._last_triggered_event: str | None = None

    def __repr__(self) -> str:
        event_handlers = str_mapping(
            {
                event: "\n" + str_sequence(handlers) if handlers else ""
                for event, handlers in self._event_handlers.items()
            }
        )
        args = str_indent(
            str_mapping(
                {
                    "event_handlers": "\n" + event_handlers if event_handlers else event_handlers,
                    "last_triggered_event": self._last_triggered_event,
                }
            )
        )
        return f"{self.__class__.__qualname__}(\n  {args}\n)"

    @property
    def last_triggered_event(self) -> str | None:
        r"""The name of the last triggered event, or ``None``."""
        return self._last_triggered_event

    def num_triggers(self, event: str) -> int:
        r"""Return how many times an event was triggered since the last
        reset.

        Args:
            event: The event name.

        Returns:
            The number of triggers.
        """
        return self._num_triggers.get(event, 0)

    def add_event_handler(self, event: str, event_handler: BaseEventHandler) -> None:
        r"""Attach a handler to an event.

        Args:
            event: The event name.
            event_handler: The handler called on every trigger of
                ``event``.
        """
        self._event_handlers[str(event)].append(event_handler)
        logger.debug(f"Added {event_handler} to event {event}")

    def trigger_event(self, event: str, record: Mapping[str, Any] | None = None) -> None:
        r"""Call every handler attached to an event.

        Args:
            event: The event name.
            record: The trace record passed to the handlers.
        """
        self._last_triggered_event = event
        self._num_triggers[event] += 1
        for event_handler in self._event_handlers.get(event, ()):
            event_handler.handle(record)

    def has_event_handler(self, event_handler: BaseEventHandler, event: str | None = None) -> bool:
        r"""Indicate if a handler is attached.

        The comparison relies on the ``equal`` method of the handler.

        Args:
            event_handler: The handler to look for.
            event: The event to search. ``None`` searches all events.

        Returns:
            ``True`` if an equal handler is attached.

        Example usage:

        ```pycon
        >>> from covisac.events import EventManager, LoggingEventHandler
        >>> manager = EventManager()
        >>> manager.add_event_handler("ao_round", LoggingEventHandler("ao"))
        >>> manager.has_event_handler(LoggingEventHandler("ao"))
        True
        >>> manager.has_event_handler(LoggingEventHandler("ao"), "sca_iteration")
        False

        ```
        """
        events = [event] if event else list(self._event_handlers)
        return any(
            event_handler.equal(handler)
            for name in events
            for handler in self._event_handlers.get(name, ())
        )

    def remove_event_handler(self, event: str, event_handler: BaseEventHandler) -> None:
        r"""Detach every copy of a handler from an event.

        Args:
            event: The event name.
            event_handler: The handler to remove.

        Raises:
            RuntimeError: if the event does not exist or the handler
                is not attached to it.
        """
        if event not in self._event_handlers:
            msg = f"'{event}' event does not exist"
            raise RuntimeError(msg)
        kept = [h for h in self._event_handlers[event] if not event_handler.equal(h)]
        if len(kept) == len(self._event_handlers[event]):
            msg = f"{event_handler} is not found among registered event handlers for '{event}' event"
            raise RuntimeError(msg)
        if kept:
            self._event_handlers[event] = kept
        else:
            del self._event_handlers[event]
        logger.debug(f"Removed {event_handler} in '{event}' event")

    def reset(self) -> None:
        r"""Remove all the handlers and forget the trigger history."""
        self._event_handlers.clear()
        self._num_triggers.clear()
        self._last_triggered_event = None
