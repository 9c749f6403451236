r"""Contain the event system used to route solver traces."""

from __future__ import annotations

__all__ = [
    "AO_ROUND",
    "SCA_ITERATION",
    "SCA_RESTORATION",
    "TRUST_REGION_ITERATION",
    "BaseCondition",
    "BaseEventHandler",
    "ConditionalEventHandler",
    "EventHandler",
    "EventManager",
    "LoggingEventHandler",
    "PeriodicCondition",
    "TraceRecorder",
]

from covisac.events.conditions import BaseCondition, PeriodicCondition
from covisac.events.handlers import (
    BaseEventHandler,
    ConditionalEventHandler,
    EventHandler,
    LoggingEventHandler,
    TraceRecorder,
)
from covisac.events.manager import EventManager

SCA_ITERATION = "sca_iteration"
SCA_RESTORATION = "sca_restoration"
TRUST_REGION_ITERATION = "trust_region_iteration"
AO_ROUND = "ao_round"
