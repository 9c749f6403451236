from __future__ import annotations

import logging
from typing import Any

import pytest
from coola import objects_are_equal

from covisac.events import (
    ConditionalEventHandler,
    EventHandler,
    LoggingEventHandler,
    PeriodicCondition,
    TraceRecorder,
)


class Collector:
    def __init__(self) -> None:
        self.calls: list[tuple[Any, ...]] = []

    def __call__(self, record: Any, *args: Any, **kwargs: Any) -> None:
        self.calls.append((record, args, kwargs))


def noop(record: Any) -> None:
    r"""Do nothing."""


##################################
#     Tests for EventHandler     #
##################################


def test_event_handler_str() -> None:
    assert str(EventHandler(noop)).startswith("EventHandler(")


def test_event_handler_not_callable() -> None:
    with pytest.raises(TypeError, match="handler is not callable"):
        EventHandler("abc")


def test_event_handler_properties() -> None:
    handler = EventHandler(noop, handler_args=[1, 2], handler_kwargs={"key": "value"})
    assert handler.handler is noop
    assert handler.handler_args == (1, 2)
    assert handler.handler_kwargs == {"key": "value"}


def test_event_handler_equal_true() -> None:
    assert EventHandler(noop, [1]).equal(EventHandler(noop, [1]))


def test_event_handler_equal_false_different_args() -> None:
    assert not EventHandler(noop, [1]).equal(EventHandler(noop, [2]))


def test_event_handler_equal_false_different_types() -> None:
    assert not EventHandler(noop).equal(ConditionalEventHandler(noop, PeriodicCondition(1)))


def test_event_handler_handle_forwards_record() -> None:
    collector = Collector()
    EventHandler(collector, handler_args=[3], handler_kwargs={"tag": "sca"}).handle(
        {"iteration": 1}
    )
    assert collector.calls == [({"iteration": 1}, (3,), {"tag": "sca"})]


def test_event_handler_handle_without_record() -> None:
    collector = Collector()
    EventHandler(collector).handle()
    assert collector.calls == [(None, (), {})]


#############################################
#     Tests for ConditionalEventHandler     #
#############################################


def test_conditional_event_handler_str() -> None:
    assert str(ConditionalEventHandler(noop, PeriodicCondition(2))).startswith(
        "ConditionalEventHandler("
    )


def test_conditional_event_handler_condition() -> None:
    assert ConditionalEventHandler(noop, PeriodicCondition(2)).condition == PeriodicCondition(2)


def test_conditional_event_handler_equal_false_different_condition() -> None:
    assert not ConditionalEventHandler(noop, PeriodicCondition(2)).equal(
        ConditionalEventHandler(noop, PeriodicCondition(3))
    )


def test_conditional_event_handler_handle_periodic() -> None:
    collector = Collector()
    handler = ConditionalEventHandler(collector, PeriodicCondition(3))
    for i in range(7):
        handler.handle({"iteration": i})
    assert [call[0]["iteration"] for call in collector.calls] == [0, 3, 6]


#########################################
#     Tests for LoggingEventHandler     #
#########################################


def test_logging_event_handler_str() -> None:
    assert str(LoggingEventHandler("ao", level=20)) == "LoggingEventHandler(name=ao, level=20)"


def test_logging_event_handler_equal() -> None:
    assert LoggingEventHandler("ao").equal(LoggingEventHandler("ao"))
    assert not LoggingEventHandler("ao").equal(LoggingEventHandler("sca"))
    assert not LoggingEventHandler("ao").equal(LoggingEventHandler("ao", level=logging.INFO))


def test_logging_event_handler_handle(caplog: pytest.LogCaptureFixture) -> None:
    with caplog.at_level(logging.INFO):
        LoggingEventHandler("ao", level=logging.INFO).handle({"round": 2, "total_energy_J": 1.5})
    assert "[ao] round=2, total_energy_J=1.5" in caplog.text


###################################
#     Tests for TraceRecorder     #
###################################


def test_trace_recorder_str() -> None:
    assert str(TraceRecorder()) == "TraceRecorder(num_records=0)"


def test_trace_recorder_handle() -> None:
    recorder = TraceRecorder()
    recorder.handle({"iteration": 1, "objective_J": 3.0})
    recorder.handle({"iteration": 2, "objective_J": 2.0})
    assert len(recorder) == 2
    assert objects_are_equal(
        recorder.records,
        ({"iteration": 1, "objective_J": 3.0}, {"iteration": 2, "objective_J": 2.0}),
    )


def test_trace_recorder_handle_copies_record() -> None:
    recorder = TraceRecorder()
    record = {"iteration": 1}
    recorder.handle(record)
    record["iteration"] = 5
    assert recorder.records == ({"iteration": 1},)


def test_trace_recorder_column_skips_missing() -> None:
    recorder = TraceRecorder()
    recorder.handle({"iteration": 0, "radius_m": 5.0})
    recorder.handle({"iteration": 1})
    recorder.handle({"iteration": 2, "radius_m": 2.5})
    assert recorder.column("radius_m") == [5.0, 2.5]


def test_trace_recorder_clear() -> None:
    recorder = TraceRecorder()
    recorder.handle({"iteration": 1})
    recorder.clear()
    assert len(recorder) == 0


def test_trace_recorder_equal() -> None:
    first, second = TraceRecorder(), TraceRecorder()
    first.handle({"iteration": 1})
    assert not first.equal(second)
    second.handle({"iteration": 1})
    assert first.equal(second)
    assert not first.equal([{"iteration": 1}])
