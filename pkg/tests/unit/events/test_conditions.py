from __future__ import annotations

import pytest

from covisac.events import PeriodicCondition

#######################################
#     Tests for PeriodicCondition     #
#######################################


def test_periodic_condition_str() -> None:
    assert str(PeriodicCondition(3)).startswith("PeriodicCondition(freq=3,")


@pytest.mark.parametrize("freq", [1, 2, 3])
def test_periodic_condition_freq(freq: int) -> None:
    assert PeriodicCondition(freq).freq == freq


@pytest.mark.parametrize("freq", [0, -1])
def test_periodic_condition_incorrect_freq(freq: int) -> None:
    with pytest.raises(ValueError, match="freq has to be a positive integer"):
        PeriodicCondition(freq)


def test_periodic_condition__eq__true() -> None:
    assert PeriodicCondition(3) == PeriodicCondition(3)


def test_periodic_condition__eq__false() -> None:
    assert PeriodicCondition(3) != PeriodicCondition(2)


def test_periodic_condition_equal_false_different_classes() -> None:
    assert not PeriodicCondition(3).equal("meow")


@pytest.mark.parametrize(
    ("freq", "expected"),
    [
        (1, [True] * 7),
        (2, [True, False, True, False, True, False, True]),
        (3, [True, False, False, True, False, False, True]),
    ],
)
def test_periodic_condition_evaluate(freq: int, expected: list[bool]) -> None:
    condition = PeriodicCondition(freq)
    assert [condition.evaluate() for _ in range(7)] == expected


def test_periodic_condition_evaluate_counts_from_construction() -> None:
    condition = PeriodicCondition(2)
    condition.evaluate()
    assert str(condition) == "PeriodicCondition(freq=2, count=1)"
