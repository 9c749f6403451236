from __future__ import annotations

import logging

from covisac import load_scenario
from covisac.covert import DetectionStats, dep_from_mu, dep_min, f_inverse
from covisac.events import EventHandler, EventManager

logger = logging.getLogger(__name__)


def check_event_manager() -> None:
    logger.info("Checking event manager...")

    event_manager = EventManager()
    event_manager.add_event_handler(event="my_event", event_handler=EventHandler(print, ["Hello!"]))
    event_manager.trigger_event("my_event")
    assert event_manager.has_event_handler(
        event="my_event", event_handler=EventHandler(print, ["Hello!"])
    )


def check_scenarios() -> None:
    logger.info("Checking shipped scenarios...")

    scenario = load_scenario("table1.default")
    assert scenario.num_samples == 18
    assert scenario.mu_max == 0.0276
    assert load_scenario("desk").num_slots == 6


def check_covert() -> None:
    logger.info("Checking covertness closed forms...")

    assert abs(f_inverse(0.01) - 0.0276) < 5e-5
    assert abs(dep_from_mu(1.0) - 0.75) < 1e-12
    assert abs(dep_min(DetectionStats(1.0, 2.0)) - 0.75) < 1e-12


def main() -> None:
    check_event_manager()
    check_scenarios()
    check_covert()


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    main()
