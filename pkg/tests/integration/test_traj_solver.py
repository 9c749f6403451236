from __future__ import annotations

import math

import pytest

from covisac.channel import build_channel_set
from covisac.metrics import check_p0
from covisac.ra_solver import solve_slots
from covisac.scenario import (
    ScenarioConfig,
    load_scenario,
    propulsion_energy,
    repair_spacing,
    sample_sensing_area,
    straight_trajectory,
)
from covisac.traj_solver import trust_region_solve


@pytest.fixture(scope="module")
def desk() -> ScenarioConfig:
    return load_scenario("desk")


########################################
#     Tests for trust_region_solve     #
########################################


@pytest.mark.timeout(900)
def test_trust_region_solve_decreases_energy(desk: ScenarioConfig) -> None:
    samples = sample_sensing_area(desk.sensing_box, desk.num_samples)
    initial = repair_spacing(straight_trajectory(desk), desk, samples)
    channels = build_channel_set(desk, initial, samples)
    allocations, _ = solve_slots(channels, desk)

    trajectory, records = trust_region_solve(
        initial, allocations, desk, target_samples=samples
    )
    before = math.fsum(propulsion_energy(initial, desk.propulsion).ravel())
    after = math.fsum(propulsion_energy(trajectory, desk.propulsion).ravel())
    assert after <= before * (1 + 1e-9)
    assert (trajectory.waypoints[:, 0] == desk.uav_start).all()
    assert (trajectory.waypoints[:, -1] == desk.uav_end).all()

    accepted = [record["objective_J"] for record in records if record["accepted"]]
    for previous, current in zip(accepted, accepted[1:]):
        assert current <= previous
    assert records[0]["iteration"] == 0

    final = check_p0(allocations, trajectory, build_channel_set(desk, trajectory, samples), desk)
    assert final.is_feasible()
