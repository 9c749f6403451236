from __future__ import annotations

import math

import numpy as np
import pytest

from covisac.channel import ChannelSet, build_channel_set
from covisac.errors import BuildError, InfeasibleError, InputError
from covisac.metrics import ResourceAllocation
from covisac.scenario import (
    ScenarioConfig,
    Trajectory,
    load_scenario,
    propulsion_energy,
    sample_sensing_area,
    straight_trajectory,
)
from covisac.traj_solver import (
    TrajIterate,
    TrustRegionSettings,
    build_p22,
    induced_factor,
    omega,
    psi,
    trust_region_solve,
)

POSITION = np.array([10.0, -20.0, 100.0])


@pytest.fixture(scope="module")
def desk() -> ScenarioConfig:
    return load_scenario("desk")


@pytest.fixture(scope="module")
def samples(desk: ScenarioConfig) -> np.ndarray:
    return sample_sensing_area(desk.sensing_box, desk.num_samples)


@pytest.fixture(scope="module")
def channels(desk: ScenarioConfig, samples: np.ndarray) -> ChannelSet:
    return build_channel_set(desk, straight_trajectory(desk), samples)


def _allocation(t1: float = 0.5) -> ResourceAllocation:
    return ResourceAllocation(
        w=[[0.06 + 0.02j, -0.03 + 0.05j]],
        r0=np.eye(8),
        r1=np.eye(8),
        f_local=[5e9],
        f_edge=[1e9],
        t0=1.0 - t1,
        t1=t1,
    )


#########################################
#     Tests for TrustRegionSettings     #
#########################################


def test_trust_region_settings_default() -> None:
    settings = TrustRegionSettings()
    assert settings.initial_radius == 5.0
    assert settings.min_radius == 1e-2
    assert settings.max_iterations == 100


@pytest.mark.parametrize(
    "kwargs", [{"min_radius": 0.0}, {"min_radius": 10.0}, {"max_iterations": 0}]
)
def test_trust_region_settings_incorrect(kwargs: dict) -> None:
    with pytest.raises(InputError):
        TrustRegionSettings(**kwargs)


####################################
#     Tests for induced_factor     #
####################################


@pytest.mark.parametrize("speed", [0.0, 3.0, 12.5, 30.0])
def test_induced_factor_solves_quartic(speed: float) -> None:
    v2 = induced_factor(np.array([speed]), 4.03)[0]
    assert v2**2 + speed**2 / 4.03**2 == pytest.approx(1.0 / v2**2)


def test_induced_factor_decreasing() -> None:
    values = induced_factor(np.linspace(0.0, 30.0, 50), 4.03)
    assert np.all(np.diff(values) < 0)


#################################
#     Tests for TrajIterate     #
#################################


def test_traj_iterate_from_trajectory(desk: ScenarioConfig) -> None:
    trajectory = straight_trajectory(desk)
    point = TrajIterate.from_trajectory(trajectory, desk.propulsion, 5.0)
    assert np.allclose(point.v1, 100.0 / 6.0)
    assert point.objective == pytest.approx(
        math.fsum(propulsion_energy(trajectory, desk.propulsion).ravel())
    )
    assert point.radius == 5.0
    assert str(point).startswith("TrajIterate(")


def test_traj_iterate_with_radius(desk: ScenarioConfig) -> None:
    point = TrajIterate.from_trajectory(straight_trajectory(desk), desk.propulsion, 5.0)
    smaller = point.with_radius(2.5)
    assert smaller.radius == 2.5
    assert smaller.objective == point.objective


def test_traj_iterate_incorrect_radius(desk: ScenarioConfig) -> None:
    with pytest.raises(InputError, match="radius has to be positive"):
        TrajIterate.from_trajectory(straight_trajectory(desk), desk.propulsion, 0.0)


###############################
#     Tests for psi/omega     #
###############################


def _numeric_gradient(function, step: float = 1e-3) -> np.ndarray:
    gradient = []
    for axis in (0, 1):
        shift = np.zeros(3)
        shift[axis] = step
        gradient.append((function(POSITION + shift) - function(POSITION - shift)) / (2 * step))
    return np.array(gradient)


def test_psi_value(desk: ScenarioConfig) -> None:
    alloc = _allocation()
    value, _ = psi(POSITION, 0, alloc, desk)
    gain = desk.path_loss * sum(
        1.0 / np.sum((POSITION - ap) ** 2) for ap in desk.ap_positions
    )
    # rank-one channels: every receive antenna sees |a^H w|^2 C0 / d^2
    assert value > 0
    assert value <= gain * desk.n_receive * desk.n_uav * np.sum(np.abs(alloc.w) ** 2)


def test_psi_gradient_finite_differences(desk: ScenarioConfig) -> None:
    alloc = _allocation()
    _, gradient = psi(POSITION, 0, alloc, desk)
    numeric = _numeric_gradient(lambda p: psi(p, 0, alloc, desk)[0])
    assert np.allclose(gradient, numeric, rtol=1e-5, atol=1e-16)


def test_omega_gradient_finite_differences(desk: ScenarioConfig) -> None:
    alloc = _allocation()
    _, gradient = omega(POSITION, 0, 0, alloc, desk)
    numeric = _numeric_gradient(lambda p: omega(p, 0, 0, alloc, desk)[0])
    assert np.allclose(gradient, numeric, rtol=1e-5, atol=1e-18)


def _random_geometries(count: int = 100) -> list[tuple[np.ndarray, ResourceAllocation]]:
    rng = np.random.default_rng(7)
    geometries = []
    for _ in range(count):
        position = np.array(
            [rng.uniform(-150.0, 150.0), rng.uniform(-150.0, 150.0), rng.uniform(60.0, 90.0)]
        )
        alloc = ResourceAllocation(
            w=[0.05 * (rng.normal(size=2) + 1j * rng.normal(size=2))],
            r0=np.eye(8),
            r1=np.eye(8),
            f_local=[5e9],
            f_edge=[1e9],
            t0=0.5,
            t1=0.5,
        )
        geometries.append((position, alloc))
    return geometries


def _assert_gradient_matches(function, position: np.ndarray) -> None:
    value, gradient = function(position)
    step = 1e-2
    numeric = []
    for axis in (0, 1):
        shift = np.zeros(3)
        shift[axis] = step
        numeric.append(
            (function(position + shift)[0] - function(position - shift)[0]) / (2 * step)
        )
    # flat points are compared against the scale of the value
    scale = max(np.linalg.norm(gradient), 1e-5 * value)
    assert np.linalg.norm(gradient - np.array(numeric)) <= 1e-4 * scale


def test_psi_gradient_random_geometries(desk: ScenarioConfig) -> None:
    for position, alloc in _random_geometries():
        _assert_gradient_matches(lambda p, alloc=alloc: psi(p, 0, alloc, desk), position)


def test_omega_gradient_random_geometries(desk: ScenarioConfig) -> None:
    for position, alloc in _random_geometries():
        _assert_gradient_matches(lambda p, alloc=alloc: omega(p, 0, 0, alloc, desk), position)


###############################
#     Tests for build_p22     #
###############################


def test_build_p22_families(
    desk: ScenarioConfig, channels: ChannelSet, samples: np.ndarray
) -> None:
    point = TrajIterate.from_trajectory(straight_trajectory(desk), desk.propulsion, 5.0)
    program = build_p22(point, [_allocation()] * 6, channels, desk, samples)
    assert {
        "endpoint",
        "speed",
        "propulsion_speed",
        "propulsion_cube",
        "induced_velocity",
        "uav_warden",
        "uav_target",
        "trust_region",
        "sensing",
        "offload_rate",
        "covert",
    } <= set(program.families())
    # a single UAV has no pair constraint
    assert "uav_uav" not in program.families()
    # slot 0 is fixed by the start point
    assert program.count("sensing") == 5 * desk.num_samples


def test_build_p22_objective_matches_iterate(
    desk: ScenarioConfig, channels: ChannelSet, samples: np.ndarray
) -> None:
    point = TrajIterate.from_trajectory(straight_trajectory(desk), desk.propulsion, 5.0)
    program = build_p22(point, [_allocation()] * 6, channels, desk, samples)
    program.assign(point.program_values())
    assert program.objective_value() == pytest.approx(point.objective, rel=1e-9)


def test_build_p22_iterate_satisfies_geometry(
    desk: ScenarioConfig, channels: ChannelSet, samples: np.ndarray
) -> None:
    point = TrajIterate.from_trajectory(straight_trajectory(desk), desk.propulsion, 5.0)
    program = build_p22(point, [_allocation()] * 6, channels, desk, samples)
    program.assign(point.program_values())
    violations = program.violations(
        ["endpoint", "speed", "propulsion_speed", "uav_warden", "uav_target", "trust_region"]
    )
    assert max(violations.values()) <= 1e-9


def test_build_p22_incorrect_shape(
    desk: ScenarioConfig, channels: ChannelSet, samples: np.ndarray
) -> None:
    short = Trajectory(np.zeros((1, 4, 2)), desk.slot_duration)
    point = TrajIterate.from_trajectory(short, desk.propulsion, 5.0)
    with pytest.raises(BuildError, match="does not match the scenario"):
        build_p22(point, [_allocation()] * 6, channels, desk, samples)


def test_build_p22_incorrect_allocations(
    desk: ScenarioConfig, channels: ChannelSet, samples: np.ndarray
) -> None:
    point = TrajIterate.from_trajectory(straight_trajectory(desk), desk.propulsion, 5.0)
    with pytest.raises(BuildError, match="expected 6 allocations"):
        build_p22(point, [_allocation()] * 5, channels, desk, samples)


def test_build_p22_no_offloading_time(
    desk: ScenarioConfig, channels: ChannelSet, samples: np.ndarray
) -> None:
    point = TrajIterate.from_trajectory(straight_trajectory(desk), desk.propulsion, 5.0)
    with pytest.raises(BuildError, match="bits left but no offloading time"):
        build_p22(point, [_allocation(t1=0.0)] * 6, channels, desk, samples)


########################################
#     Tests for trust_region_solve     #
########################################


def test_trust_region_solve_infeasible_start(desk: ScenarioConfig) -> None:
    # no bit is offloaded or computed at the server
    idle = ResourceAllocation(
        w=np.zeros((1, 2)),
        r0=np.zeros((8, 8)),
        r1=np.zeros((8, 8)),
        f_local=[0.0],
        f_edge=[0.0],
        t0=0.5,
        t1=0.5,
    )
    with pytest.raises(InfeasibleError, match="violates the joint constraints") as info:
        trust_region_solve(straight_trajectory(desk), [idle] * 6, desk)
    assert "edge_bits" in info.value.families
