from __future__ import annotations

from dataclasses import replace
import math
from unittest.mock import patch

import cvxpy as cp
import numpy as np
import pytest

from covisac import ra_solver
from covisac.channel import ChannelSet, build_channel_set
from covisac.errors import BuildError, InfeasibleError, InputError, InternalError
from covisac.events import SCA_RESTORATION, EventManager
from covisac.metrics import check_slot
from covisac.ra_solver import (
    LOG_FLOOR,
    AllocationRestriction,
    RaIterate,
    ScaSettings,
    SlotProblem,
    build_p12,
    initialize_feasible,
    kappa,
    sca_solve,
)
from covisac.scenario import (
    ScenarioConfig,
    load_scenario,
    sample_sensing_area,
    straight_trajectory,
)


@pytest.fixture(scope="module")
def desk() -> ScenarioConfig:
    return load_scenario("desk")


@pytest.fixture(scope="module")
def channels(desk: ScenarioConfig) -> ChannelSet:
    samples = sample_sensing_area(desk.sensing_box, desk.num_samples)
    return build_channel_set(desk, straight_trajectory(desk), samples)


@pytest.fixture(scope="module")
def start(desk: ScenarioConfig, channels: ChannelSet) -> RaIterate:
    return initialize_feasible(2, channels, desk)


###########################
#     Tests for kappa     #
###########################


def test_kappa_exact_at_point() -> None:
    assert kappa(0.7, 0.7) == pytest.approx(math.exp(0.7))


def test_kappa_random_pairs() -> None:
    rng = np.random.default_rng(3)
    points = rng.uniform(-10.0, 10.0, size=(10_000, 2))
    for x, x0 in points:
        assert kappa(x, x0) <= math.exp(x) * (1.0 + 1e-12)
        assert abs(kappa(x0, x0) - math.exp(x0)) <= 1e-12 * math.exp(x0)


@pytest.mark.parametrize("x0", [-3.0, 0.0, 2.5])
def test_kappa_underestimates_exp(x0: float) -> None:
    x = np.linspace(-5.0, 5.0, 101)
    assert np.all(kappa(x, x0) <= np.exp(x) + 1e-12)


def test_kappa_cvxpy_expression() -> None:
    x = cp.Variable()
    expression = kappa(x, 1.0)
    assert expression.is_affine()
    x.value = 2.0
    assert expression.value == pytest.approx(2.0 * math.e)


###########################################
#     Tests for AllocationRestriction     #
###########################################


def test_allocation_restriction_is_free() -> None:
    assert AllocationRestriction().is_free
    assert not AllocationRestriction(full_offload=True).is_free
    assert not AllocationRestriction(time_ratio=1.0).is_free


def test_allocation_restriction_incorrect_ratio() -> None:
    with pytest.raises(InputError, match="time_ratio has to be positive"):
        AllocationRestriction(time_ratio=0.0)


#################################
#     Tests for ScaSettings     #
#################################


def test_sca_settings_default() -> None:
    settings = ScaSettings()
    assert settings.epsilon == 1e-4
    assert settings.max_iterations == 30


@pytest.mark.parametrize(
    ("kwargs", "message"),
    [
        ({"epsilon": 0.0}, "epsilon has to be positive"),
        ({"max_iterations": 0}, "the iteration caps have to be positive"),
        ({"restoration_iterations": 0}, "the iteration caps have to be positive"),
    ],
)
def test_sca_settings_incorrect(kwargs: dict, message: str) -> None:
    with pytest.raises(InputError, match=message):
        ScaSettings(**kwargs)


#################################
#     Tests for SlotProblem     #
#################################


def test_slot_problem_dimensions(desk: ScenarioConfig, channels: ChannelSet) -> None:
    problem = SlotProblem.from_channels(0, channels, desk)
    assert problem.num_uavs == 1
    assert problem.num_samples == 4
    assert problem.num_wardens == 1
    assert problem.n_uav == 2
    assert problem.receive_dim == 4
    assert problem.transmit_dim == 8
    # 7 Mbit at 1000 cycles/bit
    assert np.allclose(problem.cycles, [7.0])
    assert problem.f_edge_max == pytest.approx(50.0)


def test_slot_problem_signal_powers(desk: ScenarioConfig, channels: ChannelSet) -> None:
    problem = SlotProblem.from_channels(1, channels, desk)
    beam = np.array([[0.1, 0.0, 0.0, 0.05]])
    complex_beam = np.array([0.1, 0.05j])
    expected = np.sum(np.abs(channels.offload[1, 0] @ complex_beam) ** 2) / desk.noise_radar
    assert problem.signal_powers(beam)[0] == pytest.approx(expected)


def test_slot_problem_incorrect_slot(desk: ScenarioConfig, channels: ChannelSet) -> None:
    with pytest.raises(InputError, match=r"slot 6 is outside \[0, 6\)"):
        SlotProblem.from_channels(6, channels, desk)


#########################################
#     Tests for initialize_feasible     #
#########################################


def test_initialize_feasible_point_is_feasible(
    desk: ScenarioConfig, channels: ChannelSet, start: RaIterate
) -> None:
    report = check_slot(2, start.to_allocation(), channels, desk)
    assert report.is_feasible()
    assert start.slack is None
    assert start.iteration == 0


def test_initialize_feasible_fixed_ratio(desk: ScenarioConfig, channels: ChannelSet) -> None:
    point = initialize_feasible(
        0, channels, desk, restriction=AllocationRestriction(time_ratio=1.0)
    )
    alloc = point.to_allocation()
    assert alloc.t0 == pytest.approx(alloc.t1, rel=1e-9)


def test_initialize_feasible_too_many_bits(desk: ScenarioConfig, channels: ChannelSet) -> None:
    heavy = desk.replace(task_bits=1e9)
    with pytest.raises(InfeasibleError, match="exceed what the MEC server can run") as info:
        initialize_feasible(0, channels, heavy)
    assert info.value.families == ("edge_bits",)
    assert info.value.slot == 0


def test_initialize_feasible_reports_restoration(
    desk: ScenarioConfig, channels: ChannelSet
) -> None:
    # a tight sensing requirement forces the restoration program
    demanding = desk.replace(gamma_min=5.0)
    records = []
    manager = EventManager()
    manager.add_event_handler(SCA_RESTORATION, records.append)
    try:
        point = initialize_feasible(0, channels, demanding, event_manager=manager)
    except InfeasibleError as exc:
        assert exc.families
    else:
        assert check_slot(0, point.to_allocation(), channels, demanding).is_feasible()
    assert all(record["slot"] == 0 for record in records)


###############################
#     Tests for RaIterate     #
###############################


def test_ra_iterate_check_incorrect_shape(
    desk: ScenarioConfig, channels: ChannelSet, start: RaIterate
) -> None:
    problem = SlotProblem.from_channels(2, channels, desk)
    point = replace(start, gamma=np.zeros((2, 2)))
    with pytest.raises(BuildError, match=r"gamma has shape \(2, 2\)"):
        point.check(problem)


def test_ra_iterate_check_non_finite(
    desk: ScenarioConfig, channels: ChannelSet, start: RaIterate
) -> None:
    problem = SlotProblem.from_channels(2, channels, desk)
    point = replace(start, tau0=math.nan)
    with pytest.raises(BuildError, match="non-finite scalar entries"):
        point.check(problem)


def test_ra_iterate_auxiliaries_above_floor(start: RaIterate) -> None:
    assert np.all(start.gamma >= LOG_FLOOR)
    assert np.all(start.a0 >= LOG_FLOOR)
    assert str(start).startswith("RaIterate(")


###############################
#     Tests for build_p12     #
###############################


def test_build_p12_families(desk: ScenarioConfig, channels: ChannelSet, start: RaIterate) -> None:
    program = build_p12(SlotProblem.from_channels(2, channels, desk), start)
    families = set(program.families())
    assert {
        "uav_power",
        "ap_power",
        "edge_bits",
        "offload_bits",
        "sensing_sinr",
        "covert",
        "time_budget",
        "psd",
    } <= families
    assert "restriction" not in families
    assert "slack" not in program.variables
    # one sensing constraint per target sample
    assert program.count("sensing_sinr") == 4


def test_build_p12_objective_matches_point(
    desk: ScenarioConfig, channels: ChannelSet, start: RaIterate
) -> None:
    program = build_p12(SlotProblem.from_channels(2, channels, desk), start)
    program.assign(start.program_values())
    assert program.objective_value() == pytest.approx(start.objective, rel=1e-9)


def test_build_p12_point_satisfies_linear_families(
    desk: ScenarioConfig, channels: ChannelSet, start: RaIterate
) -> None:
    program = build_p12(SlotProblem.from_channels(2, channels, desk), start)
    program.assign(start.program_values())
    violations = program.violations(
        ["uav_power", "ap_power", "local_cpu", "edge_bits", "offload_bits", "variable_bounds"]
    )
    assert max(violations.values()) <= 1e-6


def test_build_p12_restoration(
    desk: ScenarioConfig, channels: ChannelSet, start: RaIterate
) -> None:
    program = build_p12(SlotProblem.from_channels(2, channels, desk), start, restoration=True)
    assert "slack" in program.variables


def test_build_p12_restriction(
    desk: ScenarioConfig, channels: ChannelSet, start: RaIterate
) -> None:
    program = build_p12(
        SlotProblem.from_channels(2, channels, desk),
        start,
        AllocationRestriction(fixed_beams=True, full_offload=True),
    )
    assert "restriction" in program.families()
    assert {"beam_scale", "rho"} <= set(program.variables)


def test_build_p12_point_from_other_slot_shape(
    desk: ScenarioConfig, channels: ChannelSet, start: RaIterate
) -> None:
    two_samples = desk.replace(num_samples=2)
    samples = sample_sensing_area(two_samples.sensing_box, 2)
    other = build_channel_set(two_samples, straight_trajectory(two_samples), samples)
    with pytest.raises(BuildError, match="has shape"):
        build_p12(SlotProblem.from_channels(2, other, two_samples), start)


###############################
#     Tests for sca_solve     #
###############################


def _increasing_program(increase: float):
    solve_program = ra_solver._solve_program

    def solve(problem, iterate, restriction, settings, restoration):
        if restoration:
            return solve_program(problem, iterate, restriction, settings, restoration)
        return replace(
            iterate, objective=iterate.objective * (1.0 + increase), iteration=iterate.iteration + 1
        )

    return solve


@pytest.mark.parametrize("increase", [5e-9, 5e-7])
def test_sca_solve_stops_on_noise_increase(
    desk: ScenarioConfig, channels: ChannelSet, increase: float
) -> None:
    with patch("covisac.ra_solver._solve_program", side_effect=_increasing_program(increase)):
        allocation, records = sca_solve(2, channels, desk)
    objectives = [record["objective_J"] for record in records]
    assert len(objectives) <= 2
    assert objectives[-1] <= objectives[0] + 1e-9 * max(1.0, abs(objectives[0]))
    assert check_slot(2, allocation, channels, desk).is_feasible()


def test_sca_solve_increase_beyond_tolerance(desk: ScenarioConfig, channels: ChannelSet) -> None:
    with patch(
        "covisac.ra_solver._solve_program", side_effect=_increasing_program(1e-3)
    ), pytest.raises(InternalError, match="the objective increased"):
        sca_solve(2, channels, desk)


def test_sca_solve_strict_increase_tolerance(desk: ScenarioConfig, channels: ChannelSet) -> None:
    settings = ScaSettings(increase_tolerance=1e-9)
    with patch(
        "covisac.ra_solver._solve_program", side_effect=_increasing_program(5e-7)
    ), pytest.raises(InternalError, match="the objective increased"):
        sca_solve(2, channels, desk, settings)
