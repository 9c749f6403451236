r"""Implement the alternating optimization loop, the benchmark designs
and the parameter sweeps.

Each round solves the resource allocation of every slot on the
channels of the current trajectory, then improves the trajectory with
those resources fixed. Both steps start from the previous solution, so
the total energy never increases across rounds.
"""

from __future__ import annotations

__all__ = [
    "SWEEP_PARAMETERS",
    "AoSettings",
    "Design",
    "SolveReport",
    "SweepRow",
    "alternate",
    "benchmark_fixed_time",
    "benchmark_full_offloading",
    "benchmark_power_allocation",
    "benchmark_straight_flight",
    "solve_design",
    "sweep",
]

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import enum
import logging
import math
import time
from typing import TYPE_CHECKING, Any

from coola import objects_are_equal
from coola.utils import str_indent, str_mapping
import numpy as np

from covisac.channel import build_channel_set
from covisac.errors import InfeasibleError, InputError, InternalError
from covisac.events import AO_ROUND, EventManager, TraceRecorder
from covisac.metrics import (
    check_p0,
    edge_bits,
    energy_breakdown,
    offloading_ratio,
    phase_ratio,
)
from covisac.ra_solver import AllocationRestriction, ScaSettings, solve_slots
from covisac.scenario import (
    repair_spacing,
    sample_sensing_area,
    scenario_to_mapping,
    straight_trajectory,
)
from covisac.traj_solver import TrustRegionSettings, trust_region_solve

if TYPE_CHECKING:
    from collections.abc import Sequence

    from covisac.metrics import EnergyBreakdown, ResourceAllocation
    from covisac.scenario import ScenarioConfig, Trajectory

logger = logging.getLogger(__name__)

SWEEP_PARAMETERS = ("p_uav_max", "gamma_min", "task_bits", "kappa_edge")


class Design(str, enum.Enum):
    r"""Define the solution designs."""

    PROPOSED = "proposed"
    STRAIGHT = "straight"
    POWER = "power"
    FIXED_TIME = "fixed-time"
    FULL_OFFLOAD = "full-offload"


@dataclass(frozen=True)
class AoSettings:
    r"""Define the settings of the alternating optimization.

    Args:
        epsilon: The loop stops when the relative change of the total
            energy between two rounds is below this value.
        max_rounds: The round cap.
        jobs: The number of worker threads.
        fixed_time_ratio: The phase ratio ``t0/t1`` of the fixed-time
            design.
        power_budget_factor: The AP power budget multiplier used when
            the power-allocation design is infeasible.
        sca: The resource allocation settings.
        trust_region: The trajectory settings.
    """

    epsilon: float = 1e-3
    max_rounds: int = 10
    jobs: int = 1
    fixed_time_ratio: float = 4.0
    power_budget_factor: float = 3.0
    sca: ScaSettings = field(default_factory=ScaSettings)
    trust_region: TrustRegionSettings = field(default_factory=TrustRegionSettings)

    def __post_init__(self) -> None:
        if self.max_rounds < 1 or self.jobs < 1:
            msg = (
                "max_rounds and jobs have to be positive but received "
                f"{self.max_rounds} and {self.jobs}"
            )
            raise InputError(msg)
        if not self.epsilon > 0:
            msg = f"epsilon has to be positive but received {self.epsilon}"
            raise InputError(msg)

    def with_backend(self, solver: str) -> AoSettings:
        r"""Return the settings with another conic backend in both
        solvers."""
        return replace(
            self,
            sca=replace(self.sca, conic=replace(self.sca.conic, solver=solver)),
            trust_region=replace(
                self.trust_region, conic=replace(self.trust_region.conic, solver=solver)
            ),
        )


@dataclass(frozen=True, eq=False)
class SolveReport:
    r"""Define the outcome of one design on one scenario.

    Args:
        design: The design name.
        scenario: The scenario actually solved (the power-allocation
            design may raise the AP budget).
        trajectory: The final trajectory.
        allocations: The allocation of every slot.
        energy: The energy breakdown, recomputed from the decision
            variables.
        rounds: One record per round.
        sca_trace: The resource allocation records, tagged with their
            round.
        trajectory_trace: The trust-region records, tagged with their
            round.
        timings: The wall-clock times (s). They are not part of the
            equality.
    """

    design: str
    scenario: ScenarioConfig
    trajectory: Trajectory
    allocations: tuple[ResourceAllocation, ...]
    energy: EnergyBreakdown
    rounds: tuple[dict[str, Any], ...]
    sca_trace: tuple[dict[str, Any], ...] = ()
    trajectory_trace: tuple[dict[str, Any], ...] = ()
    timings: dict[str, float] = field(default_factory=dict)

    def __eq__(self, other: object) -> bool:
        return self.equal(other)

    __hash__ = object.__hash__

    def __repr__(self) -> str:
        args = str_indent(
            str_mapping(
                {
                    "design": self.design,
                    "rounds": len(self.rounds),
                    "total_energy_J": self.total_energy,
                    "offloading_ratio": self.offloading_ratio,
                }
            )
        )
        return f"{self.__class__.__qualname__}(\n  {args}\n)"

    @property
    def total_energy(self) -> float:
        r"""The total energy (J)."""
        return self.energy.total

    @property
    def offloading_ratio(self) -> float:
        r"""The share of the task bits computed at the MEC server."""
        return offloading_ratio(self.allocations, self.scenario)

    @property
    def phase_ratio(self) -> float:
        r"""The phase duration ratio ``sum t0 / sum t1``."""
        return phase_ratio(self.allocations)

    @property
    def offloaded_bits(self) -> float:
        r"""The bits computed at the MEC server."""
        return math.fsum(
            edge_bits(k, alloc, self.scenario)
            for alloc in self.allocations
            for k in range(self.scenario.num_uavs)
        )

    def equal(self, other: Any) -> bool:
        if not isinstance(other, SolveReport):
            return False
        return objects_are_equal(self.to_dict(), other.to_dict(), equal_nan=True)

    def to_dict(self) -> dict[str, Any]:
        r"""Return the report as plain Python values, without the
        timings."""
        return {
            "design": self.design,
            "scenario": scenario_to_mapping(self.scenario),
            "waypoints": self.trajectory.waypoints.tolist(),
            "allocations": [alloc.to_dict() for alloc in self.allocations],
            "energy": self.energy.to_record(),
            "offloading_ratio": self.offloading_ratio,
            "phase_ratio": self.phase_ratio,
            "rounds": [dict(record) for record in self.rounds],
        }


def _tag(records: Sequence[dict[str, Any]], round_index: int) -> list[dict[str, Any]]:
    return [{"round": round_index} | dict(record) for record in records]


def alternate(
    scenario: ScenarioConfig,
    settings: AoSettings | None = None,
    restriction: AllocationRestriction | None = None,
    optimize_trajectory: bool = True,
    design: Design | str = Design.PROPOSED,
    event_manager: EventManager | None = None,
) -> SolveReport:
    r"""Minimize the total energy by alternating between the resources
    and the trajectory.

    The loop starts from the straight flight, with the waypoints pushed
    apart where they violate a separation constraint.

    Args:
        scenario: The scenario.
        settings: The settings.
        restriction: The pinned resource degrees of freedom.
        optimize_trajectory: If ``False``, the trajectory stays the
            starting one and a single round runs.
        design: The design name written in the report.
        event_manager: Receives the ``ao_round`` records and the
            records of both solvers.

    Returns:
        The report.

    Raises:
        InfeasibleError: if a slot has no feasible allocation.
        SolverError: if a subproblem cannot be solved.
        InternalError: if the final solution violates the joint
            constraints.
    """
    settings = settings or AoSettings()
    event_manager = event_manager or EventManager()
    return _alternate(
        scenario, settings, restriction, optimize_trajectory, Design(design), event_manager
    )


def _alternate(
    scenario: ScenarioConfig,
    settings: AoSettings,
    restriction: AllocationRestriction | None,
    optimize_trajectory: bool,
    design: Design,
    event_manager: EventManager,
) -> SolveReport:
    start = time.perf_counter()
    recorder = TraceRecorder()
    timings = {"resource_s": 0.0, "trajectory_s": 0.0}
    samples = sample_sensing_area(scenario.sensing_box, scenario.num_samples)
    trajectory = repair_spacing(straight_trajectory(scenario), scenario, samples)
    allocations: list[ResourceAllocation] | None = None
    sca_trace: list[dict[str, Any]] = []
    trajectory_trace: list[dict[str, Any]] = []
    previous = math.inf
    best = None
    for round_index in range(1, settings.max_rounds + 1):
        tic = time.perf_counter()
        channels = build_channel_set(scenario, trajectory, samples)
        allocations, records = solve_slots(
            channels,
            scenario,
            settings.sca,
            restriction,
            previous=allocations,
            jobs=settings.jobs,
            event_manager=event_manager,
        )
        sca_trace.extend(_tag(records, round_index))
        timings["resource_s"] += time.perf_counter() - tic
        if optimize_trajectory:
            tic = time.perf_counter()
            trajectory, records = trust_region_solve(
                trajectory, allocations, scenario, settings.trust_region, event_manager, samples
            )
            trajectory_trace.extend(_tag(records, round_index))
            timings["trajectory_s"] += time.perf_counter() - tic
        energy = energy_breakdown(allocations, trajectory, scenario)
        total = energy.total
        change = (previous - total) / abs(total) if math.isfinite(previous) else math.nan
        if math.isfinite(previous) and total > previous * (1.0 + 1e-6):
            logger.warning(
                f"AO round {round_index}: the energy increased from {previous:.9e} to "
                f"{total:.9e} J, keeping the previous round"
            )
            break
        best = (trajectory, tuple(allocations), energy)
        record = {
            "round": round_index,
            "total_energy_J": total,
            "resource_energy_J": energy.resource_total,
            "propulsion_energy_J": energy.component_total("propulsion"),
            "relative_change": change,
        }
        recorder.handle(record)
        event_manager.trigger_event(AO_ROUND, record)
        logger.info(f"AO round {round_index}: total energy={total:.6e} J")
        if not optimize_trajectory or (math.isfinite(change) and change < settings.epsilon):
            break
        previous = total
    trajectory, allocations, energy = best
    channels = build_channel_set(scenario, trajectory, samples)
    report = check_p0(allocations, trajectory, channels, scenario)
    if not report.is_feasible(settings.sca.residual_tolerance):
        worst = max(report.violations(settings.sca.residual_tolerance), key=lambda r: r.value)
        msg = f"the final solution violates the joint constraints ({worst})"
        raise InternalError(msg)
    timings["total_s"] = time.perf_counter() - start
    logger.info(
        f"{design.value}: {len(recorder)} rounds, total energy={energy.total:.6e} J "
        f"in {timings['total_s']:.2f}s"
    )
    return SolveReport(
        design=design.value,
        scenario=scenario,
        trajectory=trajectory,
        allocations=allocations,
        energy=energy,
        rounds=recorder.records,
        sca_trace=tuple(sca_trace),
        trajectory_trace=tuple(trajectory_trace),
        timings=timings,
    )


def benchmark_straight_flight(
    scenario: ScenarioConfig,
    settings: AoSettings | None = None,
    event_manager: EventManager | None = None,
) -> SolveReport:
    r"""Solve the resources along the uniform-speed straight flight."""
    return alternate(
        scenario,
        settings,
        optimize_trajectory=False,
        design=Design.STRAIGHT,
        event_manager=event_manager,
    )


def benchmark_power_allocation(
    scenario: ScenarioConfig,
    settings: AoSettings | None = None,
    event_manager: EventManager | None = None,
) -> SolveReport:
    r"""Solve with fixed beam directions.

    The UAV beams are matched to their strongest AP and the sensing
    covariances are isotropic; only the powers, the durations, the
    CPU frequencies and the trajectory are optimized. When the
    scenario is infeasible under this design, the AP power budget is
    multiplied by ``settings.power_budget_factor`` and the solve is
    retried once.

    Args:
        scenario: The scenario.
        settings: The settings.
        event_manager: Receives the solver records.

    Returns:
        The report. Its scenario carries the AP budget actually used.

    Raises:
        InfeasibleError: if the design is infeasible with the raised
            budget too.
    """
    settings = settings or AoSettings()
    restriction = AllocationRestriction(fixed_beams=True)
    try:
        return alternate(
            scenario, settings, restriction, design=Design.POWER, event_manager=event_manager
        )
    except InfeasibleError as exc:
        budget = scenario.p_ap_max * settings.power_budget_factor
        logger.info(f"Power allocation is infeasible ({exc}), raising the AP budget to {budget} W")
    return alternate(
        scenario.replace(p_ap_max=budget),
        settings,
        restriction,
        design=Design.POWER,
        event_manager=event_manager,
    )


def benchmark_fixed_time(
    scenario: ScenarioConfig,
    settings: AoSettings | None = None,
    event_manager: EventManager | None = None,
) -> SolveReport:
    r"""Solve with the phase durations pinned to ``t0 = eta t1`` in
    every slot, ``eta = settings.fixed_time_ratio``."""
    settings = settings or AoSettings()
    return alternate(
        scenario,
        settings,
        AllocationRestriction(time_ratio=settings.fixed_time_ratio),
        design=Design.FIXED_TIME,
        event_manager=event_manager,
    )


def benchmark_full_offloading(
    scenario: ScenarioConfig,
    settings: AoSettings | None = None,
    event_manager: EventManager | None = None,
) -> SolveReport:
    r"""Solve with every task computed at the MEC server."""
    return alternate(
        scenario,
        settings,
        AllocationRestriction(full_offload=True),
        design=Design.FULL_OFFLOAD,
        event_manager=event_manager,
    )


_BENCHMARKS = {
    Design.STRAIGHT: benchmark_straight_flight,
    Design.POWER: benchmark_power_allocation,
    Design.FIXED_TIME: benchmark_fixed_time,
    Design.FULL_OFFLOAD: benchmark_full_offloading,
}


def solve_design(
    scenario: ScenarioConfig,
    design: Design | str = Design.PROPOSED,
    settings: AoSettings | None = None,
    event_manager: EventManager | None = None,
) -> SolveReport:
    r"""Solve a scenario with one design.

    Args:
        scenario: The scenario.
        design: The design, by member or by name.
        settings: The settings.
        event_manager: Receives the solver records.

    Returns:
        The report.

    Raises:
        InputError: if the design name is unknown.

    Example usage:

    ```pycon
    >>> from covisac.ao_driver import Design
    >>> Design("fixed-time")
    <Design.FIXED_TIME: 'fixed-time'>

    ```
    """
    try:
        design = Design(design)
    except ValueError as exc:
        names = ", ".join(d.value for d in Design)
        msg = f"unknown design {design!r} (expected one of {names})"
        raise InputError(msg) from exc
    if design is Design.PROPOSED:
        return alternate(scenario, settings, design=design, event_manager=event_manager)
    return _BENCHMARKS[design](scenario, settings, event_manager)


@dataclass(frozen=True)
class SweepRow:
    r"""Define one point of a parameter sweep.

    Args:
        parameter: The swept scenario field.
        value: The parameter value.
        total_energy_J: The total energy.
        offloaded_Mbit: The bits computed at the MEC server.
        offloading_ratio: The share of the task bits computed at the
            MEC server.
        phase_ratio: The phase duration ratio ``sum t0 / sum t1``.
        components: The energy totals by component.
    """

    parameter: str
    value: float
    total_energy_J: float
    offloaded_Mbit: float
    offloading_ratio: float
    phase_ratio: float
    components: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_report(cls, parameter: str, value: float, report: SolveReport) -> SweepRow:
        record = report.energy.to_record()
        return cls(
            parameter=parameter,
            value=float(value),
            total_energy_J=record.pop("total_energy_J"),
            offloaded_Mbit=report.offloaded_bits / 1e6,
            offloading_ratio=report.offloading_ratio,
            phase_ratio=report.phase_ratio,
            components=record,
        )

    def to_record(self) -> dict[str, Any]:
        r"""Return the row as a flat record with unit-suffixed keys."""
        return {
            "parameter": self.parameter,
            "value": self.value,
            "total_energy_J": self.total_energy_J,
            "offloaded_Mbit": self.offloaded_Mbit,
            "offloading_ratio": self.offloading_ratio,
            "phase_ratio": self.phase_ratio,
        } | self.components


def sweep(
    scenario: ScenarioConfig,
    parameter: str,
    values: Sequence[float],
    settings: AoSettings | None = None,
    design: Design | str = Design.PROPOSED,
    event_manager: EventManager | None = None,
) -> list[tuple[SweepRow, SolveReport]]:
    r"""Solve a scenario for several values of one parameter.

    The points run in parallel, ``settings.jobs`` at a time; each
    point solves its slots sequentially. The rows follow the order of
    ``values``.

    Args:
        scenario: The base scenario.
        parameter: One of ``p_uav_max``, ``gamma_min``, ``task_bits``
            (same size for every task) and ``kappa_edge``.
        values: The parameter values.
        settings: The settings.
        design: The design.
        event_manager: Shared by every point, so the records of
            parallel points interleave.

    Returns:
        The row and the report of every value.

    Raises:
        InputError: if the parameter is not supported or no value is
            given.
    """
    settings = settings or AoSettings()
    if parameter not in SWEEP_PARAMETERS:
        msg = f"unsupported sweep parameter {parameter!r} (expected one of {SWEEP_PARAMETERS})"
        raise InputError(msg)
    if len(values) == 0:
        msg = "the sweep needs at least one value"
        raise InputError(msg)
    point_settings = replace(settings, jobs=1)

    def run(value: float) -> tuple[SweepRow, SolveReport]:
        report = solve_design(
            scenario.replace(**{parameter: float(value)}), design, point_settings, event_manager
        )
        return SweepRow.from_report(parameter, value, report), report

    with ThreadPoolExecutor(max_workers=min(settings.jobs, len(values))) as executor:
        results = list(executor.map(run, values))
    energies = np.array([row.total_energy_J for row, _ in results])
    logger.info(
        f"Swept {parameter} over {len(values)} values "
        f"(energy from {energies.min():.6e} to {energies.max():.6e} J)"
    )
    return results
