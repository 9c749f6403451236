r"""Implement the trust-region trajectory solver.

With the resources of every slot fixed, the waypoints are optimized to
minimize the propulsion energy. Each iteration solves a convex program
built around the current waypoints: the separation constraints and the
induced-velocity auxiliary are replaced by their tangent
under-estimators, the channel gains seen by the APs and the wardens are
replaced by their first-order expansion, and every interior waypoint is
kept inside a ball of radius ``omega`` around its current value. A step
is accepted when the exact propulsion energy decreases and the joint
constraints still hold; otherwise the radius is halved.
"""

from __future__ import annotations

__all__ = [
    "TrajIterate",
    "TrustRegionSettings",
    "build_p22",
    "induced_factor",
    "omega",
    "psi",
    "trust_region_solve",
]

from dataclasses import dataclass, field
import logging
import math
from typing import TYPE_CHECKING, Any

from coola.utils import str_indent, str_mapping
import cvxpy as cp
import numpy as np

from covisac.channel import (
    build_channel_set,
    channel_position_derivatives,
    offload_channel,
    warden_channel,
)
from covisac.conic import ConicProgram, ConicSettings, cubic_epigraph, inverse_square_epigraph
from covisac.errors import BuildError, InfeasibleError, InputError, SingularityError
from covisac.events import TRUST_REGION_ITERATION, EventManager, TraceRecorder
from covisac.metrics import check_p0, local_bits
from covisac.scenario import Trajectory, propulsion_energy, sample_sensing_area

if TYPE_CHECKING:
    from collections.abc import Sequence

    from covisac.channel import ChannelSet
    from covisac.metrics import ConstraintReport, ResourceAllocation
    from covisac.scenario import PropulsionParams, ScenarioConfig

logger = logging.getLogger(__name__)

_MAX_RATE_EXPONENT = 700.0


@dataclass(frozen=True)
class TrustRegionSettings:
    r"""Define the settings of the trust-region solver.

    Args:
        initial_radius: The first trust radius ``omega`` (m).
        min_radius: The loop stops once the radius falls below this
            value (m).
        max_iterations: The iteration cap.
        epsilon: An accepted step whose relative energy decrease is
            below this value ends the loop.
        residual_tolerance: The largest normalized residual of an
            acceptable trajectory.
        conic: The backend settings.
    """

    initial_radius: float = 5.0
    min_radius: float = 1e-2
    max_iterations: int = 100
    epsilon: float = 1e-7
    residual_tolerance: float = 1e-6
    conic: ConicSettings = field(default_factory=ConicSettings)

    def __post_init__(self) -> None:
        if not 0 < self.min_radius <= self.initial_radius:
            msg = (
                f"the radii have to satisfy 0 < min_radius <= initial_radius but received "
                f"{self.min_radius} and {self.initial_radius}"
            )
            raise InputError(msg)
        if self.max_iterations < 1:
            msg = f"max_iterations has to be positive but received {self.max_iterations}"
            raise InputError(msg)


def induced_factor(speed: np.ndarray, hover_velocity: float) -> np.ndarray:
    r"""Compute the induced-velocity factor of the propulsion model.

    The value is ``(1/(sqrt(1 + a^2) + a))^(1/2)`` with
    ``a = v^2/(2 v0^2)``; it is the positive root of
    ``v2^2 + v^2/v0^2 = 1/v2^2``.

    Args:
        speed: The speeds (m/s).
        hover_velocity: The mean rotor induced velocity in hover
            ``v0`` (m/s).

    Returns:
        The factors, with the shape of ``speed``.

    Example usage:

    ```pycon
    >>> import numpy as np
    >>> from covisac.traj_solver import induced_factor
    >>> induced_factor(np.array([0.0]), 4.03)
    array([1.])

    ```
    """
    a = np.asarray(speed, dtype=float) ** 2 / (2.0 * hover_velocity**2)
    return np.sqrt(1.0 / (np.sqrt(1.0 + a**2) + a))


@dataclass(frozen=True, eq=False)
class TrajIterate:
    r"""Define a point of the trust-region loop.

    ``v1`` and ``v2`` are the exact auxiliaries of the waypoints, so
    ``objective`` is the exact propulsion energy.

    Args:
        trajectory: The waypoints.
        v1: The speeds, shape ``(K, N)``.
        v2: The induced-velocity factors, shape ``(K, N)``.
        radius: The trust radius (m).
        objective: The propulsion energy (J).
        iteration: The iteration that produced the point.
    """

    trajectory: Trajectory
    v1: np.ndarray
    v2: np.ndarray
    radius: float
    objective: float
    iteration: int = 0

    def __repr__(self) -> str:
        args = str_indent(
            str_mapping(
                {
                    "iteration": self.iteration,
                    "radius": self.radius,
                    "objective": self.objective,
                    "num_uavs": self.trajectory.num_uavs,
                    "num_slots": self.trajectory.num_slots,
                }
            )
        )
        return f"{self.__class__.__qualname__}(\n  {args}\n)"

    @classmethod
    def from_trajectory(
        cls,
        trajectory: Trajectory,
        params: PropulsionParams,
        radius: float,
        iteration: int = 0,
    ) -> TrajIterate:
        r"""Build the iterate of a trajectory.

        Args:
            trajectory: The waypoints.
            params: The propulsion parameters.
            radius: The trust radius (m).
            iteration: The iteration index.

        Returns:
            The iterate.

        Raises:
            InputError: if the radius is not positive.
        """
        if not radius > 0:
            msg = f"radius has to be positive but received {radius}"
            raise InputError(msg)
        v1 = np.linalg.norm(trajectory.velocities(), axis=2)
        return cls(
            trajectory=trajectory,
            v1=v1,
            v2=induced_factor(v1, params.hover_velocity),
            radius=float(radius),
            objective=_exact_energy(trajectory, params),
            iteration=iteration,
        )

    def program_values(self) -> dict[str, np.ndarray]:
        r"""Return the values of the ``build_p22`` variables at this
        point."""
        values = {f"u{k}": self.trajectory.waypoints[k] for k in range(self.trajectory.num_uavs)}
        values |= {
            "v1": self.v1,
            "v2": self.v2,
            "cube": self.v1**3,
            "cube_aux": self.v1**2,
            "inverse": 1.0 / self.v2**2,
            "inverse_aux": 1.0 / self.v2,
        }
        return values

    def with_radius(self, radius: float) -> TrajIterate:
        r"""Return the iterate with another trust radius."""
        return TrajIterate(
            self.trajectory, self.v1, self.v2, float(radius), self.objective, self.iteration
        )


def _exact_energy(trajectory: Trajectory, params: PropulsionParams) -> float:
    return math.fsum(propulsion_energy(trajectory, params).ravel())


def psi(
    position: np.ndarray, uav: int, alloc: ResourceAllocation, scenario: ScenarioConfig
) -> tuple[float, np.ndarray]:
    r"""Compute the power received by the APs from one UAV and its
    gradient with respect to the horizontal UAV position.

    The power is ``Psi = tr(H W H^H)`` with ``W = w w^H`` and ``H`` the
    aggregate offloading channel at ``position``. The gradient is
    ``2 Re[tr(W H^H dH/dx), tr(W H^H dH/dy)]``.

    Args:
        position: The 3-D UAV position.
        uav: The UAV index, which selects the beamformer.
        alloc: The allocation of the slot.
        scenario: The scenario.

    Returns:
        The power (W) and the gradient (W/m), shape ``(2,)``.

    Raises:
        SingularityError: if the UAV sits on an AP.
    """
    position = np.asarray(position, dtype=float)
    beam = alloc.w[uav]
    channel = np.vstack(
        [
            offload_channel(
                position,
                ap,
                scenario.path_loss,
                scenario.n_receive,
                scenario.n_uav,
                scenario.spacing,
            )
            for ap in scenario.ap_positions
        ]
    )
    derivatives = [
        channel_position_derivatives(
            position,
            ap,
            scenario.path_loss,
            scenario.n_uav,
            scenario.spacing,
            link="offload",
            n_receive=scenario.n_receive,
        )
        for ap in scenario.ap_positions
    ]
    received = channel @ beam
    gradient = np.array(
        [
            2.0 * np.real(np.vdot(received, np.vstack([d[axis] for d in derivatives]) @ beam))
            for axis in (0, 1)
        ]
    )
    return float(np.sum(np.abs(received) ** 2)), gradient


def omega(
    position: np.ndarray,
    uav: int,
    warden: int,
    alloc: ResourceAllocation,
    scenario: ScenarioConfig,
) -> tuple[float, np.ndarray]:
    r"""Compute the power leaked by one UAV to one warden and its
    gradient with respect to the horizontal UAV position.

    The power is ``Omega = h^H W h`` and the gradient is
    ``2 Re[h^H W dh/dx, h^H W dh/dy]``.

    Args:
        position: The 3-D UAV position.
        uav: The UAV index.
        warden: The warden index.
        alloc: The allocation of the slot.
        scenario: The scenario.

    Returns:
        The power (W) and the gradient (W/m), shape ``(2,)``.

    Raises:
        SingularityError: if the UAV sits on the warden.
    """
    position = np.asarray(position, dtype=float)
    node = scenario.warden_positions[warden]
    beam = alloc.w[uav]
    channel = warden_channel(position, node, scenario.path_loss, scenario.n_uav, scenario.spacing)
    derivatives = channel_position_derivatives(
        position, node, scenario.path_loss, scenario.n_uav, scenario.spacing, link="warden"
    )
    leak = np.vdot(channel, beam)
    gradient = np.array([2.0 * np.real(leak.conj() * np.vdot(d, beam)) for d in derivatives])
    return float(abs(leak) ** 2), gradient


def _separation(
    position: cp.Expression, anchor: np.ndarray, node: np.ndarray, vertical: float, d_min: float
) -> cp.Expression:
    r"""Return the tangent under-estimator of
    ``(||position - node||^2 + vertical^2) / d_min^2 - 1`` at ``anchor``.

    ``position`` and ``anchor`` hold one horizontal point per row."""
    node = np.broadcast_to(node, anchor.shape)
    offset = anchor - node
    value = (
        2.0 * cp.sum(cp.multiply(offset, position - node), axis=1)
        - np.sum(offset**2, axis=1)
        + vertical**2
    )
    return value / d_min**2 - 1.0


def _quadratic_power(cov: np.ndarray, gain: np.ndarray) -> float:
    return float(np.real(np.trace(gain @ cov @ gain.conj().T)))


def build_p22(
    iterate: TrajIterate,
    allocations: Sequence[ResourceAllocation],
    channels: ChannelSet,
    scenario: ScenarioConfig,
    target_samples: np.ndarray,
    power_cone: bool = False,
) -> ConicProgram:
    r"""Build the convex trajectory program around an iterate.

    Slot ``n`` uses waypoint ``n``, so slot 0 depends only on the fixed
    start point and contributes no constraint. Powers are divided by
    the noise powers and every linearized family is scaled to unit
    magnitude.

    Args:
        iterate: The expansion point.
        allocations: The allocation of every slot.
        channels: The channels along the iterate trajectory; only
            the sensing and jamming channels are used.
        scenario: The scenario.
        target_samples: The target positions, shape ``(Q, 3)``.
        power_cone: If ``True``, the cubic term uses the power cone.

    Returns:
        The program, with variables ``u<k>`` (waypoints of UAV ``k``),
            ``v1``, ``v2`` and their epigraph auxiliaries.

    Raises:
        BuildError: if the shapes do not match the scenario or if a
            rate target is undefined.
    """
    waypoints = iterate.trajectory.waypoints
    num_uavs, num_slots = scenario.num_uavs, scenario.num_slots
    if waypoints.shape != (num_uavs, num_slots + 1, 2):
        msg = f"iterate shape {waypoints.shape} does not match the scenario ({num_uavs}, {num_slots + 1}, 2)"
        raise BuildError(msg)
    if len(allocations) != num_slots or channels.num_slots != num_slots:
        msg = f"expected {num_slots} allocations and slots of channels"
        raise BuildError(msg)
    delta = scenario.slot_duration
    params = scenario.propulsion
    heights = scenario.uav_altitudes
    program = ConicProgram("p22")
    u = [program.variable(f"u{k}", (num_slots + 1, 2)) for k in range(num_uavs)]
    v1 = program.variable("v1", (num_uavs, num_slots), nonneg=True)
    v2 = program.variable("v2", (num_uavs, num_slots), nonneg=True)
    cube = program.variable("cube", (num_uavs, num_slots))
    cube_aux = program.variable("cube_aux", (num_uavs, num_slots))
    inverse = program.variable("inverse", (num_uavs, num_slots))
    inverse_aux = program.variable("inverse_aux", (num_uavs, num_slots))

    program.add(
        "endpoint",
        "zero",
        [u[k][0] == scenario.uav_start[k] for k in range(num_uavs)]
        + [u[k][num_slots] == scenario.uav_end[k] for k in range(num_uavs)],
    )
    steps = [u[k][1:] - u[k][:-1] for k in range(num_uavs)]
    anchor_steps = np.diff(waypoints, axis=1)
    reach = scenario.v_max * delta
    program.add("speed", "soc", [cp.norm(steps[k], 2, axis=1) <= reach for k in range(num_uavs)])
    program.add(
        "propulsion_speed",
        "soc",
        [cp.norm(steps[k], 2, axis=1) <= delta * v1[k] for k in range(num_uavs)],
    )
    program.add(
        "propulsion_cube",
        "pow" if power_cone else "rsoc",
        cubic_epigraph(v1, cube, cube_aux, power_cone),
    )
    scale = 1.0 / (params.hover_velocity * delta) ** 2
    induced = []
    for k in range(num_uavs):
        tangent = (
            iterate.v2[k] ** 2
            + 2.0 * cp.multiply(iterate.v2[k], v2[k] - iterate.v2[k])
            + scale
            * (
                np.sum(anchor_steps[k] ** 2, axis=1)
                + 2.0 * cp.sum(cp.multiply(anchor_steps[k], steps[k] - anchor_steps[k]), axis=1)
            )
        )
        induced.append(tangent >= inverse[k])
    program.add("induced_velocity", "nonneg", induced)
    program.add("induced_velocity", "rsoc", inverse_square_epigraph(inverse, v2, inverse_aux))

    if num_slots > 1:
        _add_separation(program, u, waypoints, scenario, target_samples, heights)
        program.add(
            "trust_region",
            "soc",
            [
                cp.norm(u[k][1:-1] - waypoints[k, 1:-1], 2, axis=1) <= iterate.radius
                for k in range(num_uavs)
            ],
        )
        _add_signal_constraints(program, u, iterate, allocations, channels, scenario)

    program.minimize(
        delta
        * (
            params.blade_power * num_uavs * num_slots
            + 3.0 * params.blade_power / params.tip_speed**2 * cp.sum_squares(v1)
            + params.parasite_coefficient * cp.sum(cube)
            + params.induced_power * cp.sum(v2)
        )
    )
    logger.debug(f"Built {program}")
    return program


def _add_separation(
    program: ConicProgram,
    u: list[cp.Variable],
    waypoints: np.ndarray,
    scenario: ScenarioConfig,
    target_samples: np.ndarray,
    heights: np.ndarray,
) -> None:
    num_uavs = scenario.num_uavs
    d_min = scenario.d_min
    origin = np.zeros(2)
    pairs = [
        _separation(
            u[k][1:-1] - u[i][1:-1],
            waypoints[k, 1:-1] - waypoints[i, 1:-1],
            origin,
            heights[k] - heights[i],
            d_min,
        )
        >= 0
        for k in range(num_uavs)
        for i in range(k + 1, num_uavs)
    ]
    if pairs:
        program.add("uav_uav", "nonneg", pairs)
    for family, nodes in (
        ("uav_warden", scenario.warden_positions),
        ("uav_target", np.asarray(target_samples).reshape(-1, 3)),
    ):
        constraints = [
            _separation(u[k][1:-1], waypoints[k, 1:-1], node[:2], heights[k] - node[2], d_min) >= 0
            for k in range(num_uavs)
            for node in nodes
        ]
        if constraints:
            program.add(family, "nonneg", constraints)


def _add_signal_constraints(
    program: ConicProgram,
    u: list[cp.Variable],
    iterate: TrajIterate,
    allocations: Sequence[ResourceAllocation],
    channels: ChannelSet,
    scenario: ScenarioConfig,
) -> None:
    r"""Add the linearized sensing, offloading and covertness
    constraints of slots ``1..N-1``."""
    waypoints = iterate.trajectory.waypoints
    num_uavs, num_slots = scenario.num_uavs, scenario.num_slots
    delta = scenario.slot_duration
    n_rx = channels.receive_dim
    gamma = scenario.gamma_min
    ln2 = math.log(2.0)
    sensing, offloading, covert = [], [], []
    for n in range(1, num_slots):
        alloc = allocations[n]
        received = []
        leaks = [[] for _ in range(scenario.num_wardens)]
        for k in range(num_uavs):
            position = np.append(waypoints[k, n], scenario.uav_altitudes[k])
            shift = u[k][n] - waypoints[k, n]
            value, gradient = psi(position, k, alloc, scenario)
            received.append((value + shift @ gradient) / scenario.noise_radar)
            for warden in range(scenario.num_wardens):
                value, gradient = omega(position, k, warden, alloc, scenario)
                leaks[warden].append((value + shift @ gradient) / scenario.noise_warden)
        total = cp.sum(cp.hstack(received))
        for q in range(channels.sensing.shape[0]):
            gain = channels.sensing[q]
            s0 = alloc.t0 * _quadratic_power(alloc.r0, gain) / scenario.noise_radar
            s1 = alloc.t1 * _quadratic_power(alloc.r1, gain) / scenario.noise_radar
            margin = (s0 + s1) / delta - n_rx * gamma - (gamma - s0 / (n_rx * delta)) * total
            sensing.append(margin / n_rx >= 0)
        for k in range(num_uavs):
            needed = scenario.task_bits[n, k] - local_bits(k, alloc, scenario)
            if needed <= 0:
                continue
            if alloc.t1 <= 0:
                msg = f"slot {n}: UAV {k} has {needed:.6e} bits left but no offloading time"
                raise BuildError(msg)
            exponent = needed / (alloc.t1 * scenario.bandwidth) * ln2
            if exponent > _MAX_RATE_EXPONENT:
                msg = f"slot {n}: the SINR target of UAV {k} is not finite (exponent={exponent:.3e})"
                raise BuildError(msg)
            rate = math.expm1(exponent)
            others = [received[i] for i in range(num_uavs) if i != k]
            for q in range(channels.sensing.shape[0]):
                base = _quadratic_power(alloc.r1, channels.sensing[q]) / scenario.noise_radar + n_rx
                interference = cp.sum(cp.hstack(others)) / base if others else 0.0
                offloading.append(received[k] / (rate * base) - interference - 1.0 >= 0)
        for warden in range(scenario.num_wardens):
            jam = channels.jamming[warden]
            j0 = float(np.real(np.vdot(jam, alloc.r0 @ jam))) / scenario.noise_warden
            j1 = float(np.real(np.vdot(jam, alloc.r1 @ jam))) / scenario.noise_warden
            excess = (cp.sum(cp.hstack(leaks[warden])) + j1 - j0) / (j0 + 1.0)
            covert.append(excess <= scenario.mu_max)
    program.add("sensing", "nonneg", sensing)
    if offloading:
        program.add("offload_rate", "nonneg", offloading)
    if covert:
        program.add("covert", "nonneg", covert)


def _check_joint(
    trajectory: Trajectory,
    allocations: Sequence[ResourceAllocation],
    scenario: ScenarioConfig,
    target_samples: np.ndarray,
) -> tuple[ConstraintReport, ChannelSet]:
    channels = build_channel_set(scenario, trajectory, target_samples)
    return check_p0(allocations, trajectory, channels, scenario), channels


def trust_region_solve(
    initial: Trajectory,
    allocations: Sequence[ResourceAllocation],
    scenario: ScenarioConfig,
    settings: TrustRegionSettings | None = None,
    event_manager: EventManager | None = None,
    target_samples: np.ndarray | None = None,
) -> tuple[Trajectory, tuple[dict[str, Any], ...]]:
    r"""Minimize the propulsion energy with the resources fixed.

    Args:
        initial: The starting trajectory. It has to satisfy the joint
            constraints with ``allocations``.
        allocations: The allocation of every slot.
        scenario: The scenario.
        settings: The trust-region settings.
        event_manager: Receives the ``trust_region_iteration``
            records.
        target_samples: The target positions. By default, the
            sensing area is sampled with ``scenario.num_samples``
            points.

    Returns:
        The trajectory and the iteration records (``iteration``,
            ``radius_m``, ``objective_J``, ``candidate_J``,
            ``max_residual`` and ``accepted``). ``objective_J`` is the
            energy of the current point after the iteration.

    Raises:
        InfeasibleError: if the initial trajectory violates the joint
            constraints.
        BuildError: if a program cannot be assembled.
        SolverError: if the backend fails.
    """
    settings = settings or TrustRegionSettings()
    event_manager = event_manager or EventManager()
    if target_samples is None:
        target_samples = sample_sensing_area(scenario.sensing_box, scenario.num_samples)
    recorder = TraceRecorder()
    report, channels = _check_joint(initial, allocations, scenario, target_samples)
    if not report.is_feasible(settings.residual_tolerance):
        families = sorted({r.family for r in report.violations(settings.residual_tolerance)})
        msg = (
            f"the initial trajectory violates the joint constraints "
            f"(max residual={report.max_residual:.3e})"
        )
        raise InfeasibleError(msg, families=families)
    point = TrajIterate.from_trajectory(initial, scenario.propulsion, settings.initial_radius)

    def emit(iteration: int, candidate: float, residual: float, accepted: bool) -> None:
        record = {
            "iteration": iteration,
            "radius_m": point.radius,
            "objective_J": point.objective,
            "candidate_J": candidate,
            "max_residual": residual,
            "accepted": accepted,
        }
        recorder.handle(record)
        event_manager.trigger_event(TRUST_REGION_ITERATION, record)

    emit(0, point.objective, report.max_residual, True)
    for iteration in range(1, settings.max_iterations + 1):
        if point.radius < settings.min_radius:
            break
        program = build_p22(
            point, allocations, channels, scenario, target_samples, settings.conic.power_cone
        )
        solution = program.solve(settings.conic)
        candidate_energy, residual, accepted = math.nan, math.nan, False
        if not solution.usable:
            logger.warning(
                f"trust-region iteration {iteration}: the subproblem is {solution.status}, "
                f"shrinking the radius to {point.radius / 2:.3e} m"
            )
        else:
            waypoints = np.stack([solution[f"u{k}"] for k in range(scenario.num_uavs)])
            waypoints[:, 0] = scenario.uav_start
            waypoints[:, -1] = scenario.uav_end
            candidate = Trajectory(waypoints, scenario.slot_duration)
            candidate_energy = _exact_energy(candidate, scenario.propulsion)
            if candidate_energy < point.objective:
                try:
                    report, candidate_channels = _check_joint(
                        candidate, allocations, scenario, target_samples
                    )
                except SingularityError as exc:
                    logger.debug(f"trust-region iteration {iteration}: {exc}")
                else:
                    residual = report.max_residual
                    accepted = report.is_feasible(settings.residual_tolerance)
        if accepted:
            decrease = (point.objective - candidate_energy) / max(abs(point.objective), 1e-12)
            point = TrajIterate.from_trajectory(
                candidate, scenario.propulsion, point.radius, iteration
            )
            channels = candidate_channels
            emit(iteration, candidate_energy, residual, True)
            logger.debug(
                f"trust-region iteration {iteration}: accepted (energy={point.objective:.6e} J, "
                f"radius={point.radius:.3e} m)"
            )
            if decrease < settings.epsilon:
                break
        else:
            point = point.with_radius(point.radius / 2)
            emit(iteration, candidate_energy, residual, False)
            logger.debug(
                f"trust-region iteration {iteration}: rejected, radius={point.radius:.3e} m"
            )
    logger.info(
        f"Trajectory step finished after {len(recorder) - 1} iterations "
        f"(propulsion energy={point.objective:.6e} J)"
    )
    return point.trajectory, recorder.records
