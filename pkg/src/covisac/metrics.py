r"""Implement the performance metrics and the constraint residuals.

All functions work in SI units. Residuals are normalized by the
magnitude of the constraint right-hand side (for instance the task
size for bit constraints, or ``Gamma_min`` for the sensing constraint),
so one tolerance applies to every constraint family.
"""

from __future__ import annotations

__all__ = [
    "RESIDUAL_TOLERANCE",
    "ConstraintReport",
    "EnergyBreakdown",
    "ResourceAllocation",
    "Residual",
    "check_p0",
    "check_slot",
    "comm_sinr",
    "compute_energies",
    "edge_bits",
    "energy_breakdown",
    "local_bits",
    "offloaded_bits",
    "offloading_ratio",
    "phase_ratio",
    "radar_sinr_expected",
    "trajectory_residuals",
    "transmit_sensing_energies",
]

from dataclasses import dataclass
import itertools
import logging
import math
from typing import TYPE_CHECKING, Any

from coola import objects_are_equal
from coola.utils import str_indent, str_mapping
import numpy as np
import pandas as pd

from covisac import covert
from covisac.errors import InputError
from covisac.scenario import propulsion_energy, sample_sensing_area

if TYPE_CHECKING:
    from collections.abc import Sequence

    from covisac.channel import ChannelSet
    from covisac.scenario import ScenarioConfig, Trajectory

logger = logging.getLogger(__name__)

RESIDUAL_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class ResourceAllocation:
    r"""Define the decision variables of one slot.

    Args:
        w: The UAV beamformers, shape ``(K, N_U)`` (sqrt(W)).
        r0: The sensing covariance of the computing-sensing phase,
            shape ``(M N_T, M N_T)`` (W).
        r1: The sensing covariance of the offloading-sensing phase,
            shape ``(M N_T, M N_T)`` (W).
        f_local: The UAV CPU frequencies, shape ``(K,)`` (cycles/s).
        f_edge: The MEC CPU frequencies given to each UAV, shape
            ``(K,)`` (cycles/s).
        t0: The computing-sensing phase duration (s).
        t1: The offloading-sensing phase duration (s).
    """

    w: np.ndarray
    r0: np.ndarray
    r1: np.ndarray
    f_local: np.ndarray
    f_edge: np.ndarray
    t0: float
    t1: float

    def __post_init__(self) -> None:
        w = np.atleast_2d(np.asarray(self.w, dtype=complex))
        r0 = np.asarray(self.r0, dtype=complex)
        r1 = np.asarray(self.r1, dtype=complex)
        f_local = np.atleast_1d(np.asarray(self.f_local, dtype=float))
        f_edge = np.atleast_1d(np.asarray(self.f_edge, dtype=float))
        num_uavs = w.shape[0]
        if r0.ndim != 2 or r0.shape[0] != r0.shape[1] or r1.shape != r0.shape:
            msg = f"r0 and r1 have to be square with the same shape, received {r0.shape} and {r1.shape}"
            raise InputError(msg)
        if f_local.shape != (num_uavs,) or f_edge.shape != (num_uavs,):
            msg = f"f_local and f_edge need one value per UAV ({num_uavs})"
            raise InputError(msg)
        arrays = {"w": w, "r0": r0, "r1": r1, "f_local": f_local, "f_edge": f_edge}
        for name, value in arrays.items():
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "t1", float(self.t1))

    def __eq__(self, other: object) -> bool:
        return self.equal(other)

    __hash__ = object.__hash__

    def __repr__(self) -> str:
        args = str_indent(
            str_mapping(
                {
                    "uav_power": np.sum(np.abs(self.w) ** 2, axis=1).tolist(),
                    "ap_power": (float(np.trace(self.r0).real), float(np.trace(self.r1).real)),
                    "f_local": self.f_local.tolist(),
                    "f_edge": self.f_edge.tolist(),
                    "t0": self.t0,
                    "t1": self.t1,
                }
            )
        )
        return f"{self.__class__.__qualname__}(\n  {args}\n)"

    def equal(self, other: Any) -> bool:
        if not isinstance(other, ResourceAllocation):
            return False
        return objects_are_equal(self.to_dict(), other.to_dict())

    def to_dict(self) -> dict[str, Any]:
        r"""Convert the allocation to plain Python values.

        Complex arrays are written as ``[real, imag]`` pairs of nested
        lists.
        """
        return {
            "w": [self.w.real.tolist(), self.w.imag.tolist()],
            "r0": [self.r0.real.tolist(), self.r0.imag.tolist()],
            "r1": [self.r1.real.tolist(), self.r1.imag.tolist()],
            "f_local": self.f_local.tolist(),
            "f_edge": self.f_edge.tolist(),
            "t0": self.t0,
            "t1": self.t1,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ResourceAllocation:
        r"""Build an allocation from the output of ``to_dict``."""

        def unpack(pair: list) -> np.ndarray:
            return np.asarray(pair[0], dtype=float) + 1j * np.asarray(pair[1], dtype=float)

        return cls(
            w=unpack(data["w"]),
            r0=unpack(data["r0"]),
            r1=unpack(data["r1"]),
            f_local=data["f_local"],
            f_edge=data["f_edge"],
            t0=data["t0"],
            t1=data["t1"],
        )


def _signal_powers(slot: int, alloc: ResourceAllocation, channels: ChannelSet) -> np.ndarray:
    r"""Return ``||H_k w_k||^2`` for every UAV, shape ``(K,)``."""
    return np.array(
        [
            np.sum(np.abs(channels.offload[slot, k] @ alloc.w[k]) ** 2)
            for k in range(alloc.w.shape[0])
        ]
    )


def _sensing_power(sample: int, cov: np.ndarray, channels: ChannelSet) -> float:
    gain = channels.sensing[sample]
    return float(np.real(np.trace(gain @ cov @ gain.conj().T)))


def _receiver_noise(channels: ChannelSet) -> float:
    return channels.receive_dim * channels.noise_radar


def comm_sinr(
    uav: int, slot: int, alloc: ResourceAllocation, channels: ChannelSet, sample: int
) -> float:
    r"""Compute the SINR of the offloading link of one UAV.

    The interference is the other UAVs plus the sensing echo of the
    offloading-sensing phase at target sample ``sample``.

    Args:
        uav: The UAV index ``k``.
        slot: The slot index.
        alloc: The allocation of the slot.
        channels: The channels.
        sample: The target sample index.

    Returns:
        The SINR ``Gamma_k``.
    """
    powers = _signal_powers(slot, alloc, channels)
    interference = float(np.sum(powers) - powers[uav])
    denominator = (
        interference + _sensing_power(sample, alloc.r1, channels) + _receiver_noise(channels)
    )
    return float(powers[uav] / denominator)


def offloaded_bits(
    uav: int,
    slot: int,
    alloc: ResourceAllocation,
    channels: ChannelSet,
    sample: int,
    bandwidth: float,
) -> float:
    r"""Compute the bits offloaded by one UAV, ``t1 B log2(1 + Gamma_k)``.

    Args:
        uav: The UAV index.
        slot: The slot index.
        alloc: The allocation of the slot.
        channels: The channels.
        sample: The target sample index.
        bandwidth: The bandwidth (Hz).

    Returns:
        The offloaded bits.
    """
    if alloc.t1 == 0:
        return 0.0
    return alloc.t1 * bandwidth * math.log2(1.0 + comm_sinr(uav, slot, alloc, channels, sample))


def radar_sinr_expected(
    slot: int,
    alloc: ResourceAllocation,
    channels: ChannelSet,
    sample: int,
    slot_duration: float,
) -> float:
    r"""Compute the expected radar SINR of one slot at one target
    sample.

    The phase weights ``t0/dT`` and ``t1/dT`` are used as they are,
    without renormalization when ``t0 + t1 < dT``.

    Args:
        slot: The slot index.
        alloc: The allocation of the slot.
        channels: The channels.
        sample: The target sample index.
        slot_duration: The slot duration ``dT`` (s).

    Returns:
        The expected radar SINR.
    """
    noise = _receiver_noise(channels)
    computing = _sensing_power(sample, alloc.r0, channels) / noise
    offloading = _sensing_power(sample, alloc.r1, channels) / (
        float(np.sum(_signal_powers(slot, alloc, channels))) + noise
    )
    return (alloc.t0 * computing + alloc.t1 * offloading) / slot_duration


def local_bits(uav: int, alloc: ResourceAllocation, scenario: ScenarioConfig) -> float:
    r"""Return the bits computed on board, ``f_l dT / D_k``."""
    return alloc.f_local[uav] * scenario.slot_duration / scenario.cycles_per_bit[uav]


def edge_bits(uav: int, alloc: ResourceAllocation, scenario: ScenarioConfig) -> float:
    r"""Return the bits computed at the MEC server, ``f_u t0 / D_k``."""
    return alloc.f_edge[uav] * alloc.t0 / scenario.cycles_per_bit[uav]


def compute_energies(
    uav: int, alloc: ResourceAllocation, scenario: ScenarioConfig
) -> tuple[float, float]:
    r"""Compute the computation energies of one UAV task.

    Args:
        uav: The UAV index.
        alloc: The allocation of the slot.
        scenario: The scenario.

    Returns:
        The on-board energy ``v_l f_l^3 dT`` and the MEC energy
            ``v_u f_u^3 t0`` (J).

    Example usage:

    ```pycon
    >>> import numpy as np
    >>> from covisac.metrics import ResourceAllocation, compute_energies
    >>> from covisac.scenario import load_scenario
    >>> scenario = load_scenario("table1.default")
    >>> alloc = ResourceAllocation(
    ...     w=np.zeros((2, 2)), r0=np.zeros((48, 48)), r1=np.zeros((48, 48)),
    ...     f_local=[5e9, 0.0], f_edge=[0.0, 0.0], t0=0.5, t1=0.5,
    ... )
    >>> [round(e, 6) for e in compute_energies(0, alloc, scenario)]
    [1250.0, 0.0]

    ```
    """
    local = scenario.kappa_local * alloc.f_local[uav] ** 3 * scenario.slot_duration
    edge = scenario.kappa_edge * alloc.f_edge[uav] ** 3 * alloc.t0
    return float(local), float(edge)


def transmit_sensing_energies(alloc: ResourceAllocation) -> tuple[float, float]:
    r"""Compute the transmit energies of one slot.

    Args:
        alloc: The allocation of the slot.

    Returns:
        The UAV offloading energy ``t1 sum_k ||w_k||^2`` and the AP
            sensing energy ``t0 tr(R0) + t1 tr(R1)`` (J).
    """
    comm = alloc.t1 * float(np.sum(np.abs(alloc.w) ** 2))
    sensing = alloc.t0 * float(np.trace(alloc.r0).real) + alloc.t1 * float(np.trace(alloc.r1).real)
    return comm, sensing


_ENERGY_COMPONENTS = ("comm", "sensing", "local", "edge", "propulsion")


@dataclass(frozen=True, eq=False)
class EnergyBreakdown:
    r"""Define the energy consumption of a solution.

    Totals are summed component by component with ``math.fsum``, in
    the order comm, sensing, local, edge, propulsion, and the grand
    total is the ``fsum`` of the component totals.

    Args:
        comm: The UAV offloading energy per slot, shape ``(N,)``.
        sensing: The AP sensing energy per slot, shape ``(N,)``.
        local: The on-board computing energy, shape ``(N, K)``.
        edge: The MEC computing energy, shape ``(N, K)``.
        propulsion: The propulsion energy, shape ``(N, K)``.
    """

    comm: np.ndarray
    sensing: np.ndarray
    local: np.ndarray
    edge: np.ndarray
    propulsion: np.ndarray

    def __eq__(self, other: object) -> bool:
        return self.equal(other)

    __hash__ = object.__hash__

    def __repr__(self) -> str:
        return f"{self.__class__.__qualname__}(\n  {str_indent(str_mapping(self.to_record()))}\n)"

    def component_total(self, name: str) -> float:
        r"""Return the total of one component (J)."""
        return math.fsum(np.ravel(getattr(self, name)))

    @property
    def total(self) -> float:
        r"""The grand total (J)."""
        return math.fsum(self.component_total(name) for name in _ENERGY_COMPONENTS)

    @property
    def resource_total(self) -> float:
        r"""The total without propulsion, the objective of the
        resource allocation (J)."""
        return math.fsum(self.component_total(name) for name in _ENERGY_COMPONENTS[:4])

    def equal(self, other: Any) -> bool:
        if not isinstance(other, EnergyBreakdown):
            return False
        return objects_are_equal(self.__dict__, other.__dict__)

    def to_record(self) -> dict[str, float]:
        r"""Return the totals as a flat record with unit-suffixed keys."""
        record = {f"{name}_energy_J": self.component_total(name) for name in _ENERGY_COMPONENTS}
        record["total_energy_J"] = self.total
        return record

    def to_frame(self) -> pd.DataFrame:
        r"""Return the per-slot energies, one row per slot."""
        return pd.DataFrame(
            {
                "slot": np.arange(self.comm.shape[0]),
                "comm_energy_J": self.comm,
                "sensing_energy_J": self.sensing,
                "local_energy_J": self.local.sum(axis=1),
                "edge_energy_J": self.edge.sum(axis=1),
                "propulsion_energy_J": self.propulsion.sum(axis=1),
            }
        )


def energy_breakdown(
    allocations: Sequence[ResourceAllocation], trajectory: Trajectory, scenario: ScenarioConfig
) -> EnergyBreakdown:
    r"""Compute the energy consumption of a solution.

    Args:
        allocations: The allocation of every slot.
        trajectory: The trajectory.
        scenario: The scenario.

    Returns:
        The breakdown.
    """
    num_uavs = scenario.num_uavs
    transmit = np.array([transmit_sensing_energies(alloc) for alloc in allocations])
    computing = np.array(
        [[compute_energies(k, alloc, scenario) for k in range(num_uavs)] for alloc in allocations]
    ).reshape(len(allocations), num_uavs, 2)
    return EnergyBreakdown(
        comm=transmit[:, 0],
        sensing=transmit[:, 1],
        local=computing[:, :, 0],
        edge=computing[:, :, 1],
        propulsion=propulsion_energy(trajectory, scenario.propulsion).T,
    )


def offloading_ratio(allocations: Sequence[ResourceAllocation], scenario: ScenarioConfig) -> float:
    r"""Return the share of the task bits computed at the MEC server,
    ``sum l_u / sum I``, ``nan`` when there is no task bit."""
    total = math.fsum(np.ravel(scenario.task_bits))
    if total == 0:
        return math.nan
    edge = math.fsum(
        edge_bits(k, alloc, scenario) for alloc in allocations for k in range(scenario.num_uavs)
    )
    return edge / total


def phase_ratio(allocations: Sequence[ResourceAllocation]) -> float:
    r"""Return the phase duration ratio ``sum t0 / sum t1``, ``nan``
    when no slot has an offloading phase."""
    offloading = math.fsum(a.t1 for a in allocations)
    if offloading == 0:
        return math.nan
    return math.fsum(a.t0 for a in allocations) / offloading


@dataclass(frozen=True)
class Residual:
    r"""Define the normalized residual of one constraint instance.

    Args:
        family: The constraint family.
        slot: The slot (or waypoint) index, ``-1`` when not
            applicable.
        index: The remaining indices (UAV, warden, sample, ...).
        value: The normalized residual; ``<= tolerance`` means
            satisfied.
    """

    family: str
    slot: int
    index: tuple[int, ...]
    value: float


@dataclass(frozen=True)
class ConstraintReport:
    r"""Define a set of constraint residuals.

    Args:
        residuals: The residuals.
    """

    residuals: tuple[Residual, ...]

    def __repr__(self) -> str:
        args = str_indent(str_mapping(self.by_family()))
        return f"{self.__class__.__qualname__}(\n  {args}\n)"

    def __add__(self, other: ConstraintReport) -> ConstraintReport:
        return ConstraintReport(self.residuals + other.residuals)

    @property
    def max_residual(self) -> float:
        r"""The largest residual, ``-inf`` if there is none."""
        return max((r.value for r in self.residuals), default=-math.inf)

    def by_family(self) -> dict[str, float]:
        r"""Return the largest residual of each family."""
        worst: dict[str, float] = {}
        for residual in self.residuals:
            worst[residual.family] = max(worst.get(residual.family, -math.inf), residual.value)
        return worst

    def violations(self, tolerance: float = RESIDUAL_TOLERANCE) -> tuple[Residual, ...]:
        r"""Return the residuals above ``tolerance``."""
        return tuple(r for r in self.residuals if r.value > tolerance)

    def is_feasible(self, tolerance: float = RESIDUAL_TOLERANCE) -> bool:
        r"""``True`` if every residual is at most ``tolerance``."""
        return not self.violations(tolerance)


def _ratio(excess: float, scale: float) -> float:
    return excess / abs(scale) if scale != 0 else excess


def check_slot(
    slot: int, alloc: ResourceAllocation, channels: ChannelSet, scenario: ScenarioConfig
) -> ConstraintReport:
    r"""Compute the residuals of every per-slot constraint.

    The families are ``sensing`` (expected radar SINR), ``offload_bits``
    and ``edge_bits`` (task completion through the link and at the
    server), ``covert``, ``local_cpu``, ``edge_cpu``, ``uav_power``,
    ``ap_power``, ``time`` and ``psd``.

    Args:
        slot: The slot index.
        alloc: The allocation of the slot.
        channels: The channels.
        scenario: The scenario.

    Returns:
        The report.
    """
    out: list[Residual] = []

    def add(family: str, nodes: tuple[int, ...], excess: float, scale: float) -> None:
        out.append(Residual(family, slot, nodes, _ratio(excess, scale)))

    delta = scenario.slot_duration
    num_samples = channels.sensing.shape[0]
    for q in range(num_samples):
        expected = radar_sinr_expected(slot, alloc, channels, q, delta)
        add("sensing", (q,), scenario.gamma_min - expected, scenario.gamma_min)
    for k in range(scenario.num_uavs):
        bits = scenario.task_bits[slot, k]
        onboard = local_bits(k, alloc, scenario)
        for q in range(num_samples):
            link = offloaded_bits(k, slot, alloc, channels, q, scenario.bandwidth)
            add("offload_bits", (k, q), bits - onboard - link, bits)
        add("edge_bits", (k,), bits - onboard - edge_bits(k, alloc, scenario), bits)
        add("local_cpu", (k,), alloc.f_local[k] - scenario.f_local_max, scenario.f_local_max)
        add("local_cpu", (k,), -alloc.f_local[k], scenario.f_local_max)
        add("edge_cpu", (k,), -alloc.f_edge[k], scenario.f_edge_max)
        power = float(np.sum(np.abs(alloc.w[k]) ** 2))
        add("uav_power", (k,), power - scenario.p_uav_max, scenario.p_uav_max)
    add("edge_cpu", (), float(np.sum(alloc.f_edge)) - scenario.f_edge_max, scenario.f_edge_max)
    for warden in range(scenario.num_wardens):
        mu = covert.detection_stats(warden, slot, alloc, channels).mu
        add("covert", (warden,), mu - scenario.mu_max, scenario.mu_max)
    for phase, cov in enumerate((alloc.r0, alloc.r1)):
        trace = float(np.trace(cov).real)
        add("ap_power", (phase,), trace - scenario.p_ap_max, scenario.p_ap_max)
        hermitian = 0.5 * (cov + cov.conj().T)
        smallest = float(np.linalg.eigvalsh(hermitian)[0])
        # relative to the trace, absolute for an empty covariance
        add("psd", (phase,), -smallest, trace if trace > 0 else 0.0)
    add("time", (), alloc.t0 + alloc.t1 - delta, delta)
    add("time", (0,), -alloc.t0, delta)
    add("time", (1,), -alloc.t1, delta)
    return ConstraintReport(tuple(out))


def check_p0(
    allocations: Sequence[ResourceAllocation],
    trajectory: Trajectory,
    channels: ChannelSet,
    scenario: ScenarioConfig,
) -> ConstraintReport:
    r"""Compute the residuals of every constraint of the joint problem.

    The per-slot families of ``check_slot`` are completed with the
    trajectory families ``speed``, ``endpoint``, ``uav_uav``,
    ``uav_warden`` and ``uav_target`` (distances normalized by
    ``D_min``, speeds by ``V_max dT``).

    Args:
        allocations: The allocation of every slot.
        trajectory: The trajectory the channels were built on.
        channels: The channels.
        scenario: The scenario.

    Returns:
        The report.

    Raises:
        InputError: if the number of allocations does not match the
            number of slots.
    """
    if len(allocations) != scenario.num_slots:
        msg = f"expected {scenario.num_slots} allocations but received {len(allocations)}"
        raise InputError(msg)
    report = ConstraintReport(())
    for slot, alloc in enumerate(allocations):
        report += check_slot(slot, alloc, channels, scenario)
    samples = sample_sensing_area(scenario.sensing_box, scenario.num_samples)
    return report + trajectory_residuals(trajectory, scenario, samples)


def trajectory_residuals(
    trajectory: Trajectory, scenario: ScenarioConfig, target_samples: np.ndarray
) -> ConstraintReport:
    r"""Compute the normalized residuals of the trajectory constraints.

    Args:
        trajectory: The trajectory.
        scenario: The scenario.
        target_samples: The target positions, shape ``(Q, 3)``.

    Returns:
        The report.
    """
    waypoints = trajectory.waypoints
    reach = scenario.v_max * scenario.slot_duration
    steps = np.linalg.norm(np.diff(waypoints, axis=1), axis=2)
    out = [
        Residual("speed", n, (k,), _ratio(steps[k, n] - reach, reach))
        for k, n in itertools.product(range(scenario.num_uavs), range(scenario.num_slots))
    ]
    scale = max(scenario.d_min, 1.0)
    for k in range(scenario.num_uavs):
        endpoints = ((0, scenario.uav_start[k]), (scenario.num_slots, scenario.uav_end[k]))
        for index, target in endpoints:
            gap = float(np.linalg.norm(waypoints[k, index] - target))
            out.append(Residual("endpoint", index, (k,), gap / scale))
    heights = scenario.uav_altitudes
    for n in range(scenario.num_slots + 1):
        positions = np.hstack([waypoints[:, n], heights[:, None]])
        for k, i in itertools.combinations(range(scenario.num_uavs), 2):
            gap = float(np.linalg.norm(positions[k] - positions[i]))
            out.append(Residual("uav_uav", n, (k, i), _ratio(scenario.d_min - gap, scenario.d_min)))
        for k in range(scenario.num_uavs):
            for family, nodes in (
                ("uav_warden", scenario.warden_positions),
                ("uav_target", target_samples),
            ):
                for j, node in enumerate(nodes):
                    gap = float(np.linalg.norm(positions[k] - node))
                    margin = _ratio(scenario.d_min - gap, scenario.d_min)
                    out.append(Residual(family, n, (k, j), margin))
    return ConstraintReport(tuple(out))
