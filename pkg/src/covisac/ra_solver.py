r"""Implement the per-slot resource allocation solver.

Each slot is solved independently by successive convex approximation:
the time durations and the MEC frequencies are substituted by
exponentials (``t0 = e^tau0``, ``t1 = e^tau1``, ``f_u = e^z``), the
coupled constraints are split with logarithmic auxiliaries, and every
nonconvex side is replaced by its tangent ``kappa(x, x0) =
e^x0 (1 + x - x0)`` at the current point. The tangent under-estimates
``e^x``, so every convex subproblem is a restriction of the original
constraint set and each solution is feasible for it.

Internally channels are divided by the noise standard deviation and
the program works in GHz and Gcycles; allocations are returned in SI
units.
"""

from __future__ import annotations

__all__ = [
    "LOG_FLOOR",
    "AllocationRestriction",
    "RaIterate",
    "ScaSettings",
    "SlotProblem",
    "build_p12",
    "initialize_feasible",
    "kappa",
    "sca_solve",
    "solve_slots",
]

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import logging
import math
from typing import TYPE_CHECKING, Any

from coola.utils import str_indent, str_mapping
import cvxpy as cp
import numpy as np
from scipy.special import expit

from covisac.channel import best_ap, matched_direction
from covisac.conic import (
    ConicProgram,
    ConicSettings,
    cubic_epigraph,
    exp_epigraph,
    real_embedding,
    stack_complex,
    unstack_complex,
)
from covisac.errors import BuildError, InfeasibleError, InputError, InternalError, SolverError
from covisac.events import SCA_ITERATION, SCA_RESTORATION, EventManager, TraceRecorder
from covisac.metrics import (
    ResourceAllocation,
    check_slot,
    compute_energies,
    transmit_sensing_energies,
)

if TYPE_CHECKING:
    from collections.abc import Sequence

    from covisac.channel import ChannelSet
    from covisac.scenario import ScenarioConfig

logger = logging.getLogger(__name__)

LOG_FLOOR = -30.0
GIGA = 1e9
# v f^3 with f in GHz
CAPACITANCE_SCALE = 1e27
# smallest time and MEC frequency, relative to the slot and to f_u,max
_LOWER_RATIO = 1e-6


def kappa(x: Any, x0: float) -> Any:
    r"""Compute the tangent ``e^x0 (1 + x - x0)`` of ``e^x`` at ``x0``.

    ``x`` may be a number, an array or a ``cvxpy`` expression.

    Example usage:

    ```pycon
    >>> from covisac.ra_solver import kappa
    >>> kappa(1.0, 0.0)
    2.0

    ```
    """
    return math.exp(x0) * (1.0 + x - x0)


def _log(value: Any) -> Any:
    return np.maximum(np.log(np.maximum(value, math.exp(LOG_FLOOR))), LOG_FLOOR)


def _softplus_log2(value: Any) -> Any:
    return np.logaddexp(0.0, value) / math.log(2.0)


@dataclass(frozen=True)
class AllocationRestriction:
    r"""Define the degrees of freedom pinned by a benchmark design.

    Args:
        fixed_beams: If ``True``, each beamformer keeps the direction
            matched to its best AP and only its power is optimized,
            and both sensing covariances are scaled identities.
        time_ratio: If set, ``t0 = time_ratio * t1`` in every slot.
        full_offload: If ``True``, no bit is computed on board.
    """

    fixed_beams: bool = False
    time_ratio: float | None = None
    full_offload: bool = False

    def __post_init__(self) -> None:
        if self.time_ratio is not None and not self.time_ratio > 0:
            msg = f"time_ratio has to be positive but received {self.time_ratio}"
            raise InputError(msg)

    @property
    def is_free(self) -> bool:
        return not self.fixed_beams and self.time_ratio is None and not self.full_offload


@dataclass(frozen=True)
class ScaSettings:
    r"""Define the settings of the SCA loop.

    Args:
        epsilon: The relative objective decrease below which the loop
            stops.
        max_iterations: The iteration cap.
        restoration_iterations: The iteration cap of the feasibility
            restoration.
        restoration_margin: The most negative slack the restoration
            may reach.
        residual_tolerance: The largest normalized residual of an
            accepted allocation.
        increase_tolerance: The relative objective increase treated
            as backend noise. Such a candidate is never accepted: the
            loop stops on the previous point, so the returned trace is
            nonincreasing. A larger increase raises ``InternalError``.
            The backend gap tolerance is 1e-8, so increases of that
            order occur near convergence.
        conic: The backend settings.
    """

    epsilon: float = 1e-4
    max_iterations: int = 30
    restoration_iterations: int = 30
    restoration_margin: float = 1e-3
    residual_tolerance: float = 1e-6
    increase_tolerance: float = 1e-6
    conic: ConicSettings = field(default_factory=ConicSettings)

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            msg = f"epsilon has to be positive but received {self.epsilon}"
            raise InputError(msg)
        if self.max_iterations < 1 or self.restoration_iterations < 1:
            msg = "the iteration caps have to be positive"
            raise InputError(msg)


@dataclass(frozen=True, eq=False)
class SlotProblem:
    r"""Define the normalized data of one slot.

    Offloading and sensing channels are divided by the radar noise
    standard deviation, warden and jamming channels by the warden
    noise standard deviation. Task sizes are in Gcycles, frequencies
    in GHz.
    """

    slot: int
    scenario: ScenarioConfig
    channels: ChannelSet
    offload: np.ndarray
    offload_embedding: np.ndarray
    offload_gram: np.ndarray
    sensing_gram: np.ndarray
    jamming: np.ndarray
    warden_embedding: np.ndarray
    cycles: np.ndarray
    rate_cycles: np.ndarray

    @classmethod
    def from_channels(
        cls, slot: int, channels: ChannelSet, scenario: ScenarioConfig
    ) -> SlotProblem:
        r"""Build the normalized data of a slot."""
        if not 0 <= slot < channels.num_slots:
            msg = f"slot {slot} is outside [0, {channels.num_slots})"
            raise InputError(msg)
        radar = math.sqrt(channels.noise_radar)
        warden = math.sqrt(channels.noise_warden)
        offload = channels.offload[slot] / radar
        sensing = channels.sensing / radar
        leak = channels.warden[slot] / warden
        return cls(
            slot=slot,
            scenario=scenario,
            channels=channels,
            offload=offload,
            offload_embedding=np.array([real_embedding(h) for h in offload]),
            offload_gram=np.einsum("kri,krj->kij", offload.conj(), offload),
            sensing_gram=np.einsum("qri,qrj->qij", sensing.conj(), sensing),
            jamming=channels.jamming / warden,
            warden_embedding=np.array(
                [[real_embedding(h.conj()[None, :]) for h in row] for row in leak]
            ).reshape(leak.shape[0], offload.shape[0], 2, 2 * offload.shape[2]),
            cycles=scenario.task_bits[slot] * scenario.cycles_per_bit / GIGA,
            rate_cycles=scenario.bandwidth * scenario.cycles_per_bit / GIGA,
        )

    @property
    def num_uavs(self) -> int:
        return self.offload.shape[0]

    @property
    def num_samples(self) -> int:
        return self.sensing_gram.shape[0]

    @property
    def num_wardens(self) -> int:
        return self.jamming.shape[0]

    @property
    def n_uav(self) -> int:
        return self.offload.shape[2]

    @property
    def receive_dim(self) -> int:
        return self.offload.shape[1]

    @property
    def transmit_dim(self) -> int:
        return self.sensing_gram.shape[1]

    @property
    def slot_duration(self) -> float:
        return self.scenario.slot_duration

    @property
    def f_local_max(self) -> float:
        return self.scenario.f_local_max / GIGA

    @property
    def f_edge_max(self) -> float:
        return self.scenario.f_edge_max / GIGA

    @property
    def tau_min(self) -> float:
        return math.log(_LOWER_RATIO * self.slot_duration)

    @property
    def z_min(self) -> float:
        return math.log(_LOWER_RATIO * self.f_edge_max)

    def beam_directions(self, per_best_ap: bool = False) -> np.ndarray:
        r"""Return the unit matched direction of every UAV, shape
        ``(K, N_U)``, towards the aggregate receiver or towards its
        best AP only."""
        directions = []
        for k, channel in enumerate(self.offload):
            if per_best_ap:
                ap = best_ap(channel, self.channels.n_receive)
                channel = self.channels.offload_block(self.slot, k, ap)
            directions.append(matched_direction(channel))
        return np.array(directions)

    def signal_powers(self, w: np.ndarray) -> np.ndarray:
        r"""Return ``||H_k w_k||^2`` (normalized) for stacked beamformers
        of shape ``(K, 2 N_U)``."""
        return np.array(
            [np.sum((self.offload_embedding[k] @ w[k]) ** 2) for k in range(self.num_uavs)]
        )

    def sensing_traces(self, cov: np.ndarray) -> np.ndarray:
        r"""Return ``tr(G_q R G_q^H)`` (normalized) for every sample."""
        return np.real(np.einsum("qij,ji->q", self.sensing_gram, cov))

    def warden_leaks(self, w: np.ndarray) -> np.ndarray:
        r"""Return ``sum_k |h_lk^H w_k|^2`` (normalized) for every
        warden."""
        return np.array(
            [
                sum(np.sum((emb[k] @ w[k]) ** 2) for k in range(self.num_uavs))
                for emb in self.warden_embedding
            ]
        ).reshape(self.num_wardens)


@dataclass(frozen=True, eq=False)
class RaIterate:
    r"""Define an SCA linearization point of one slot.

    Beamformers are stacked real vectors (``[Re w; Im w]`` per UAV),
    ``f_local`` is in GHz and the log-auxiliaries are those of the
    reformulated problem: ``a0``/``a1`` bound the log sensing traces
    per target sample, ``b`` the log radar interference, ``zeta`` and
    ``gamma`` the log interference and log SINR per UAV and sample,
    ``r`` the log spectral efficiency per UAV, ``p0``/``p1``/``p2`` the
    log transmit powers.
    """

    w: np.ndarray
    r0: np.ndarray
    r1: np.ndarray
    f_local: np.ndarray
    tau0: float
    tau1: float
    z: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    b: float
    r: np.ndarray
    gamma: np.ndarray
    zeta: np.ndarray
    p0: float
    p1: float
    p2: float
    objective: float
    iteration: int = 0
    slack: float | None = None

    def __repr__(self) -> str:
        args = str_indent(
            str_mapping(
                {
                    "iteration": self.iteration,
                    "objective": self.objective,
                    "t0": math.exp(self.tau0),
                    "t1": math.exp(self.tau1),
                    "f_local": self.f_local.tolist(),
                    "slack": self.slack,
                }
            )
        )
        return f"{self.__class__.__qualname__}(\n  {args}\n)"

    def check(self, problem: SlotProblem) -> None:
        r"""Check that the point matches the slot dimensions.

        Raises:
            BuildError: if a shape is wrong or a value is not finite.
        """
        k, q = problem.num_uavs, problem.num_samples
        n = problem.transmit_dim
        expected = {
            "w": (k, 2 * problem.n_uav),
            "r0": (n, n),
            "r1": (n, n),
            "f_local": (k,),
            "z": (k,),
            "a0": (q,),
            "a1": (q,),
            "r": (k,),
            "gamma": (k, q),
            "zeta": (k, q),
        }
        for name, shape in expected.items():
            value = np.asarray(getattr(self, name))
            if value.shape != shape:
                msg = f"{name} has shape {value.shape} but the slot needs {shape}"
                raise BuildError(msg)
            if not np.all(np.isfinite(value)):
                msg = f"{name} has non-finite entries"
                raise BuildError(msg)
        scalars = (self.tau0, self.tau1, self.b, self.p0, self.p1, self.p2)
        if not all(math.isfinite(v) for v in scalars):
            msg = "the point has non-finite scalar entries"
            raise BuildError(msg)

    def program_values(self, restriction: AllocationRestriction | None = None) -> dict[str, Any]:
        r"""Return the values of every variable of ``build_p12`` at this
        point, epigraph auxiliaries included."""
        values: dict[str, Any] = {
            "w": self.w,
            "r0": self.r0,
            "r1": self.r1,
            "f_local": self.f_local,
            "tau0": self.tau0,
            "tau1": self.tau1,
            "z": self.z,
            "a0": self.a0,
            "a1": self.a1,
            "b": self.b,
            "r": self.r,
            "gamma": self.gamma,
            "zeta": self.zeta,
            "p0": self.p0,
            "p1": self.p1,
            "p2": self.p2,
            "e_comm": math.exp(self.tau1 + self.p2),
            "e_s0": math.exp(self.tau0 + self.p0),
            "e_s1": math.exp(self.tau1 + self.p1),
            "e_edge": np.exp(self.tau0 + 3 * self.z),
            "c_local": self.f_local**3,
            "q_local": self.f_local**2,
            "s_edge": np.exp(self.z),
            "s_time": np.exp([self.tau0, self.tau1]),
        }
        if restriction is not None and restriction.fixed_beams:
            values["beam_scale"] = np.linalg.norm(self.w, axis=1)
            n = self.r0.shape[0]
            values["rho"] = np.array([np.trace(self.r0).real / n, np.trace(self.r1).real / n])
        if self.slack is not None:
            values["slack"] = self.slack
        return values

    def to_allocation(self) -> ResourceAllocation:
        r"""Convert the point to an allocation in SI units."""
        return ResourceAllocation(
            w=np.array([unstack_complex(row) for row in self.w]),
            r0=self.r0,
            r1=self.r1,
            f_local=self.f_local * GIGA,
            f_edge=np.exp(self.z) * GIGA,
            t0=math.exp(self.tau0),
            t1=math.exp(self.tau1),
        )


def _energy(
    problem: SlotProblem,
    f_local: np.ndarray,
    tau0: float,
    tau1: float,
    z: np.ndarray,
    p0: float,
    p1: float,
    p2: float,
) -> float:
    scenario = problem.scenario
    local = scenario.kappa_local * CAPACITANCE_SCALE * f_local**3 * problem.slot_duration
    edge = scenario.kappa_edge * CAPACITANCE_SCALE * np.exp(tau0 + 3 * z)
    return math.fsum(
        [math.exp(tau1 + p2), math.exp(tau0 + p0), math.exp(tau1 + p1), *local, *edge]
    )


def _tighten(
    problem: SlotProblem,
    w: np.ndarray,
    r0: np.ndarray,
    r1: np.ndarray,
    f_local: np.ndarray,
    tau0: float,
    tau1: float,
    z: np.ndarray,
    iteration: int = 0,
    slack: float | None = None,
) -> RaIterate:
    r"""Build the point whose auxiliaries are tight for a primal
    allocation."""
    r0 = 0.5 * (r0 + r0.conj().T)
    r1 = 0.5 * (r1 + r1.conj().T)
    f_local = np.clip(f_local, 0.0, problem.f_local_max)
    tau0 = max(float(tau0), problem.tau_min)
    tau1 = max(float(tau1), problem.tau_min)
    z = np.maximum(z, problem.z_min)
    noise = problem.receive_dim
    signal = problem.signal_powers(w)
    trace0 = problem.sensing_traces(r0)
    trace1 = problem.sensing_traces(r1)
    others = signal.sum() - signal
    zeta = np.log(others[:, None] + trace1[None, :] + noise)
    gamma = np.maximum(_log(signal)[:, None] - zeta, LOG_FLOOR)
    r = _log(np.min(_softplus_log2(gamma), axis=1))
    p0 = float(_log(np.trace(r0).real))
    p1 = float(_log(np.trace(r1).real))
    p2 = float(_log(np.sum(w**2)))
    return RaIterate(
        w=w,
        r0=r0,
        r1=r1,
        f_local=f_local,
        tau0=tau0,
        tau1=tau1,
        z=z,
        a0=_log(trace0),
        a1=_log(trace1),
        b=math.log(signal.sum() + noise),
        r=r,
        gamma=gamma,
        zeta=zeta,
        p0=p0,
        p1=p1,
        p2=p2,
        objective=_energy(problem, f_local, tau0, tau1, z, p0, p1, p2),
        iteration=iteration,
        slack=slack,
    )


def _deficits(problem: SlotProblem, point: RaIterate) -> dict[str, float]:
    r"""Return the normalized shortfall of every family that the
    restoration relaxes, at a tight point."""
    delta = problem.slot_duration
    onboard = point.f_local * delta
    t0, t1 = math.exp(point.tau0), math.exp(point.tau1)
    sensing = (
        np.exp(point.tau1 + point.a1 - point.b) / delta
        + np.exp(point.tau0 + point.a0) / (problem.receive_dim * delta)
    )
    return {
        "edge_bits": float(
            np.max((problem.cycles - onboard - np.exp(point.tau0 + point.z)) / problem.cycles)
        ),
        "sensing_sinr": float(np.max(problem.scenario.gamma_min - sensing)),
        "offload_bits": float(
            np.max(
                (problem.cycles - onboard - problem.rate_cycles * np.exp(point.tau1 + point.r))
                / problem.cycles
            )
        ),
        "edge_cpu": (np.sum(np.exp(point.z)) - problem.f_edge_max) / problem.f_edge_max,
        "time_budget": (t0 + t1 - delta) / delta,
    }


def build_p12(
    problem: SlotProblem,
    iterate: RaIterate,
    restriction: AllocationRestriction | None = None,
    *,
    restoration: bool = False,
    restoration_margin: float = 1e-3,
    power_cone: bool = False,
) -> ConicProgram:
    r"""Build the convex restriction of the slot problem around a
    point.

    With ``restoration=True`` the program minimizes one scalar
    ``slack`` added to the bit, sensing, MEC frequency and time
    constraints instead of the energy.

    Args:
        problem: The slot data.
        iterate: The linearization point.
        restriction: The pinned degrees of freedom.
        restoration: If ``True``, build the restoration program.
        restoration_margin: The lower bound ``-margin`` of the slack.
        power_cone: If ``True``, encode cubes with the power cone.

    Returns:
        The program. Its variables are named after the fields of
            ``RaIterate`` plus the epigraph auxiliaries listed by
            ``RaIterate.program_values``.

    Raises:
        BuildError: if the point does not match the slot.
    """
    iterate.check(problem)
    restriction = restriction or AllocationRestriction()
    scenario = problem.scenario
    num_uavs, num_samples = problem.num_uavs, problem.num_samples
    n = problem.transmit_dim
    noise = problem.receive_dim
    delta = problem.slot_duration
    program = ConicProgram(f"p12[slot={problem.slot}]")

    w = program.variable("w", (num_uavs, 2 * problem.n_uav))
    r0 = program.hermitian("r0", n)
    r1 = program.hermitian("r1", n)
    f_local = program.variable("f_local", num_uavs)
    tau0 = program.variable("tau0")
    tau1 = program.variable("tau1")
    z = program.variable("z", num_uavs)
    a0 = program.variable("a0", num_samples)
    a1 = program.variable("a1", num_samples)
    b = program.variable("b")
    r = program.variable("r", num_uavs)
    gamma = program.variable("gamma", (num_uavs, num_samples))
    zeta = program.variable("zeta", (num_uavs, num_samples))
    p0 = program.variable("p0")
    p1 = program.variable("p1")
    p2 = program.variable("p2")
    e_comm = program.variable("e_comm")
    e_s0 = program.variable("e_s0")
    e_s1 = program.variable("e_s1")
    e_edge = program.variable("e_edge", num_uavs)
    c_local = program.variable("c_local", num_uavs)
    q_local = program.variable("q_local", num_uavs)
    s_edge = program.variable("s_edge", num_uavs)
    s_time = program.variable("s_time", 2)
    slack = program.variable("slack") if restoration else None

    def relaxed(scale: float) -> Any:
        return 0.0 if slack is None else slack * scale

    signal = [cp.sum_squares(problem.offload_embedding[k] @ w[k]) for k in range(num_uavs)]
    total_signal = cp.sum(cp.hstack(signal))

    program.add(
        "uav_power", "soc", [cp.sum_squares(w[k]) <= scenario.p_uav_max for k in range(num_uavs)]
    )
    program.add(
        "ap_power", "nonneg", [r0.trace() <= scenario.p_ap_max, r1.trace() <= scenario.p_ap_max]
    )
    program.add("local_cpu", "nonneg", [f_local >= 0, f_local <= problem.f_local_max])
    program.add(
        "edge_cpu",
        "exp",
        [
            exp_epigraph(s_edge, z),
            cp.sum(s_edge) <= problem.f_edge_max * (1 + relaxed(1.0)),
        ],
    )
    program.add(
        "time_budget",
        "exp",
        [
            exp_epigraph(s_time, cp.hstack([tau0, tau1])),
            cp.sum(s_time) <= delta * (1 + relaxed(1.0)),
        ],
    )
    program.add(
        "sensing_trace",
        "exp",
        [
            constraint
            for q in range(num_samples)
            for constraint in (
                exp_epigraph(r0.inner(problem.sensing_gram[q]), a0[q]),
                exp_epigraph(r1.inner(problem.sensing_gram[q]), a1[q]),
            )
        ],
    )
    covert = []
    for idx, jam in enumerate(problem.jamming):
        leak = sum(
            cp.sum_squares(problem.warden_embedding[idx, k] @ w[k]) for k in range(num_uavs)
        )
        scale = 1.0 / (1.0 + float(np.sum(np.abs(jam) ** 2)) * scenario.p_ap_max)
        covert.append(
            scale * (leak + r1.quad(jam) - r0.quad(jam))
            <= scale * scenario.mu_max * (r0.quad(jam) + 1.0)
        )
    program.add("covert", "soc", covert)

    it = iterate
    program.add(
        "edge_bits",
        "nonneg",
        [
            f_local[k] * delta
            + kappa(tau0 + z[k], it.tau0 + it.z[k])
            + relaxed(problem.cycles[k])
            >= problem.cycles[k]
            for k in range(num_uavs)
        ],
    )
    program.add("interference_bound", "soc", [total_signal + noise <= kappa(b, it.b)])
    program.add(
        "sensing_sinr",
        "nonneg",
        [
            kappa(tau1 + a1[q] - b, it.tau1 + it.a1[q] - it.b) / delta
            + kappa(tau0 + a0[q], it.tau0 + it.a0[q]) / (noise * delta)
            + relaxed(1.0)
            >= scenario.gamma_min
            for q in range(num_samples)
        ],
    )
    slope = expit(it.gamma) / math.log(2.0)
    program.add(
        "rate_bound",
        "exp",
        [
            exp_epigraph(
                _softplus_log2(it.gamma[k, q]) + slope[k, q] * (gamma[k, q] - it.gamma[k, q]),
                r[k],
            )
            for k in range(num_uavs)
            for q in range(num_samples)
        ],
    )
    signal_bound = []
    for k in range(num_uavs):
        point = unstack_complex(it.w[k])
        gradient = stack_complex(problem.offload_gram[k] @ point)
        value = float(np.real(np.vdot(point, problem.offload_gram[k] @ point)))
        signal_bound.extend(
            exp_epigraph(2 * (w[k] @ gradient) - value, gamma[k, q] + zeta[k, q])
            for q in range(num_samples)
        )
    program.add("signal_bound", "exp", signal_bound)
    program.add(
        "sinr_denominator",
        "soc",
        [
            sum((signal[i] for i in range(num_uavs) if i != k), start=cp.Constant(0.0))
            + r1.inner(problem.sensing_gram[q])
            + noise
            <= kappa(zeta[k, q], it.zeta[k, q])
            for k in range(num_uavs)
            for q in range(num_samples)
        ],
    )
    program.add(
        "offload_bits",
        "nonneg",
        [
            f_local[k] * delta
            + problem.rate_cycles[k] * kappa(tau1 + r[k], it.tau1 + it.r[k])
            + relaxed(problem.cycles[k])
            >= problem.cycles[k]
            for k in range(num_uavs)
        ],
    )
    program.add(
        "power_bound",
        "soc",
        [
            r0.trace() <= kappa(p0, it.p0),
            r1.trace() <= kappa(p1, it.p1),
            cp.sum_squares(w) <= kappa(p2, it.p2),
        ],
    )
    program.add(
        "objective_epigraph",
        "exp",
        [
            exp_epigraph(e_comm, tau1 + p2),
            exp_epigraph(e_s0, tau0 + p0),
            exp_epigraph(e_s1, tau1 + p1),
            exp_epigraph(e_edge, tau0 + 3 * z),
        ],
    )
    program.add(
        "objective_epigraph",
        "pow" if power_cone else "rsoc",
        cubic_epigraph(f_local, c_local, q_local, power_cone=power_cone),
    )
    bounds = [
        tau0 >= problem.tau_min,
        tau1 >= problem.tau_min,
        z >= problem.z_min,
        a0 >= LOG_FLOOR,
        a1 >= LOG_FLOOR,
        r >= LOG_FLOOR,
        gamma >= LOG_FLOOR,
        p0 >= LOG_FLOOR,
        p1 >= LOG_FLOOR,
        p2 >= LOG_FLOOR,
    ]
    if slack is not None:
        bounds.append(slack >= -restoration_margin)
    program.add("variable_bounds", "nonneg", bounds)

    pinned = []
    if restriction.fixed_beams:
        scale = program.variable("beam_scale", num_uavs, nonneg=True)
        rho = program.variable("rho", 2, nonneg=True)
        directions = problem.beam_directions(per_best_ap=True)
        pinned.extend(w[k] == scale[k] * stack_complex(directions[k]) for k in range(num_uavs))
        eye = np.eye(2 * n)
        pinned.extend([r0.embedding == rho[0] * eye, r1.embedding == rho[1] * eye])
    if restriction.time_ratio is not None:
        pinned.append(tau0 == tau1 + math.log(restriction.time_ratio))
    if restriction.full_offload:
        pinned.append(f_local == 0)
    if pinned:
        program.add("restriction", "zero", pinned)

    if slack is not None:
        program.minimize(slack)
    else:
        program.minimize(
            e_comm
            + e_s0
            + e_s1
            + cp.sum(
                scenario.kappa_local * CAPACITANCE_SCALE * delta * c_local
                + scenario.kappa_edge * CAPACITANCE_SCALE * e_edge
            )
        )
    return program


def _candidate(
    problem: SlotProblem, program: ConicProgram, values: dict[str, np.ndarray], iteration: int
) -> RaIterate:
    slack = float(values["slack"]) if "slack" in values else None
    return _tighten(
        problem,
        w=np.asarray(values["w"], dtype=float).reshape(problem.num_uavs, 2 * problem.n_uav),
        r0=program.hermitian_value("r0"),
        r1=program.hermitian_value("r1"),
        f_local=np.asarray(values["f_local"], dtype=float).reshape(problem.num_uavs),
        tau0=float(values["tau0"]),
        tau1=float(values["tau1"]),
        z=np.asarray(values["z"], dtype=float).reshape(problem.num_uavs),
        iteration=iteration,
        slack=slack,
    )


def _solve_program(
    problem: SlotProblem,
    iterate: RaIterate,
    restriction: AllocationRestriction,
    settings: ScaSettings,
    restoration: bool,
) -> RaIterate:
    program = build_p12(
        problem,
        iterate,
        restriction,
        restoration=restoration,
        restoration_margin=settings.restoration_margin,
        power_cone=settings.conic.power_cone,
    )
    solution = program.solve(settings.conic)
    if not solution.usable:
        stage = "restoration" if restoration else "SCA"
        msg = (
            f"slot {problem.slot}, {stage} iteration {iterate.iteration + 1}: "
            f"the subproblem returned status {solution.status!r}"
        )
        raise SolverError(msg)
    return _candidate(problem, program, solution.values, iterate.iteration + 1)


def _starting_point(problem: SlotProblem, restriction: AllocationRestriction) -> RaIterate:
    scenario = problem.scenario
    delta = problem.slot_duration
    n = problem.transmit_dim
    if restriction.time_ratio is None:
        t0 = t1 = 0.5 * delta
    else:
        t1 = delta / (1.0 + restriction.time_ratio)
        t0 = restriction.time_ratio * t1
    cov = scenario.p_ap_max / n * np.eye(n, dtype=complex)
    directions = problem.beam_directions(per_best_ap=restriction.fixed_beams)
    unit = np.array([stack_complex(d) for d in directions])
    leaks = problem.warden_leaks(unit)
    power = scenario.p_uav_max
    for idx, jam in enumerate(problem.jamming):
        if leaks[idx] > 0:
            jammed = float(np.real(np.vdot(jam, cov @ jam)))
            power = min(power, scenario.mu_max * (jammed + 1.0) / leaks[idx])
    w = math.sqrt(0.99 * power) * unit
    f_local = np.zeros(problem.num_uavs) if restriction.full_offload else np.full(
        problem.num_uavs, problem.f_local_max
    )
    residual = np.maximum(problem.cycles - f_local * delta, 0.0)
    f_edge = np.maximum(residual / t0 * (1.0 + 1e-6), _LOWER_RATIO * problem.f_edge_max * 1.01)
    return _tighten(
        problem,
        w=w,
        r0=cov,
        r1=cov.copy(),
        f_local=f_local,
        tau0=math.log(t0),
        tau1=math.log(t1),
        z=np.log(f_edge),
    )


def _check_budget(problem: SlotProblem, restriction: AllocationRestriction) -> None:
    local = 0.0 if restriction.full_offload else problem.f_local_max * problem.slot_duration
    needed = np.maximum(problem.cycles - local, 0.0)
    if needed.sum() >= problem.f_edge_max * problem.slot_duration:
        msg = (
            f"slot {problem.slot}: {needed.sum():.4g} Gcycles exceed what the MEC server can run "
            f"in one slot ({problem.f_edge_max * problem.slot_duration:.4g} Gcycles)"
        )
        raise InfeasibleError(msg, families=("edge_bits",), slot=problem.slot)


def _restore(
    problem: SlotProblem,
    point: RaIterate,
    restriction: AllocationRestriction,
    settings: ScaSettings,
    event_manager: EventManager,
) -> RaIterate:
    deficits = _deficits(problem, point)
    point = replace(point, slack=max(max(deficits.values()), -settings.restoration_margin))
    logger.debug(f"slot {problem.slot}: restoration starts with slack {point.slack:.3e}")
    for _ in range(settings.restoration_iterations):
        candidate = _solve_program(problem, point, restriction, settings, restoration=True)
        progress = point.slack - candidate.slack
        point = candidate
        event_manager.trigger_event(
            SCA_RESTORATION,
            {"slot": problem.slot, "iteration": point.iteration, "slack": point.slack},
        )
        if point.slack <= -0.5 * settings.restoration_margin or progress < 1e-9:
            break
    deficits = _deficits(problem, point)
    if max(deficits.values()) > 1e-9:
        failed = tuple(name for name, value in deficits.items() if value > 1e-9)
        msg = f"slot {problem.slot}: no feasible allocation (remaining slack {point.slack:.3e})"
        raise InfeasibleError(msg, families=failed, slot=problem.slot)
    return replace(point, slack=None, iteration=0)


def initialize_feasible(
    slot: int,
    channels: ChannelSet,
    scenario: ScenarioConfig,
    restriction: AllocationRestriction | None = None,
    settings: ScaSettings | None = None,
    event_manager: EventManager | None = None,
) -> RaIterate:
    r"""Find a feasible starting point of one slot.

    The direct construction splits the slot evenly (or by the pinned
    ratio), uses the full isotropic AP budget, matched beamformers at
    the largest power allowed by the UAV budget and by covertness,
    the full on-board frequency and just enough MEC frequency. When
    that point violates a constraint, the slacked restoration program
    is iterated until the slack is nonpositive.

    Args:
        slot: The slot index.
        channels: The channels.
        scenario: The scenario.
        restriction: The pinned degrees of freedom.
        settings: The SCA settings.
        event_manager: Receives the ``sca_restoration`` records.

    Returns:
        A point feasible for the slot constraints.

    Raises:
        InfeasibleError: if the slot has no feasible allocation. The
            exception names the constraint families that failed.
    """
    restriction = restriction or AllocationRestriction()
    settings = settings or ScaSettings()
    event_manager = event_manager or EventManager()
    problem = SlotProblem.from_channels(slot, channels, scenario)
    _check_budget(problem, restriction)
    point = _starting_point(problem, restriction)
    report = check_slot(slot, point.to_allocation(), channels, scenario)
    direct = max(_deficits(problem, point).values()) <= 1e-12
    if report.is_feasible(settings.residual_tolerance) and direct:
        logger.debug(f"slot {slot}: direct start is feasible (energy={point.objective:.6e} J)")
        return point
    logger.debug(f"slot {slot}: direct start violates {sorted(report.by_family())[:3]}...")
    point = _restore(problem, point, restriction, settings, event_manager)
    report = check_slot(slot, point.to_allocation(), channels, scenario)
    if not report.is_feasible(settings.residual_tolerance):
        violations = report.violations(settings.residual_tolerance)
        failed = tuple(dict.fromkeys(v.family for v in violations))
        msg = f"slot {slot}: the restored point still violates {', '.join(failed)}"
        raise InfeasibleError(msg, families=failed, slot=slot)
    return point


def _admits(
    problem: SlotProblem, point: RaIterate, restriction: AllocationRestriction
) -> bool:
    if restriction.full_offload and np.any(point.f_local != 0):
        return False
    if restriction.time_ratio is not None and not math.isclose(
        point.tau0, point.tau1 + math.log(restriction.time_ratio), abs_tol=1e-9
    ):
        return False
    if restriction.fixed_beams:
        n = problem.transmit_dim
        for cov in (point.r0, point.r1):
            if not np.allclose(cov, np.trace(cov).real / n * np.eye(n), atol=1e-9):
                return False
        directions = problem.beam_directions(per_best_ap=True)
        for k, direction in enumerate(directions):
            beam = unstack_complex(point.w[k])
            if np.linalg.norm(beam - np.vdot(direction, beam) * direction) > 1e-9:
                return False
    return True


def _warm_start(
    problem: SlotProblem,
    previous: ResourceAllocation,
    restriction: AllocationRestriction,
    settings: ScaSettings,
) -> RaIterate | None:
    report = check_slot(problem.slot, previous, problem.channels, problem.scenario)
    if not report.is_feasible(settings.residual_tolerance):
        return None
    if previous.t0 <= 0 or previous.t1 <= 0:
        return None
    point = _tighten(
        problem,
        w=np.array([stack_complex(row) for row in previous.w]),
        r0=previous.r0,
        r1=previous.r1,
        f_local=previous.f_local / GIGA,
        tau0=math.log(previous.t0),
        tau1=math.log(previous.t1),
        z=np.log(np.maximum(previous.f_edge / GIGA, _LOWER_RATIO * problem.f_edge_max)),
    )
    if max(_deficits(problem, point).values()) > 1e-9 or not _admits(problem, point, restriction):
        return None
    return point


def sca_solve(
    slot: int,
    channels: ChannelSet,
    scenario: ScenarioConfig,
    settings: ScaSettings | None = None,
    restriction: AllocationRestriction | None = None,
    previous: ResourceAllocation | None = None,
    event_manager: EventManager | None = None,
) -> tuple[ResourceAllocation, tuple[dict[str, Any], ...]]:
    r"""Minimize the transmit and computation energy of one slot.

    Args:
        slot: The slot index.
        channels: The channels.
        scenario: The scenario.
        settings: The SCA settings.
        restriction: The pinned degrees of freedom.
        previous: A previous allocation of the slot, used as the
            starting point when it is feasible for the current
            channels.
        event_manager: Receives the ``sca_iteration`` and
            ``sca_restoration`` records.

    Returns:
        The allocation and the iteration records (``slot``,
            ``iteration``, ``objective_J``, ``max_residual`` and
            ``relative_decrease``).

    Raises:
        InfeasibleError: if the slot has no feasible allocation.
        SolverError: if a subproblem cannot be solved.
        InternalError: if the objective increases beyond solver noise.
    """
    restriction = restriction or AllocationRestriction()
    settings = settings or ScaSettings()
    event_manager = event_manager or EventManager()
    recorder = TraceRecorder()
    problem = SlotProblem.from_channels(slot, channels, scenario)
    point = None
    if previous is not None:
        point = _warm_start(problem, previous, restriction, settings)
        if point is None:
            logger.debug(f"slot {slot}: the previous allocation cannot seed this slot")
    if point is None:
        point = initialize_feasible(slot, channels, scenario, restriction, settings, event_manager)
    point = _descend(problem, point, restriction, settings, event_manager, recorder)
    logger.debug(
        f"slot {slot}: stopped after {point.iteration} iterations (energy={point.objective:.6e} J)"
    )
    return point.to_allocation(), recorder.records


def _descend(
    problem: SlotProblem,
    point: RaIterate,
    restriction: AllocationRestriction,
    settings: ScaSettings,
    event_manager: EventManager,
    recorder: TraceRecorder,
) -> RaIterate:
    slot = problem.slot
    start = {
        "slot": slot,
        "iteration": point.iteration,
        "objective_J": point.objective,
        "max_residual": check_slot(
            slot, point.to_allocation(), problem.channels, problem.scenario
        ).max_residual,
        "relative_decrease": math.nan,
    }
    recorder.handle(start)
    event_manager.trigger_event(SCA_ITERATION, start)
    for _ in range(settings.max_iterations):
        candidate = _solve_program(problem, point, restriction, settings, restoration=False)
        if candidate.objective > point.objective + 1e-9 * max(1.0, abs(point.objective)):
            increase = (candidate.objective - point.objective) / max(abs(point.objective), 1e-12)
            if increase <= settings.increase_tolerance:
                logger.debug(f"slot {slot}: stopping on a {increase:.2e} relative increase")
                break
            msg = (
                f"slot {slot}, iteration {candidate.iteration}: the objective increased from "
                f"{point.objective:.9e} to {candidate.objective:.9e}"
            )
            raise InternalError(msg)
        report = check_slot(slot, candidate.to_allocation(), problem.channels, problem.scenario)
        if not report.is_feasible(settings.residual_tolerance):
            logger.warning(
                f"slot {slot}, iteration {candidate.iteration}: the subproblem solution violates "
                f"the slot constraints by {report.max_residual:.3e}, keeping the previous point"
            )
            break
        decrease = (point.objective - candidate.objective) / max(abs(point.objective), 1e-12)
        point = candidate
        record = {
            "slot": slot,
            "iteration": point.iteration,
            "objective_J": point.objective,
            "max_residual": report.max_residual,
            "relative_decrease": decrease,
        }
        recorder.handle(record)
        event_manager.trigger_event(SCA_ITERATION, record)
        if decrease < settings.epsilon:
            break
    return point


def _solve_one(
    slot: int,
    channels: ChannelSet,
    scenario: ScenarioConfig,
    settings: ScaSettings,
    restriction: AllocationRestriction | None,
    previous: ResourceAllocation | None,
) -> tuple[ResourceAllocation, tuple[dict[str, Any], ...], tuple[dict[str, Any], ...]]:
    manager = EventManager()
    restoration = TraceRecorder()
    manager.add_event_handler(SCA_RESTORATION, restoration)
    allocation, records = sca_solve(
        slot, channels, scenario, settings, restriction, previous, manager
    )
    return allocation, records, restoration.records


def solve_slots(
    channels: ChannelSet,
    scenario: ScenarioConfig,
    settings: ScaSettings | None = None,
    restriction: AllocationRestriction | None = None,
    previous: Sequence[ResourceAllocation] | None = None,
    jobs: int = 1,
    event_manager: EventManager | None = None,
) -> tuple[list[ResourceAllocation], tuple[dict[str, Any], ...]]:
    r"""Solve every slot, in a thread pool.

    The slots are independent; their records are forwarded to
    ``event_manager`` in slot order once every slot is solved, so the
    traces do not depend on ``jobs``.

    Args:
        channels: The channels.
        scenario: The scenario.
        settings: The SCA settings.
        restriction: The pinned degrees of freedom.
        previous: The previous allocation of every slot.
        jobs: The number of worker threads.
        event_manager: Receives the records of every slot.

    Returns:
        The allocations and the ``sca_iteration`` records.
    """
    settings = settings or ScaSettings()
    if jobs < 1:
        msg = f"jobs has to be positive but received {jobs}"
        raise InputError(msg)
    if previous is not None and len(previous) != channels.num_slots:
        msg = f"expected {channels.num_slots} previous allocations but received {len(previous)}"
        raise InputError(msg)
    slots = range(channels.num_slots)
    seeds = previous if previous is not None else [None] * channels.num_slots

    def run(slot: int) -> Any:
        return _solve_one(slot, channels, scenario, settings, restriction, seeds[slot])

    if jobs == 1:
        results = [run(slot) for slot in slots]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(run, slots))
    allocations, traces = [], []
    for allocation, records, restoration in results:
        allocations.append(allocation)
        traces.extend(records)
        if event_manager is not None:
            for record in restoration:
                event_manager.trigger_event(SCA_RESTORATION, record)
            for record in records:
                event_manager.trigger_event(SCA_ITERATION, record)
    energy = math.fsum(
        value
        for a in allocations
        for value in (
            *transmit_sensing_energies(a),
            *(e for k in range(scenario.num_uavs) for e in compute_energies(k, a, scenario)),
        )
    )
    logger.info(f"Solved {channels.num_slots} slots (resource energy={energy:.6e} J)")
    return allocations, tuple(traces)
