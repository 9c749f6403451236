r"""Implement the scenario: geometry, time grid, kinematics and
propulsion.

A scenario is loaded from a TOML file. Physical parameters that a file
omits take the default values of the reference parameter table
(``ScenarioConfig`` field defaults); geometry has no defaults.
"""

from __future__ import annotations

__all__ = [
    "SCENARIO_SCHEMA",
    "FeasibilityReport",
    "PropulsionParams",
    "ScenarioConfig",
    "Trajectory",
    "Violation",
    "dump_scenario",
    "load_scenario",
    "propulsion_energy",
    "propulsion_power",
    "repair_spacing",
    "sample_sensing_area",
    "scenario_from_mapping",
    "scenario_to_mapping",
    "straight_trajectory",
    "uav_positions",
    "validate_trajectory",
    "velocity_from_waypoints",
    "warden_case",
]

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
import itertools
import logging
import math
from pathlib import Path
from typing import TYPE_CHECKING, Any

from coola import objects_are_equal
from coola.utils import str_indent, str_mapping
import numpy as np
import toml

from covisac import covert
from covisac.errors import InputError, ScenarioError

if TYPE_CHECKING:
    from collections.abc import Mapping

logger = logging.getLogger(__name__)

SCENARIO_SCHEMA = "covisac.scenario/1"
DISTANCE_TOLERANCE = 1e-9

# (section, key) -> field name
_SCHEMA: dict[str, dict[str, str]] = {
    "time": {"slots": "num_slots", "duration": "duration"},
    "geometry": {
        "ap_positions": "ap_positions",
        "warden_positions": "warden_positions",
        "uav_altitudes": "uav_altitudes",
        "uav_start": "uav_start",
        "uav_end": "uav_end",
        "sensing_box": "sensing_box",
        "samples": "num_samples",
    },
    "antennas": {
        "transmit": "n_transmit",
        "receive": "n_receive",
        "uav": "n_uav",
        "spacing": "spacing",
    },
    "channel": {
        "path_loss": "path_loss",
        "noise_radar": "noise_radar",
        "noise_warden": "noise_warden",
        "bandwidth": "bandwidth",
    },
    "power": {"uav_max": "p_uav_max", "ap_max": "p_ap_max"},
    "computation": {
        "local_max": "f_local_max",
        "edge_max": "f_edge_max",
        "kappa_local": "kappa_local",
        "kappa_edge": "kappa_edge",
        "task_bits": "task_bits",
        "cycles_per_bit": "cycles_per_bit",
    },
    "requirements": {"gamma_min": "gamma_min", "mu_max": "mu_max"},
    "mobility": {"v_max": "v_max", "d_min": "d_min"},
}
_PROPULSION_KEYS = (
    "blade_power",
    "induced_power",
    "tip_speed",
    "drag_ratio",
    "air_density",
    "solidity",
    "rotor_area",
    "hover_velocity",
)
_REQUIRED = (
    ("time", "slots"),
    ("time", "duration"),
    ("geometry", "ap_positions"),
    ("geometry", "warden_positions"),
    ("geometry", "uav_altitudes"),
    ("geometry", "uav_start"),
    ("geometry", "uav_end"),
    ("geometry", "sensing_box"),
)

# Warden layouts (x, y, z) in a 300 m x 300 m service area.
_WARDEN_CASES = {
    1: ((220.0, 30.0, 105.0), (220.0, 270.0, 105.0)),
    2: ((100.0, 80.0, 105.0), (100.0, 220.0, 105.0)),
    3: ((220.0, 130.0, 105.0), (220.0, 170.0, 105.0)),
}


@dataclass(frozen=True)
class PropulsionParams:
    r"""Define the rotary-wing propulsion parameters.

    Args:
        blade_power: The blade profile power in hover ``P0`` (W).
        induced_power: The induced power in hover ``P_H`` (W).
        tip_speed: The rotor blade tip speed ``U_tip`` (m/s).
        drag_ratio: The fuselage drag ratio ``d0``.
        air_density: The air density ``rho0`` (kg/m^3).
        solidity: The rotor solidity ``s``.
        rotor_area: The rotor disc area ``A`` (m^2).
        hover_velocity: The mean rotor induced velocity in hover
            ``v0`` (m/s).
    """

    blade_power: float = 79.86
    induced_power: float = 88.63
    tip_speed: float = 120.0
    drag_ratio: float = 0.6
    air_density: float = 1.225
    solidity: float = 0.05
    rotor_area: float = 0.503
    hover_velocity: float = 4.03

    def __post_init__(self) -> None:
        for name, value in dataclasses.asdict(self).items():
            if not math.isfinite(value) or value < 0:
                msg = f"propulsion parameter {name} has to be finite and nonnegative but received {value}"
                raise ScenarioError(msg)
        if self.tip_speed <= 0 or self.hover_velocity <= 0:
            msg = "tip_speed and hover_velocity have to be positive"
            raise ScenarioError(msg)

    @property
    def parasite_coefficient(self) -> float:
        r"""The coefficient of ``v^3``, ``d0 rho0 s A / 2``."""
        return 0.5 * self.drag_ratio * self.air_density * self.solidity * self.rotor_area


def propulsion_power(speed: float | np.ndarray, params: PropulsionParams) -> float | np.ndarray:
    r"""Compute the propulsion power of a rotary-wing UAV.

    The induced term ``(sqrt(1 + v^4/(4 v0^4)) - v^2/(2 v0^2))^(1/2)``
    is evaluated as ``(1/(sqrt(1 + a^2) + a))^(1/2)`` with
    ``a = v^2/(2 v0^2)``, which is the same value without cancellation
    at high speed.

    Args:
        speed: The horizontal speed (m/s), a scalar or an array.
        params: The propulsion parameters.

    Returns:
        The power (W), with the shape of ``speed``.

    Raises:
        InputError: if a speed is negative or not finite.

    Example usage:

    ```pycon
    >>> from covisac.scenario import PropulsionParams, propulsion_power
    >>> round(propulsion_power(0.0, PropulsionParams()), 2)
    168.49

    ```
    """
    v = np.asarray(speed, dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v < 0):
        msg = f"speed has to be finite and nonnegative but received {speed}"
        raise InputError(msg)
    a = v**2 / (2.0 * params.hover_velocity**2)
    power = (
        params.blade_power * (1.0 + 3.0 * v**2 / params.tip_speed**2)
        + params.parasite_coefficient * v**3
        + params.induced_power * np.sqrt(1.0 / (np.sqrt(1.0 + a**2) + a))
    )
    if power.ndim == 0:
        return float(power)
    return power


def _as_positions(value: Any, name: str, width: int) -> np.ndarray:
    array = np.asarray(value, dtype=float)
    if array.ndim == 1 and array.size == 0:
        array = array.reshape(0, width)
    if array.ndim != 2 or array.shape[1] != width:
        msg = f"{name} has to be a list of {width}-d points but received shape {array.shape}"
        raise ScenarioError(msg)
    if not np.all(np.isfinite(array)):
        msg = f"{name} contains non-finite coordinates"
        raise ScenarioError(msg)
    return array


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    r"""Define a scenario.

    Units are SI throughout: meters, seconds, watts, bits and
    cycles per second. The default values of the physical parameters
    are the reference parameter table.

    Args:
        num_slots: The number of time slots ``N``.
        duration: The service duration ``T`` (s).
        ap_positions: The AP positions, shape ``(M, 2)`` or ``(M, 3)``
            with zero altitude.
        warden_positions: The warden positions, shape ``(L, 3)``.
        uav_altitudes: The flight altitude of each UAV, shape ``(K,)``.
        uav_start: The initial horizontal positions, shape ``(K, 2)``.
        uav_end: The final horizontal positions, shape ``(K, 2)``.
        sensing_box: The lower and upper corners of the sensing area,
            shape ``(2, 3)``.
        num_samples: The number of target location samples ``Q``.
        n_transmit: The AP transmit antenna count ``N_T``.
        n_receive: The AP receive antenna count ``N_R``.
        n_uav: The UAV antenna count ``N_U``.
        spacing: The antenna spacing over the wavelength.
        path_loss: The path loss at the reference distance ``C0``.
        noise_radar: The AP receiver noise power (W).
        noise_warden: The warden noise power (W).
        bandwidth: The offloading bandwidth (Hz).
        p_uav_max: The UAV transmit power budget (W).
        p_ap_max: The AP sensing power budget (W).
        f_local_max: The UAV CPU frequency cap (cycles/s).
        f_edge_max: The MEC server CPU frequency cap (cycles/s).
        kappa_local: The UAV effective capacitance coefficient.
        kappa_edge: The MEC server effective capacitance coefficient.
        task_bits: The task size per slot and UAV (bits). A scalar,
            shape ``(K,)`` or shape ``(N, K)``.
        cycles_per_bit: The CPU cycles per bit of each UAV.
        gamma_min: The expected radar SINR requirement.
        mu_max: The covertness cap on the warden power excess.
        v_max: The UAV speed cap (m/s).
        d_min: The minimum distance between flying objects (m).
        propulsion: The propulsion parameters.

    Raises:
        ScenarioError: if a value is invalid.
    """

    num_slots: int
    duration: float
    ap_positions: np.ndarray
    warden_positions: np.ndarray
    uav_altitudes: np.ndarray
    uav_start: np.ndarray
    uav_end: np.ndarray
    sensing_box: np.ndarray
    num_samples: int = 18
    n_transmit: int = 16
    n_receive: int = 2
    n_uav: int = 2
    spacing: float = 0.5
    path_loss: float = 1e-3
    noise_radar: float = 1e-10
    noise_warden: float = 1e-10
    bandwidth: float = 30e6
    p_uav_max: float = 10e-3
    p_ap_max: float = 30.0
    f_local_max: float = 5e9
    f_edge_max: float = 50e9
    kappa_local: float = 1e-26
    kappa_edge: float = 1e-28
    task_bits: Any = 7e6
    cycles_per_bit: Any = 1e3
    gamma_min: float = 0.1
    mu_max: float = 0.0276
    v_max: float = 20.0
    d_min: float = 20.0
    propulsion: PropulsionParams = field(default_factory=PropulsionParams)

    def __post_init__(self) -> None:
        if int(self.num_slots) != self.num_slots or self.num_slots < 1:
            msg = f"num_slots has to be a positive integer but received {self.num_slots}"
            raise ScenarioError(msg)
        if not self.duration > 0:
            msg = f"duration has to be positive but received {self.duration}"
            raise ScenarioError(msg)
        aps = np.asarray(self.ap_positions, dtype=float)
        if aps.ndim == 2 and aps.shape[1] == 2:
            aps = np.hstack([aps, np.zeros((aps.shape[0], 1))])
        aps = _as_positions(aps, "ap_positions", 3)
        if aps.shape[0] < 1 or np.any(aps[:, 2] != 0):
            msg = "at least one AP is required and every AP has to be on the ground (z=0)"
            raise ScenarioError(msg)
        wardens = _as_positions(self.warden_positions, "warden_positions", 3)
        altitudes = np.atleast_1d(np.asarray(self.uav_altitudes, dtype=float))
        num_uavs = altitudes.shape[0]
        if altitudes.ndim != 1 or num_uavs < 1 or np.any(altitudes <= 0):
            msg = "uav_altitudes has to be a nonempty list of positive altitudes"
            raise ScenarioError(msg)
        start = _as_positions(self.uav_start, "uav_start", 2)
        end = _as_positions(self.uav_end, "uav_end", 2)
        if start.shape[0] != num_uavs or end.shape[0] != num_uavs:
            msg = (
                f"uav_start and uav_end need one point per UAV ({num_uavs}) "
                f"but received {start.shape[0]} and {end.shape[0]}"
            )
            raise ScenarioError(msg)
        box = np.asarray(self.sensing_box, dtype=float)
        if box.shape != (2, 3):
            msg = f"sensing_box has to be [[x0, y0, z0], [x1, y1, z1]] but received shape {box.shape}"
            raise ScenarioError(msg)
        bits = np.asarray(self.task_bits, dtype=float)
        if bits.ndim == 0:
            bits = np.full((self.num_slots, num_uavs), float(bits))
        elif bits.shape == (num_uavs,):
            bits = np.tile(bits, (self.num_slots, 1))
        if bits.shape != (self.num_slots, num_uavs) or np.any(bits < 0):
            msg = f"task_bits has to be nonnegative with shape (N, K) but received shape {bits.shape}"
            raise ScenarioError(msg)
        cycles = np.asarray(self.cycles_per_bit, dtype=float)
        if cycles.ndim == 0:
            cycles = np.full(num_uavs, float(cycles))
        if cycles.shape != (num_uavs,) or np.any(cycles <= 0):
            msg = f"cycles_per_bit has to be positive with shape (K,) but received {self.cycles_per_bit}"
            raise ScenarioError(msg)
        for name, value in (
            ("num_samples", self.num_samples),
            ("n_transmit", self.n_transmit),
            ("n_receive", self.n_receive),
            ("n_uav", self.n_uav),
        ):
            if int(value) != value or value < 1:
                msg = f"{name} has to be a positive integer but received {value}"
                raise ScenarioError(msg)
        for name in (
            "spacing",
            "path_loss",
            "noise_radar",
            "noise_warden",
            "bandwidth",
            "p_uav_max",
            "p_ap_max",
            "f_local_max",
            "f_edge_max",
            "kappa_local",
            "kappa_edge",
            "mu_max",
            "v_max",
        ):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                msg = f"{name} has to be finite and positive but received {value}"
                raise ScenarioError(msg)
        if self.gamma_min < 0 or self.d_min < 0:
            msg = "gamma_min and d_min have to be nonnegative"
            raise ScenarioError(msg)
        for name, value in (
            ("num_slots", int(self.num_slots)),
            ("num_samples", int(self.num_samples)),
            ("n_transmit", int(self.n_transmit)),
            ("n_receive", int(self.n_receive)),
            ("n_uav", int(self.n_uav)),
            ("ap_positions", aps),
            ("warden_positions", wardens),
            ("uav_altitudes", altitudes),
            ("uav_start", start),
            ("uav_end", end),
            ("sensing_box", box),
            ("task_bits", bits),
            ("cycles_per_bit", cycles),
        ):
            object.__setattr__(self, name, value)

    def __eq__(self, other: object) -> bool:
        return self.equal(other)

    __hash__ = object.__hash__

    def __repr__(self) -> str:
        args = str_indent(
            str_mapping(
                {
                    "num_aps": self.num_aps,
                    "num_uavs": self.num_uavs,
                    "num_wardens": self.num_wardens,
                    "num_slots": self.num_slots,
                    "duration": self.duration,
                    "num_samples": self.num_samples,
                    "antennas": (self.n_transmit, self.n_receive, self.n_uav),
                }
            )
        )
        return f"{self.__class__.__qualname__}(\n  {args}\n)"

    @property
    def num_aps(self) -> int:
        r"""The number of APs ``M``."""
        return self.ap_positions.shape[0]

    @property
    def num_uavs(self) -> int:
        r"""The number of UAVs ``K``."""
        return self.uav_altitudes.shape[0]

    @property
    def num_wardens(self) -> int:
        r"""The number of wardens ``L``."""
        return self.warden_positions.shape[0]

    @property
    def slot_duration(self) -> float:
        r"""The slot duration ``T/N`` (s)."""
        return self.duration / self.num_slots

    def equal(self, other: Any) -> bool:
        r"""Indicate if two scenarios hold the same values.

        Args:
            other: The other object to compare with.

        Returns:
            ``True`` if the two scenarios are equal.
        """
        if not isinstance(other, ScenarioConfig):
            return False
        return objects_are_equal(scenario_to_mapping(self), scenario_to_mapping(other))

    def replace(self, **changes: Any) -> ScenarioConfig:
        r"""Return a validated copy with some fields replaced.

        Args:
            **changes: The new field values.

        Returns:
            The new scenario.

        Example usage:

        ```pycon
        >>> from covisac.scenario import load_scenario
        >>> scenario = load_scenario("desk")
        >>> scenario.replace(p_uav_max=4e-3).p_uav_max
        0.004

        ```
        """
        return dataclasses.replace(self, **changes)

    def with_warden_case(self, case: int) -> ScenarioConfig:
        r"""Return a copy with one of the reference warden layouts.

        Args:
            case: The layout index, 1, 2 or 3.

        Returns:
            The new scenario.
        """
        return self.replace(warden_positions=warden_case(case))


def warden_case(case: int) -> np.ndarray:
    r"""Return a reference warden layout of the 300 m x 300 m area.

    Args:
        case: The layout index, 1, 2 or 3.

    Returns:
        The warden positions, shape ``(2, 3)``.

    Raises:
        InputError: if the case is unknown.

    Example usage:

    ```pycon
    >>> from covisac.scenario import warden_case
    >>> warden_case(3)
    array([[220., 130., 105.],
           [220., 170., 105.]])

    ```
    """
    if case not in _WARDEN_CASES:
        msg = f"unknown warden case {case}, expected one of {sorted(_WARDEN_CASES)}"
        raise InputError(msg)
    return np.array(_WARDEN_CASES[case], dtype=float)


def scenario_from_mapping(mapping: Mapping[str, Any]) -> ScenarioConfig:
    r"""Build a scenario from the nested mapping of a scenario file.

    Args:
        mapping: The parsed file content.

    Returns:
        The scenario.

    Raises:
        ScenarioError: if a required key is missing, a key is unknown
            or a value is invalid.
    """
    schema = mapping.get("schema", SCENARIO_SCHEMA)
    if schema != SCENARIO_SCHEMA:
        msg = f"unsupported scenario schema '{schema}', expected '{SCENARIO_SCHEMA}'"
        raise ScenarioError(msg)
    for section, key in _REQUIRED:
        if key not in mapping.get(section, {}):
            msg = f"missing required key {section}.{key}"
            raise ScenarioError(msg)
    kwargs: dict[str, Any] = {}
    for section, content in mapping.items():
        if section == "schema":
            continue
        if not isinstance(content, dict):
            msg = f"section '{section}' has to be a table"
            raise ScenarioError(msg)
        if section == "propulsion":
            unknown = sorted(set(content) - set(_PROPULSION_KEYS))
            if unknown:
                msg = f"unknown keys in [propulsion]: {unknown}"
                raise ScenarioError(msg)
            kwargs["propulsion"] = PropulsionParams(**{k: float(v) for k, v in content.items()})
            continue
        if section not in _SCHEMA:
            msg = f"unknown section [{section}]"
            raise ScenarioError(msg)
        for key, value in content.items():
            if section == "requirements" and key == "xi_min":
                continue
            if key not in _SCHEMA[section]:
                msg = f"unknown key {section}.{key}"
                raise ScenarioError(msg)
            kwargs[_SCHEMA[section][key]] = value
    requirements = mapping.get("requirements", {})
    if "xi_min" in requirements:
        if "mu_max" in requirements:
            msg = "requirements.mu_max and requirements.xi_min are mutually exclusive"
            raise ScenarioError(msg)
        try:
            kwargs["mu_max"] = covert.f_inverse(1.0 - float(requirements["xi_min"]))
        except InputError as exc:
            msg = f"invalid requirements.xi_min: {exc}"
            raise ScenarioError(msg) from exc
    try:
        return ScenarioConfig(**kwargs)
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        msg = f"invalid scenario value: {exc}"
        raise ScenarioError(msg) from exc


def scenario_to_mapping(scenario: ScenarioConfig) -> dict[str, Any]:
    r"""Convert a scenario to the nested mapping of a scenario file.

    Every parameter is written, including the ones that took default
    values, so the output echoes the resolved scenario.

    Args:
        scenario: The scenario.

    Returns:
        The nested mapping, with plain Python values only.
    """
    mapping: dict[str, Any] = {"schema": SCENARIO_SCHEMA}
    for section, keys in _SCHEMA.items():
        mapping[section] = {}
        for key, name in keys.items():
            value = getattr(scenario, name)
            mapping[section][key] = value.tolist() if isinstance(value, np.ndarray) else value
    mapping["propulsion"] = dataclasses.asdict(scenario.propulsion)
    return mapping


def dump_scenario(scenario: ScenarioConfig) -> str:
    r"""Render a scenario as TOML text.

    Args:
        scenario: The scenario.

    Returns:
        The TOML document.
    """
    return toml.dumps(scenario_to_mapping(scenario))


def _builtin_scenario(name: str) -> Path | None:
    candidate = resources.files("covisac") / "scenarios" / f"{name}.toml"
    if candidate.is_file():
        return Path(str(candidate))
    return None


def load_scenario(source: str | Path) -> ScenarioConfig:
    r"""Load a scenario from a TOML file or a shipped scenario name.

    Args:
        source: A path, or the name of a shipped scenario
            (``table1.default`` or ``desk``).

    Returns:
        The scenario.

    Raises:
        FileNotFoundError: if the file does not exist.
        ScenarioError: if the file cannot be parsed or is invalid.

    Example usage:

    ```pycon
    >>> from covisac.scenario import load_scenario
    >>> scenario = load_scenario("table1.default")
    >>> scenario.num_samples, scenario.mu_max
    (18, 0.0276)

    ```
    """
    path = Path(source)
    if not path.is_file():
        builtin = _builtin_scenario(str(source))
        if builtin is None:
            msg = f"scenario file not found: {source}"
            raise FileNotFoundError(msg)
        path = builtin
    logger.debug(f"Loading scenario from {path}")
    try:
        mapping = toml.loads(path.read_text(encoding="utf-8"))
    except toml.TomlDecodeError as exc:
        raise ScenarioError(exc.msg, line=exc.lineno) from exc
    return scenario_from_mapping(mapping)


def _grid_counts(lengths: np.ndarray, num_samples: int) -> tuple[int, int, int]:
    ideal = lengths * (num_samples / np.prod(lengths)) ** (1.0 / 3.0)
    best_key, best = None, (num_samples, 1, 1)
    for a in range(1, num_samples + 1):
        if num_samples % a:
            continue
        for b in range(1, num_samples // a + 1):
            if (num_samples // a) % b:
                continue
            counts = np.array([a, b, num_samples // (a * b)], dtype=float)
            score = float(np.sum((np.log(counts) - np.log(ideal)) ** 2))
            # Ties go to the layout that puts more points on longer axes.
            key = (round(score, 12), -float(np.dot(counts, lengths)))
            if best_key is None or key < best_key:
                best_key, best = key, (a, b, num_samples // (a * b))
    return best


def sample_sensing_area(box: np.ndarray, num_samples: int) -> np.ndarray:
    r"""Sample target locations on a regular grid of the sensing area.

    The per-axis counts are the factorization of ``num_samples``
    closest (in log scale) to the aspect ratio of the box, and the
    points are the centers of the grid cells, so every point lies
    strictly inside the box.

    Args:
        box: The lower and upper corners, shape ``(2, 3)``.
        num_samples: The number of samples ``Q``.

    Returns:
        The target positions, shape ``(Q, 3)``, x varying slowest.

    Raises:
        InputError: if ``num_samples`` is not positive.
        ScenarioError: if the box is degenerate.

    Example usage:

    ```pycon
    >>> import numpy as np
    >>> from covisac.scenario import sample_sensing_area
    >>> sample_sensing_area(np.array([[0, 0, 0], [2, 2, 2]]), 1)
    array([[1., 1., 1.]])

    ```
    """
    if num_samples < 1:
        msg = f"num_samples has to be positive but received {num_samples}"
        raise InputError(msg)
    box = np.asarray(box, dtype=float)
    lengths = box[1] - box[0]
    if box.shape != (2, 3) or np.any(~np.isfinite(lengths)) or np.any(lengths <= 0):
        msg = f"degenerate sensing box {box.tolist()}"
        raise ScenarioError(msg)
    counts = _grid_counts(lengths, int(num_samples))
    axes = [
        box[0, i] + (np.arange(counts[i]) + 0.5) * lengths[i] / counts[i] for i in range(3)
    ]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    r"""Define the horizontal UAV waypoints.

    Slot ``n`` is flown from waypoint ``n`` to waypoint ``n + 1``, and
    the channels of slot ``n`` are evaluated at waypoint ``n``.

    Args:
        waypoints: The waypoints, shape ``(K, N + 1, 2)``.
        slot_duration: The slot duration (s).
    """

    waypoints: np.ndarray
    slot_duration: float

    def __post_init__(self) -> None:
        waypoints = np.array(self.waypoints, dtype=float)
        if waypoints.ndim != 3 or waypoints.shape[2] != 2 or waypoints.shape[1] < 2:
            msg = f"waypoints has to have shape (K, N + 1, 2) but received {waypoints.shape}"
            raise InputError(msg)
        if not self.slot_duration > 0:
            msg = f"slot_duration has to be positive but received {self.slot_duration}"
            raise InputError(msg)
        waypoints.setflags(write=False)
        object.__setattr__(self, "waypoints", waypoints)

    def __eq__(self, other: object) -> bool:
        return self.equal(other)

    __hash__ = object.__hash__

    @property
    def num_uavs(self) -> int:
        r"""The number of UAVs."""
        return self.waypoints.shape[0]

    @property
    def num_slots(self) -> int:
        r"""The number of slots."""
        return self.waypoints.shape[1] - 1

    def velocities(self) -> np.ndarray:
        r"""Return the per-slot velocity vectors, shape ``(K, N, 2)``."""
        return np.diff(self.waypoints, axis=1) / self.slot_duration

    def equal(self, other: Any) -> bool:
        if not isinstance(other, Trajectory):
            return False
        return objects_are_equal(
            (self.waypoints, self.slot_duration), (other.waypoints, other.slot_duration)
        )


def velocity_from_waypoints(trajectory: Trajectory) -> np.ndarray:
    r"""Compute the per-slot UAV speeds.

    Args:
        trajectory: The trajectory.

    Returns:
        The speeds ``||u[n+1] - u[n]|| / dT``, shape ``(K, N)``.

    Example usage:

    ```pycon
    >>> import numpy as np
    >>> from covisac.scenario import Trajectory, velocity_from_waypoints
    >>> trajectory = Trajectory(np.array([[[0.0, 0.0], [20.0, 0.0]]]), slot_duration=1.0)
    >>> velocity_from_waypoints(trajectory)
    array([[20.]])

    ```
    """
    return np.linalg.norm(trajectory.velocities(), axis=2)


def propulsion_energy(trajectory: Trajectory, params: PropulsionParams) -> np.ndarray:
    r"""Compute the propulsion energy of every UAV in every slot.

    Args:
        trajectory: The trajectory.
        params: The propulsion parameters.

    Returns:
        The energies (J), shape ``(K, N)``.
    """
    speeds = velocity_from_waypoints(trajectory)
    return propulsion_power(speeds, params) * trajectory.slot_duration


def straight_trajectory(scenario: ScenarioConfig) -> Trajectory:
    r"""Return the uniform-speed straight line of every UAV.

    Args:
        scenario: The scenario.

    Returns:
        The trajectory.
    """
    fractions = np.linspace(0.0, 1.0, scenario.num_slots + 1)[None, :, None]
    start = scenario.uav_start[:, None, :]
    end = scenario.uav_end[:, None, :]
    return Trajectory(start + fractions * (end - start), scenario.slot_duration)


def uav_positions(trajectory: Trajectory, scenario: ScenarioConfig, waypoint: int) -> np.ndarray:
    r"""Return the 3-D UAV positions at one waypoint, shape ``(K, 3)``."""
    return np.hstack([trajectory.waypoints[:, waypoint, :], scenario.uav_altitudes[:, None]])


@dataclass(frozen=True)
class Violation:
    r"""Define one violated trajectory constraint.

    Args:
        constraint: The constraint family: ``speed``, ``endpoint``,
            ``uav_uav``, ``uav_warden`` or ``uav_target``.
        index: The slot (speed) or waypoint index.
        nodes: The UAV index, followed by the other node index for
            distance constraints.
        margin: The signed margin (m); negative means violated.
    """

    constraint: str
    index: int
    nodes: tuple[int, ...]
    margin: float


@dataclass(frozen=True)
class FeasibilityReport:
    r"""Define the result of a trajectory check.

    Args:
        violations: The violated constraints.
        min_margins: The smallest margin per constraint family.
    """

    violations: tuple[Violation, ...]
    min_margins: dict[str, float]

    @property
    def ok(self) -> bool:
        r"""``True`` if no constraint is violated."""
        return not self.violations

    def __repr__(self) -> str:
        args = str_indent(
            str_mapping({"ok": self.ok, "violations": len(self.violations)} | self.min_margins)
        )
        return f"{self.__class__.__qualname__}(\n  {args}\n)"


def validate_trajectory(
    trajectory: Trajectory,
    scenario: ScenarioConfig,
    target_samples: np.ndarray,
    tolerance: float = DISTANCE_TOLERANCE,
) -> FeasibilityReport:
    r"""Check a trajectory against the mobility and separation
    constraints.

    The checks cover the speed cap, both endpoints, and the minimum
    3-D distance between UAVs, between a UAV and a warden, and between
    a UAV and every target sample, at every waypoint.

    Args:
        trajectory: The trajectory.
        scenario: The scenario.
        target_samples: The target positions, shape ``(Q, 3)``.
        tolerance: The absolute tolerance on distances (m).

    Returns:
        The report. Every violation carries its index and margin.

    Raises:
        InputError: if the trajectory shape does not match the
            scenario.
    """
    num_uavs, num_slots = scenario.num_uavs, scenario.num_slots
    if trajectory.waypoints.shape != (num_uavs, num_slots + 1, 2):
        msg = (
            f"trajectory shape {trajectory.waypoints.shape} does not match "
            f"the scenario ({num_uavs}, {num_slots + 1}, 2)"
        )
        raise InputError(msg)
    margins: dict[str, list[Violation]] = {
        "speed": [],
        "endpoint": [],
        "uav_uav": [],
        "uav_warden": [],
        "uav_target": [],
    }
    steps = np.linalg.norm(np.diff(trajectory.waypoints, axis=1), axis=2)
    reach = scenario.v_max * scenario.slot_duration
    for k, n in itertools.product(range(num_uavs), range(num_slots)):
        margins["speed"].append(Violation("speed", n, (k,), float(reach - steps[k, n])))
    for k in range(num_uavs):
        for index, target in ((0, scenario.uav_start[k]), (num_slots, scenario.uav_end[k])):
            gap = float(np.linalg.norm(trajectory.waypoints[k, index] - target))
            margins["endpoint"].append(Violation("endpoint", index, (k,), -gap))
    for n in range(num_slots + 1):
        positions = uav_positions(trajectory, scenario, n)
        for k, i in itertools.combinations(range(num_uavs), 2):
            gap = float(np.linalg.norm(positions[k] - positions[i]))
            margins["uav_uav"].append(Violation("uav_uav", n, (k, i), gap - scenario.d_min))
        for k in range(num_uavs):
            for other, name in (
                (scenario.warden_positions, "uav_warden"),
                (target_samples, "uav_target"),
            ):
                for j, node in enumerate(other):
                    gap = float(np.linalg.norm(positions[k] - node))
                    margins[name].append(Violation(name, n, (k, j), gap - scenario.d_min))
    violations = tuple(v for items in margins.values() for v in items if v.margin < -tolerance)
    min_margins = {
        name: min((v.margin for v in items), default=math.inf) for name, items in margins.items()
    }
    for violation in violations:
        logger.debug(f"Trajectory violation: {violation}")
    return FeasibilityReport(violations=violations, min_margins=min_margins)


def repair_spacing(
    trajectory: Trajectory,
    scenario: ScenarioConfig,
    target_samples: np.ndarray,
    clearance: float = 1.0,
    max_passes: int = 50,
) -> Trajectory:
    r"""Push interior waypoints apart until every separation clears
    ``D_min`` by ``clearance`` meters.

    UAV pairs move symmetrically along their horizontal separating
    direction; a UAV too close to a warden or a target moves away from
    it. Endpoints never move. Coincident horizontal positions separate
    along the y axis.

    Args:
        trajectory: The trajectory to repair.
        scenario: The scenario.
        target_samples: The target positions, shape ``(Q, 3)``.
        clearance: The extra distance to clear (m).
        max_passes: The maximum number of sweeps over the waypoints.

    Returns:
        The repaired trajectory (the input if nothing moved).
    """
    waypoints = np.array(trajectory.waypoints)
    altitudes = scenario.uav_altitudes
    required = scenario.d_min + clearance
    fixed_nodes = np.vstack([scenario.warden_positions, np.asarray(target_samples).reshape(-1, 3)])

    def push(horizontal: np.ndarray, vertical: float) -> np.ndarray | None:
        planar = float(np.linalg.norm(horizontal))
        if planar**2 + vertical**2 >= required**2:
            return None
        wanted = math.sqrt(max(required**2 - vertical**2, 0.0))
        direction = horizontal / planar if planar > 1e-9 else np.array([0.0, 1.0])
        return direction * (wanted - planar)

    moved_any = False
    for _ in range(max_passes):
        moved = False
        for n in range(1, trajectory.num_slots):
            for k, i in itertools.combinations(range(trajectory.num_uavs), 2):
                step = push(waypoints[k, n] - waypoints[i, n], altitudes[k] - altitudes[i])
                if step is not None:
                    waypoints[k, n] += step / 2
                    waypoints[i, n] -= step / 2
                    moved = True
            for k in range(trajectory.num_uavs):
                for node in fixed_nodes:
                    step = push(waypoints[k, n] - node[:2], altitudes[k] - node[2])
                    if step is not None:
                        waypoints[k, n] += step
                        moved = True
        moved_any |= moved
        if not moved:
            break
    if not moved_any:
        return trajectory
    logger.debug("Repaired waypoint spacing of the initial trajectory")
    return Trajectory(waypoints, trajectory.slot_duration)
