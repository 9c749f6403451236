r"""Implement the line-of-sight channel models.

Four link families are modelled with uniform linear arrays:

- offloading links from a UAV to an AP (``N_R x N_U`` matrices),
- warden links from a UAV to a warden (``N_U`` vectors),
- jamming links from an AP to a warden (``N_T`` vectors),
- cascaded AP-target-AP sensing links (``N_R x N_T`` matrices).

Every steering phase depends on the link geometry only through the
cosine of the angle between the link and the vertical, so this module
works with clamped cosines and reports angles as their ``arccos``.
"""

from __future__ import annotations

__all__ = [
    "MIN_DISTANCE",
    "ChannelSet",
    "SteeringVector",
    "best_ap",
    "build_channel_set",
    "channel_position_derivatives",
    "jamming_channel",
    "matched_direction",
    "offload_channel",
    "sensing_channel",
    "steering",
    "warden_channel",
]

from dataclasses import dataclass
import logging
import math
from typing import TYPE_CHECKING, Any, Literal

from coola import objects_are_equal
from coola.utils import str_indent, str_mapping
import numpy as np

from covisac.errors import InputError, SingularityError
from covisac.scenario import uav_positions

if TYPE_CHECKING:
    from covisac.scenario import ScenarioConfig, Trajectory

logger = logging.getLogger(__name__)

MIN_DISTANCE = 1e-6


@dataclass(frozen=True)
class SteeringVector:
    r"""Define a ULA steering vector.

    Args:
        entries: The unit-modulus entries, the first one equal to 1.
        angle: The generating angle (rad).
        spacing: The antenna spacing over the wavelength.
    """

    entries: np.ndarray
    angle: float
    spacing: float

    def __len__(self) -> int:
        return self.entries.shape[0]


def _phase_ramp(cosine: float, size: int, spacing: float) -> np.ndarray:
    return np.exp(2j * np.pi * spacing * cosine * np.arange(size))


def steering(angle: float, size: int, spacing: float = 0.5) -> SteeringVector:
    r"""Compute the steering vector ``exp(j 2 pi spacing cos(angle) i)``.

    Args:
        angle: The angle (rad).
        size: The number of antennas.
        spacing: The antenna spacing over the wavelength.

    Returns:
        The steering vector.

    Raises:
        InputError: if ``size`` is not positive.

    Example usage:

    ```pycon
    >>> from covisac.channel import steering
    >>> steering(0.0, 2).entries.round(12)
    array([ 1.+0.j, -1.+0.j])

    ```
    """
    if size < 1:
        msg = f"size has to be positive but received {size}"
        raise InputError(msg)
    return SteeringVector(_phase_ramp(math.cos(angle), size, spacing), float(angle), spacing)


def _geometry(source: np.ndarray, node: np.ndarray, vertical: float) -> tuple[float, float]:
    offset = np.asarray(source, dtype=float) - np.asarray(node, dtype=float)
    distance = float(np.linalg.norm(offset))
    if distance < MIN_DISTANCE:
        msg = f"coincident link endpoints {np.asarray(source).tolist()} and {np.asarray(node).tolist()}"
        raise SingularityError(msg)
    return distance, min(1.0, max(-1.0, vertical / distance))


def offload_channel(
    uav: np.ndarray,
    ap: np.ndarray,
    path_loss: float,
    n_receive: int,
    n_uav: int,
    spacing: float = 0.5,
) -> np.ndarray:
    r"""Compute the channel from a UAV to an AP.

    Args:
        uav: The 3-D UAV position.
        ap: The 3-D AP position (on the ground).
        path_loss: The path loss at the reference distance ``C0``.
        n_receive: The AP receive antenna count.
        n_uav: The UAV antenna count.
        spacing: The antenna spacing over the wavelength.

    Returns:
        ``sqrt(C0)/d a_R a_U^T``, shape ``(n_receive, n_uav)``.

    Raises:
        SingularityError: if the positions coincide.

    Example usage:

    ```pycon
    >>> import numpy as np
    >>> from covisac.channel import offload_channel
    >>> offload_channel(np.array([0, 0, 100.0]), np.zeros(3), 1e-3, 1, 1).round(8)
    array([[0.00031623+0.j]])

    ```
    """
    distance, cosine = _geometry(uav, ap, uav[2] - ap[2])
    gain = math.sqrt(path_loss) / distance
    return gain * np.outer(
        _phase_ramp(cosine, n_receive, spacing), _phase_ramp(cosine, n_uav, spacing)
    )


def warden_channel(
    uav: np.ndarray, warden: np.ndarray, path_loss: float, n_uav: int, spacing: float = 0.5
) -> np.ndarray:
    r"""Compute the channel from a UAV to a warden.

    The angle is ``arccos((H_W - H_k)/d)``.

    Args:
        uav: The 3-D UAV position.
        warden: The 3-D warden position.
        path_loss: The path loss at the reference distance.
        n_uav: The UAV antenna count.
        spacing: The antenna spacing over the wavelength.

    Returns:
        The channel vector, shape ``(n_uav,)``.

    Raises:
        SingularityError: if the positions coincide.
    """
    distance, cosine = _geometry(uav, warden, warden[2] - uav[2])
    return math.sqrt(path_loss) / distance * _phase_ramp(cosine, n_uav, spacing)


def jamming_channel(
    ap: np.ndarray, warden: np.ndarray, path_loss: float, n_transmit: int, spacing: float = 0.5
) -> np.ndarray:
    r"""Compute the channel from an AP to a warden.

    The angle is ``arccos(H_W/d)``.

    Args:
        ap: The 3-D AP position.
        warden: The 3-D warden position.
        path_loss: The path loss at the reference distance.
        n_transmit: The AP transmit antenna count.
        spacing: The antenna spacing over the wavelength.

    Returns:
        The channel vector, shape ``(n_transmit,)``.

    Raises:
        SingularityError: if the positions coincide.
    """
    distance, cosine = _geometry(warden, ap, warden[2] - ap[2])
    return math.sqrt(path_loss) / distance * _phase_ramp(cosine, n_transmit, spacing)


def sensing_channel(
    ap_tx: np.ndarray,
    ap_rx: np.ndarray,
    target: np.ndarray,
    path_loss: float,
    n_transmit: int,
    n_receive: int,
    spacing: float = 0.5,
) -> np.ndarray:
    r"""Compute the cascaded channel from a transmitting AP to a
    receiving AP through a target.

    Args:
        ap_tx: The 3-D position of the transmitting AP ``m``.
        ap_rx: The 3-D position of the receiving AP ``j``.
        target: The 3-D target position.
        path_loss: The path loss at the reference distance.
        n_transmit: The AP transmit antenna count.
        n_receive: The AP receive antenna count.
        spacing: The antenna spacing over the wavelength.

    Returns:
        ``C0/(d_m d_j) a_R(beta_j) a_T(beta_m)^T``, shape
            ``(n_receive, n_transmit)``.

    Raises:
        SingularityError: if the target sits on an AP.
    """
    d_tx, cos_tx = _geometry(target, ap_tx, target[2] - ap_tx[2])
    d_rx, cos_rx = _geometry(target, ap_rx, target[2] - ap_rx[2])
    return (
        path_loss
        / (d_tx * d_rx)
        * np.outer(
            _phase_ramp(cos_rx, n_receive, spacing), _phase_ramp(cos_tx, n_transmit, spacing)
        )
    )


def channel_position_derivatives(
    uav: np.ndarray,
    node: np.ndarray,
    path_loss: float,
    n_uav: int,
    spacing: float = 0.5,
    link: Literal["offload", "warden"] = "offload",
    n_receive: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    r"""Compute the derivatives of a UAV link channel with respect to
    the horizontal UAV coordinates.

    With ``c`` the vertical offset that defines the link angle
    (``H_k`` for offloading, ``H_W - H_k`` for a warden), the cosine is
    ``c/d`` and, along x,

    - ``d(1/d)/dx = (x_node - x)/d^3``,
    - ``d(cos)/dx = c (x_node - x)/d^3``,
    - entry ``i`` of ``da/dx`` is ``j 2 pi spacing i d(cos)/dx a_i``, so
      the first entry is always 0.

    The offloading derivative is
    ``sqrt(C0) [d(1/d)/dx a_R a_U^T + (da_R/dx a_U^T + a_R da_U^T/dx)/d]``
    and the warden derivative ``sqrt(C0) [d(1/d)/dx a_U + da_U/dx / d]``.
    The y case swaps the coordinates.

    Args:
        uav: The 3-D UAV position.
        node: The 3-D AP (offloading) or warden position.
        path_loss: The path loss at the reference distance.
        n_uav: The UAV antenna count.
        spacing: The antenna spacing over the wavelength.
        link: ``"offload"`` or ``"warden"``.
        n_receive: The AP receive antenna count (offloading only).

    Returns:
        The derivatives along x and y, each with the shape of the
            channel.

    Raises:
        SingularityError: if the positions coincide.
    """
    if link not in ("offload", "warden"):
        msg = f"link has to be 'offload' or 'warden' but received '{link}'"
        raise InputError(msg)
    vertical = uav[2] - node[2] if link == "offload" else node[2] - uav[2]
    distance, cosine = _geometry(uav, node, vertical)
    root = math.sqrt(path_loss)
    a_uav = _phase_ramp(cosine, n_uav, spacing)
    ramp_uav = 2j * np.pi * spacing * np.arange(n_uav)
    derivatives = []
    for axis in (0, 1):
        inverse_distance = (node[axis] - uav[axis]) / distance**3
        cosine_rate = vertical * inverse_distance
        da_uav = ramp_uav * cosine_rate * a_uav
        if link == "warden":
            derivatives.append(root * (inverse_distance * a_uav + da_uav / distance))
            continue
        a_ap = _phase_ramp(cosine, n_receive, spacing)
        da_ap = 2j * np.pi * spacing * np.arange(n_receive) * cosine_rate * a_ap
        derivatives.append(
            root
            * (
                inverse_distance * np.outer(a_ap, a_uav)
                + (np.outer(da_ap, a_uav) + np.outer(a_ap, da_uav)) / distance
            )
        )
    return derivatives[0], derivatives[1]


def matched_direction(channel: np.ndarray) -> np.ndarray:
    r"""Return the unit transmit direction that maximizes
    ``||channel @ w||``.

    The phase is normalized so that the first nonzero entry is real
    and positive.

    Args:
        channel: The channel matrix, shape ``(rows, n_uav)``.

    Returns:
        The direction, shape ``(n_uav,)``.
    """
    _, _, vh = np.linalg.svd(np.atleast_2d(channel))
    direction = vh[0].conj()
    pivot = direction[np.argmax(np.abs(direction) > 1e-12)]
    return direction * (abs(pivot) / pivot)


def best_ap(offload: np.ndarray, n_receive: int) -> int:
    r"""Return the index of the AP with the strongest block of an
    aggregate offloading channel.

    Args:
        offload: The aggregate channel, shape ``(M n_receive, n_uav)``.
        n_receive: The AP receive antenna count.

    Returns:
        The AP index.
    """
    blocks = offload.reshape(-1, n_receive, offload.shape[-1])
    return int(np.argmax(np.linalg.norm(blocks, axis=(1, 2))))


@dataclass(frozen=True, eq=False)
class ChannelSet:
    r"""Define all the channels of a scenario along a trajectory.

    Aggregates stack their AP blocks: the offloading channel of a UAV
    stacks its ``M`` blocks vertically, the jamming channel of a warden
    stacks its ``M`` vectors, and the sensing channel of a target is the
    ``M x M`` block matrix whose block ``(j, m)`` is the link from
    transmitting AP ``m`` to receiving AP ``j``.

    Args:
        offload: The offloading channels, shape ``(N, K, M N_R, N_U)``.
        warden: The warden channels, shape ``(N, L, K, N_U)``.
        jamming: The jamming channels, shape ``(L, M N_T)``. They do
            not depend on the slot.
        sensing: The sensing channels, shape ``(Q, M N_R, M N_T)``.
            They do not depend on the slot.
        noise_radar: The AP receiver noise power (W).
        noise_warden: The warden noise power (W).
        n_receive: The AP receive antenna count.
        n_transmit: The AP transmit antenna count.
    """

    offload: np.ndarray
    warden: np.ndarray
    jamming: np.ndarray
    sensing: np.ndarray
    noise_radar: float
    noise_warden: float
    n_receive: int
    n_transmit: int

    def __post_init__(self) -> None:
        for name in ("offload", "warden", "jamming", "sensing"):
            array = np.array(getattr(self, name), dtype=complex)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    def __eq__(self, other: object) -> bool:
        return self.equal(other)

    __hash__ = object.__hash__

    def __repr__(self) -> str:
        args = str_indent(
            str_mapping(
                {
                    "offload": self.offload.shape,
                    "warden": self.warden.shape,
                    "jamming": self.jamming.shape,
                    "sensing": self.sensing.shape,
                }
            )
        )
        return f"{self.__class__.__qualname__}(\n  {args}\n)"

    @property
    def num_slots(self) -> int:
        r"""The number of slots."""
        return self.offload.shape[0]

    @property
    def num_aps(self) -> int:
        r"""The number of APs."""
        return self.offload.shape[2] // self.n_receive

    @property
    def receive_dim(self) -> int:
        r"""The aggregate receive dimension ``M N_R``."""
        return self.offload.shape[2]

    @property
    def transmit_dim(self) -> int:
        r"""The aggregate transmit dimension ``M N_T``."""
        return self.sensing.shape[2]

    def offload_block(self, slot: int, uav: int, ap: int) -> np.ndarray:
        r"""Return the block of one AP in an aggregate offloading
        channel."""
        rows = slice(ap * self.n_receive, (ap + 1) * self.n_receive)
        return self.offload[slot, uav, rows]

    def sensing_block(self, sample: int, ap_tx: int, ap_rx: int) -> np.ndarray:
        r"""Return the link from AP ``ap_tx`` to AP ``ap_rx`` in an
        aggregate sensing channel."""
        rows = slice(ap_rx * self.n_receive, (ap_rx + 1) * self.n_receive)
        cols = slice(ap_tx * self.n_transmit, (ap_tx + 1) * self.n_transmit)
        return self.sensing[sample, rows, cols]

    def equal(self, other: Any) -> bool:
        if not isinstance(other, ChannelSet):
            return False
        return objects_are_equal(self.__dict__, other.__dict__)


def build_channel_set(
    scenario: ScenarioConfig, trajectory: Trajectory, target_samples: np.ndarray
) -> ChannelSet:
    r"""Compute every channel of a scenario along a trajectory.

    Args:
        scenario: The scenario.
        trajectory: The trajectory. Slot ``n`` uses waypoint ``n``.
        target_samples: The target positions, shape ``(Q, 3)``.

    Returns:
        The channels.

    Raises:
        SingularityError: if a link has coincident endpoints.
    """
    n_slots, n_uavs, n_wardens = scenario.num_slots, scenario.num_uavs, scenario.num_wardens
    aps, wardens = scenario.ap_positions, scenario.warden_positions
    c0, spacing = scenario.path_loss, scenario.spacing
    n_r, n_t, n_u = scenario.n_receive, scenario.n_transmit, scenario.n_uav
    offload = np.zeros((n_slots, n_uavs, scenario.num_aps * n_r, n_u), dtype=complex)
    warden = np.zeros((n_slots, n_wardens, n_uavs, n_u), dtype=complex)
    for n in range(n_slots):
        positions = uav_positions(trajectory, scenario, n)
        for k, uav in enumerate(positions):
            offload[n, k] = np.vstack(
                [offload_channel(uav, ap, c0, n_r, n_u, spacing) for ap in aps]
            )
            for idx, node in enumerate(wardens):
                warden[n, idx, k] = warden_channel(uav, node, c0, n_u, spacing)
    jamming = np.array(
        [
            np.concatenate([jamming_channel(ap, node, c0, n_t, spacing) for ap in aps])
            for node in wardens
        ],
        dtype=complex,
    ).reshape(n_wardens, scenario.num_aps * n_t)
    sensing = np.array(
        [
            np.block(
                [
                    [sensing_channel(ap_tx, ap_rx, target, c0, n_t, n_r, spacing) for ap_tx in aps]
                    for ap_rx in aps
                ]
            )
            for target in target_samples
        ],
        dtype=complex,
    )
    logger.debug(
        f"Built channels for {n_slots} slots, {n_uavs} UAVs, {n_wardens} wardens "
        f"and {len(target_samples)} target samples"
    )
    return ChannelSet(
        offload=offload,
        warden=warden,
        jamming=jamming,
        sensing=sensing,
        noise_radar=scenario.noise_radar,
        noise_warden=scenario.noise_warden,
        n_receive=n_r,
        n_transmit=n_t,
    )
