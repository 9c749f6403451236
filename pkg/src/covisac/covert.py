r"""Implement the warden detection model.

A warden runs an energy detector on the power it receives in a slot.
Under silence the power is exponential with mean ``lambda0``; while
the UAVs transmit it is exponential with mean ``lambda1``. The optimal
threshold and the minimum detection error probability (DEP) have
closed forms in the relative excess ``mu = (lambda1 - lambda0)/lambda0``,
and a Monte Carlo oracle re-estimates them from samples.
"""

from __future__ import annotations

__all__ = [
    "MU_TOLERANCE",
    "DetectionStats",
    "MonteCarloDep",
    "dep_from_mu",
    "dep_min",
    "detection_error",
    "detection_stats",
    "f_inverse",
    "f_transform",
    "false_alarm",
    "lambda_pair",
    "mc_dep_oracle",
    "missed_detection",
    "optimal_threshold",
]

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging
import math
from typing import TYPE_CHECKING

from coola.utils import str_indent, str_mapping
import numpy as np
from scipy import optimize

from covisac.errors import DegenerateDetectionError, InputError

if TYPE_CHECKING:
    from covisac.channel import ChannelSet
    from covisac.metrics import ResourceAllocation

logger = logging.getLogger(__name__)

MU_TOLERANCE = 1e-12
MIN_MC_SAMPLES = 10_000
# The Monte Carlo samples are split into a fixed number of streams so
# that the estimate does not depend on the worker count.
_NUM_STREAMS = 8


@dataclass(frozen=True)
class DetectionStats:
    r"""Define the second-order statistics seen by one warden.

    Args:
        lambda0: The expected received power without transmission (W).
        lambda1: The expected received power with transmission (W).

    Raises:
        InputError: if a power is not finite and positive.

    Example usage:

    ```pycon
    >>> from covisac.covert import DetectionStats
    >>> DetectionStats(lambda0=1.0, lambda1=2.0).mu
    1.0

    ```
    """

    lambda0: float
    lambda1: float

    def __post_init__(self) -> None:
        for name in ("lambda0", "lambda1"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                msg = f"{name} has to be finite and positive but received {value}"
                raise InputError(msg)

    @property
    def mu(self) -> float:
        r"""The relative excess ``(lambda1 - lambda0) / lambda0``."""
        return (self.lambda1 - self.lambda0) / self.lambda0

    def scaled(self, factor: float) -> DetectionStats:
        r"""Return the statistics with both powers multiplied by
        ``factor``."""
        return DetectionStats(self.lambda0 * factor, self.lambda1 * factor)


def lambda_pair(
    warden: int, slot: int, alloc: ResourceAllocation, channels: ChannelSet
) -> tuple[float, float]:
    r"""Compute the expected powers received by one warden in one slot.

    Args:
        warden: The warden index ``l``.
        slot: The slot index.
        alloc: The allocation of the slot.
        channels: The channels.

    Returns:
        The pair ``(lambda0, lambda1)`` (W).
    """
    jam = channels.jamming[warden]
    noise = channels.noise_warden
    lambda0 = float(np.real(np.vdot(jam, alloc.r0 @ jam))) + noise
    leak = sum(
        abs(np.vdot(channels.warden[slot, warden, k], alloc.w[k])) ** 2
        for k in range(alloc.w.shape[0])
    )
    lambda1 = float(leak + np.real(np.vdot(jam, alloc.r1 @ jam))) + noise
    return lambda0, lambda1


def detection_stats(
    warden: int, slot: int, alloc: ResourceAllocation, channels: ChannelSet
) -> DetectionStats:
    r"""Return the ``DetectionStats`` of one warden in one slot."""
    return DetectionStats(*lambda_pair(warden, slot, alloc, channels))


def f_transform(mu: float) -> float:
    r"""Compute ``F(mu) = mu (1 + mu)^-(1 + 1/mu)``.

    ``F`` is evaluated in the log domain so that large ``mu`` does not
    overflow.

    Args:
        mu: The relative excess, positive.

    Returns:
        The value of ``F``, in ``(0, 1)``.

    Raises:
        InputError: if ``mu`` is not positive.

    Example usage:

    ```pycon
    >>> from covisac.covert import f_transform
    >>> round(f_transform(1.0), 12)
    0.25

    ```
    """
    if not mu > 0:
        msg = f"mu has to be positive but received {mu}"
        raise InputError(msg)
    return math.exp(_log_f(mu))


def _log_f(mu: float) -> float:
    return math.log(mu) - (1.0 + 1.0 / mu) * math.log1p(mu)


def f_inverse(y: float) -> float:
    r"""Invert ``F`` by bisection.

    ``F`` is strictly increasing from 0 to 1, and ``F(mu) < mu``, so the
    root is bracketed by ``[y, hi]`` where ``hi`` doubles until
    ``F(hi) > y``.

    Args:
        y: The target value, in ``(0, 1)``.

    Returns:
        ``mu`` such that ``F(mu) = y``, to an absolute tolerance of
            ``1e-10``.

    Raises:
        InputError: if ``y`` is outside ``(0, 1)``.

    Example usage:

    ```pycon
    >>> from covisac.covert import f_inverse
    >>> round(f_inverse(0.01), 4)
    0.0276

    ```
    """
    if not 0.0 < y < 1.0:
        msg = f"y has to be in (0, 1) but received {y}"
        raise InputError(msg)
    target = math.log(y)
    hi = 1.0
    while _log_f(hi) <= target:
        hi *= 2.0
    return optimize.bisect(lambda mu: _log_f(mu) - target, y, hi, xtol=1e-10, maxiter=500)


def optimal_threshold(stats: DetectionStats) -> float:
    r"""Compute the threshold that minimizes the warden DEP.

    Args:
        stats: The warden statistics.

    Returns:
        ``lambda0 (1 + mu)/mu ln(1 + mu)`` (W).

    Raises:
        DegenerateDetectionError: if ``mu`` is below the detectability
            tolerance.

    Example usage:

    ```pycon
    >>> from covisac.covert import DetectionStats, optimal_threshold
    >>> round(optimal_threshold(DetectionStats(1.0, 2.0)), 4)
    1.3863

    ```
    """
    mu = stats.mu
    if mu <= MU_TOLERANCE:
        msg = f"mu={mu} is not detectable, the optimal threshold is undefined"
        raise DegenerateDetectionError(msg)
    return stats.lambda0 * (1.0 + mu) / mu * math.log1p(mu)


def dep_from_mu(mu: float) -> float:
    r"""Compute the minimum DEP as a function of ``mu``.

    Args:
        mu: The relative excess.

    Returns:
        ``1 + exp(-(1+mu)/mu ln(1+mu)) - exp(-ln(1+mu)/mu)``, and 1 when
            ``mu`` is below the detectability tolerance.

    Example usage:

    ```pycon
    >>> from covisac.covert import dep_from_mu
    >>> round(dep_from_mu(1.0), 12)
    0.75
    >>> dep_from_mu(0.0)
    1.0

    ```
    """
    if mu <= MU_TOLERANCE:
        return 1.0
    log_ratio = math.log1p(mu) / mu
    return 1.0 + math.exp(-(1.0 + mu) * log_ratio) - math.exp(-log_ratio)


def dep_min(stats: DetectionStats) -> float:
    r"""Compute the minimum DEP of a warden.

    Args:
        stats: The warden statistics.

    Returns:
        The minimum DEP, in ``(0, 1]``.
    """
    return dep_from_mu(stats.mu)


def false_alarm(stats: DetectionStats, threshold: float) -> float:
    r"""Return the probability that silence exceeds ``threshold``."""
    return math.exp(-threshold / stats.lambda0)


def missed_detection(stats: DetectionStats, threshold: float) -> float:
    r"""Return the probability that a transmission stays below
    ``threshold``."""
    return -math.expm1(-threshold / stats.lambda1)


def detection_error(stats: DetectionStats, threshold: float) -> float:
    r"""Return the DEP of the detector with a given threshold.

    Args:
        stats: The warden statistics.
        threshold: The detection threshold (W).

    Returns:
        The false alarm plus missed detection probabilities.
    """
    return false_alarm(stats, threshold) + missed_detection(stats, threshold)


@dataclass(frozen=True)
class MonteCarloDep:
    r"""Define the result of the Monte Carlo DEP oracle.

    Args:
        estimate: The empirical DEP at the optimal threshold.
        stderr: The standard error of ``estimate``.
        threshold: The threshold used (W).
        grid_minimum: The smallest empirical DEP over the threshold
            grid.
        grid_threshold: The grid threshold reaching ``grid_minimum``.
        samples: The number of samples per hypothesis.
    """

    estimate: float
    stderr: float
    threshold: float
    grid_minimum: float
    grid_threshold: float
    samples: int

    def __repr__(self) -> str:
        args = str_indent(
            str_mapping(
                {
                    "estimate": self.estimate,
                    "stderr": self.stderr,
                    "threshold": self.threshold,
                    "grid_minimum": self.grid_minimum,
                    "samples": self.samples,
                }
            )
        )
        return f"{self.__class__.__qualname__}(\n  {args}\n)"

    @property
    def threshold_is_optimal(self) -> bool:
        r"""``True`` if no grid threshold beats the optimal one beyond
        three standard errors."""
        return self.grid_minimum >= self.estimate - 3.0 * self.stderr


def _draw_stream(
    seed: np.random.SeedSequence, size: int, stats: DetectionStats
) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.exponential(stats.lambda0, size), rng.exponential(stats.lambda1, size)


def mc_dep_oracle(
    stats: DetectionStats,
    samples: int,
    seed: int,
    workers: int = 1,
    grid_points: int = 400,
) -> MonteCarloDep:
    r"""Estimate the minimum DEP by simulating the energy detector.

    The received power ``|y|^2`` of a circularly-symmetric Gaussian
    sample is exponential with the hypothesis mean. The samples are
    drawn from a fixed set of counter-based (Philox) streams spawned
    from ``seed``; ``workers`` only changes how the streams are
    scheduled, never the result.

    Args:
        stats: The warden statistics.
        samples: The number of samples per hypothesis.
        seed: The random seed.
        workers: The number of threads.
        grid_points: The number of thresholds of the confirmation
            grid search.

    Returns:
        The estimate, its standard error and the grid-search summary.

    Raises:
        InputError: if fewer than ``10^4`` samples are requested.

    Example usage:

    ```pycon
    >>> from covisac.covert import DetectionStats, mc_dep_oracle
    >>> result = mc_dep_oracle(DetectionStats(1.0, 2.0), samples=100_000, seed=0)
    >>> abs(result.estimate - 0.75) < 3 * result.stderr + 5e-3
    True

    ```
    """
    if samples < MIN_MC_SAMPLES:
        msg = f"samples has to be at least {MIN_MC_SAMPLES:,} but received {samples:,}"
        raise InputError(msg)
    sizes = [samples // _NUM_STREAMS + (i < samples % _NUM_STREAMS) for i in range(_NUM_STREAMS)]
    seeds = np.random.SeedSequence(seed).spawn(_NUM_STREAMS)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        draws = list(executor.map(lambda args: _draw_stream(*args, stats), zip(seeds, sizes)))
    silent = np.sort(np.concatenate([d[0] for d in draws]))
    active = np.sort(np.concatenate([d[1] for d in draws]))

    def empirical(thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        fa = (samples - np.searchsorted(silent, thresholds, side="right")) / samples
        md = np.searchsorted(active, thresholds, side="left") / samples
        return fa, md

    try:
        threshold = optimal_threshold(stats)
    except DegenerateDetectionError:
        threshold = stats.lambda0
    fa, md = empirical(np.array([threshold]))
    estimate = float(fa[0] + md[0])
    stderr = math.sqrt(fa[0] * (1 - fa[0]) / samples + md[0] * (1 - md[0]) / samples)
    grid = np.linspace(0.0, 4.0 * max(stats.lambda0, stats.lambda1), grid_points)
    grid_fa, grid_md = empirical(grid)
    errors = grid_fa + grid_md
    best = int(np.argmin(errors))
    logger.debug(
        f"MC DEP mu={stats.mu:.6g}: estimate={estimate:.6f} +/- {stderr:.2e}, "
        f"grid minimum {errors[best]:.6f} at {grid[best]:.6g}"
    )
    return MonteCarloDep(
        estimate=estimate,
        stderr=stderr,
        threshold=threshold,
        grid_minimum=float(errors[best]),
        grid_threshold=float(grid[best]),
        samples=samples,
    )
