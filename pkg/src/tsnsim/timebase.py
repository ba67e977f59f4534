"""Nanosecond time values and drifting per-device clocks.

All simulation time is plain ``int`` nanoseconds measured from the start of
the run ("true time").  Each device owns a :class:`LocalClock` that maps true
time to what the device's hardware counter shows:

    raw(t)     = base_reading + (t - base_true) * (1 + slope_ppm * 1e-6)
    reading(t) = round((raw(t) - intercept) / slope) + noise

The counter itself is purely affine.  Gaussian jitter is added per read and
never fed back into the clock state, so compensation stays exactly solvable.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace
from typing import Optional, Tuple

NS_PER_S = 1_000_000_000
PPM = 1e-6

#: Largest representable time (signed 64-bit range).
MAX_TIME_NS = 2**63 - 1
MAX_SLOPE_PPM = 10_000.0


class ClockError(ValueError):
    """Invalid clock parameters or a corrupt compensation request."""


@dataclass(frozen=True)
class DriftModel:
    """Affine drift of a device counter relative to true time.

    Args:
        slope_ppm: Rate deviation in parts per million; positive runs fast.
        offset_ns: Counter value at true time zero.
        noise_sigma_ns: Standard deviation of the per-read Gaussian jitter.
    """

    slope_ppm: float = 0.0
    offset_ns: int = 0
    noise_sigma_ns: float = 0.0

    def __post_init__(self):
        if abs(self.slope_ppm) > MAX_SLOPE_PPM:
            raise ClockError(
                f"|slope_ppm|={abs(self.slope_ppm)} exceeds {MAX_SLOPE_PPM}"
            )
        if self.noise_sigma_ns < 0:
            raise ClockError("noise_sigma_ns must be non-negative")

    @property
    def rate(self) -> float:
        return 1.0 + self.slope_ppm * PPM


@dataclass(frozen=True)
class LocalClock:
    """A device clock: drift model, optional compensation and set point.

    ``compensation`` is ``(slope, intercept)`` applied to the raw counter.
    ``base_true``/``base_reading`` record the last time the counter was set;
    ``base_reading=None`` means the counter was never set and starts at the
    drift model's offset.
    """

    drift: DriftModel = DriftModel()
    compensation: Optional[Tuple[float, float]] = None
    base_true: int = 0
    base_reading: Optional[float] = None

    def raw(self, true_time: int) -> float:
        """Unrounded, noise-free hardware counter value."""
        start = self.drift.offset_ns if self.base_reading is None else self.base_reading
        dt = true_time - self.base_true
        return start + dt + dt * self.drift.slope_ppm * PPM

    def value(self, true_time: int) -> float:
        """Unrounded, noise-free compensated reading."""
        raw = self.raw(true_time)
        if self.compensation is None:
            return raw
        slope, intercept = self.compensation
        return (raw - intercept) / slope

    @property
    def rate(self) -> float:
        """Local nanoseconds elapsed per true nanosecond."""
        if self.compensation is None:
            return self.drift.rate
        return self.drift.rate / self.compensation[0]


def _round(x: float) -> int:
    return math.floor(x + 0.5)


def read_local(
    clock: LocalClock, true_time: int, rng: Optional[random.Random] = None
) -> int:
    """Read ``clock`` at ``true_time``.

    Jitter is drawn from ``rng`` only when one is given and the clock has a
    non-zero noise sigma; passing ``rng=None`` reads the exact counter, which
    is what gate enforcement uses.
    """
    if true_time < clock.base_true:
        raise ClockError(
            f"read at {true_time} precedes clock base {clock.base_true}"
        )
    value = clock.value(true_time)
    if rng is not None and clock.drift.noise_sigma_ns > 0:
        value += rng.gauss(0.0, clock.drift.noise_sigma_ns)
    return max(0, _round(value))


def set_clock(clock: LocalClock, new_reading: int, at_true_time: int) -> LocalClock:
    """Return ``clock`` set so that it reads ``new_reading`` at ``at_true_time``.

    The active compensation is kept; the raw counter is moved so the
    compensated reading lands on ``new_reading``.
    """
    if clock.compensation is None:
        raw = float(new_reading)
    else:
        slope, intercept = clock.compensation
        raw = new_reading * slope + intercept
    return replace(clock, base_true=at_true_time, base_reading=raw)


def apply_compensation(clock: LocalClock, slope: float, intercept: float) -> LocalClock:
    """Install a ``(slope, intercept)`` correction on the raw counter.

    Raises:
        ClockError: if ``slope`` is not strictly positive (corrupt packet).
    """
    if not slope > 0 or not math.isfinite(slope):
        raise ClockError(f"corrupt compensation: slope={slope!r}")
    if not math.isfinite(intercept):
        raise ClockError(f"corrupt compensation: intercept={intercept!r}")
    return replace(clock, compensation=(float(slope), float(intercept)))


def remove_compensation(clock: LocalClock) -> LocalClock:
    return replace(clock, compensation=None)


def true_time_at(clock: LocalClock, local_ns: int) -> int:
    """Earliest true time at which the exact reading reaches ``local_ns``.

    The affine model is inverted in floating point and then corrected by
    stepping, so the result satisfies ``read_local(t) >= local_ns`` and
    ``read_local(t - 1) < local_ns`` (unless clamped to ``base_true``).
    """
    rate = clock.rate
    if rate <= 0:
        raise ClockError("clock does not advance")
    here = clock.value(clock.base_true)
    guess = clock.base_true + math.ceil((local_ns - 0.5 - here) / rate)
    t = max(clock.base_true, guess)
    while t > clock.base_true and read_local(clock, t - 1) >= local_ns:
        t -= 1
    while read_local(clock, t) < local_ns:
        t += 1
    return t


def check_time(t: int) -> int:
    if not 0 <= t <= MAX_TIME_NS:
        raise ValueError(f"time {t} outside [0, 2**63)")
    return t
