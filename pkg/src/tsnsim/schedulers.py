"""Egress scheduling policies and the per-queue shaper state.

Four policies are modelled:

* ``rr``     round robin over non-empty queues,
* ``sp``     strict priority, queue 0 (ST) first,
* ``taprio`` gate control with transitions that take effect late by a
             random kernel-latency sample,
* ``utas``   gate control enforced exactly at slot boundaries.

Gate-based policies use a "start only if you can finish" guard band: the
head packet may start only when its transmission time at the egress cap
ends strictly before the gate closes.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from tsnsim.gcl import GateControlList, validate_gcl
from tsnsim.netmodel import BoundedQueue, serialization_time


class SchedulerKind(str, enum.Enum):
    RR = "rr"
    SP = "sp"
    TAPRIO = "taprio"
    UTAS = "utas"

    @property
    def gated(self) -> bool:
        return self in (SchedulerKind.TAPRIO, SchedulerKind.UTAS)


#: Fixed output order for suites and summaries.
SUITE_ORDER = (SchedulerKind.RR, SchedulerKind.SP, SchedulerKind.TAPRIO, SchedulerKind.UTAS)


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class JitterModel:
    """Truncated lognormal delay applied to every TAPRIO gate transition."""

    median_ns: float = 150_000.0
    sigma: float = 0.6
    cap_ns: int = 2_000_000

    def __post_init__(self):
        if self.median_ns < 0 or self.sigma < 0 or self.cap_ns < 0:
            raise ConfigurationError("jitter parameters must be non-negative")

    def sample(self, rng: random.Random) -> int:
        if self.median_ns == 0:
            return 0
        mu = math.log(self.median_ns)
        while True:
            x = rng.lognormvariate(mu, self.sigma)
            if x <= self.cap_ns:
                return int(round(x))


@dataclass
class SchedulerPolicy:
    kind: SchedulerKind
    gcl: Optional[GateControlList] = None
    jitter_model: Optional[JitterModel] = None
    rr_cursor: int = -1

    def __post_init__(self):
        self.kind = SchedulerKind(self.kind)
        if self.kind.gated:
            if self.gcl is None:
                raise ConfigurationError(f"{self.kind.value} requires a GCL")
            problems = validate_gcl(self.gcl)
            if problems:
                raise ConfigurationError("invalid GCL: " + "; ".join(p.detail for p in problems))
        if self.jitter_model is not None and self.kind is not SchedulerKind.TAPRIO:
            raise ConfigurationError("jitter applies only to taprio")
        if self.kind is SchedulerKind.TAPRIO and self.jitter_model is None:
            self.jitter_model = JitterModel()


@dataclass(frozen=True)
class ShaperState:
    """Per-queue bandwidth share: True is full rate, False is zero."""

    full: Tuple[bool, ...]

    @classmethod
    def all_full(cls, n: int) -> "ShaperState":
        return cls((True,) * n)

    @classmethod
    def only(cls, queue_id: Optional[int], n: int) -> "ShaperState":
        return cls(tuple(q == queue_id for q in range(n)))

    @property
    def open_queue(self) -> Optional[int]:
        opened = [q for q, f in enumerate(self.full) if f]
        return opened[0] if len(opened) == 1 else None


def initial_shaper(policy: SchedulerPolicy, n_queues: int, local_now: int) -> ShaperState:
    if not policy.kind.gated:
        return ShaperState.all_full(n_queues)
    return ShaperState.only(policy.gcl.open_queue(local_now % policy.gcl.cycle_time_ns), n_queues)


def _guard_ok(gcl: GateControlList, queue_id: int, local_now: int, needed_ns: int) -> bool:
    left = gcl.time_to_close(queue_id, local_now % gcl.cycle_time_ns)
    return left is None or needed_ns < left


def pick_next(
    policy: SchedulerPolicy,
    queues: Sequence[BoundedQueue],
    local_now: int,
    port_free: bool = True,
    shaper: Optional[ShaperState] = None,
    egress_cap_bps: int = 15_000_000,
    commit: bool = True,
) -> Optional[int]:
    """Queue to serve next on an idle egress port, or None.

    ``shaper`` carries the effective (possibly late) gate state and is only
    consulted by ``taprio``.  With ``commit=False`` the round-robin cursor is
    left untouched so the caller can peek.
    """
    if not port_free:
        return None
    kind = policy.kind
    n = len(queues)
    if kind is SchedulerKind.SP:
        for q in range(n):
            if queues[q].items:
                return q
        return None
    if kind is SchedulerKind.RR:
        for step in range(1, n + 1):
            q = (policy.rr_cursor + step) % n
            if queues[q].items:
                if commit:
                    policy.rr_cursor = q
                return q
        return None

    gcl = policy.gcl
    if kind is SchedulerKind.UTAS:
        q = gcl.open_queue(local_now % gcl.cycle_time_ns)
        if q is None or q >= n or not queues[q].items:
            return None
        needed = serialization_time(queues[q].head().len_bytes, egress_cap_bps)
        return q if _guard_ok(gcl, q, local_now, needed) else None

    # taprio: the effective gate may lag the nominal schedule.
    q = shaper.open_queue if shaper is not None else gcl.open_queue(local_now % gcl.cycle_time_ns)
    if q is None or q >= n or not queues[q].items:
        return None
    if gcl.open_queue(local_now % gcl.cycle_time_ns) != q:
        # Late transition: the stale queue keeps sending past the nominal close.
        return q
    needed = serialization_time(queues[q].head().len_bytes, egress_cap_bps)
    return q if _guard_ok(gcl, q, local_now, needed) else None


def on_slot_boundary(
    policy: SchedulerPolicy,
    shaper: ShaperState,
    local_now: int,
    rng: Optional[random.Random] = None,
) -> Tuple[ShaperState, int]:
    """Shaper configuration after the boundary at ``local_now``.

    Returns the new state and the delay (true ns) before it takes effect;
    only ``taprio`` has a non-zero delay.
    """
    if not policy.kind.gated:
        return shaper, 0
    gcl = policy.gcl
    target = ShaperState.only(gcl.open_queue(local_now % gcl.cycle_time_ns), len(shaper.full))
    if policy.kind is SchedulerKind.UTAS:
        return target, 0
    delay = policy.jitter_model.sample(rng) if rng is not None else 0
    return target, delay


class TokenBucket:
    """Byte-rate limiter; credit is kept in bit-nanoseconds so it stays integral."""

    __slots__ = ("rate_bps", "depth", "credit", "last", "active")

    def __init__(self, rate_bps: int, depth_bits: int, now: int = 0, active: bool = True):
        if rate_bps <= 0 or depth_bits <= 0:
            raise ValueError("rate and depth must be positive")
        self.rate_bps = rate_bps
        self.depth = depth_bits * 1_000_000_000
        self.credit = self.depth
        self.last = now
        self.active = active

    def update(self, now: int) -> None:
        if self.active and now > self.last:
            self.credit = min(self.depth, self.credit + self.rate_bps * (now - self.last))
        self.last = max(self.last, now)

    def set_active(self, now: int, active: bool) -> None:
        self.update(now)
        self.active = active

    def wait_ns(self, now: int, bits: int) -> Optional[int]:
        """Nanoseconds until ``bits`` can be sent; None while inactive and short."""
        self.update(now)
        need = bits * 1_000_000_000 - self.credit
        if need <= 0:
            return 0
        if not self.active:
            return None
        return -(-need // self.rate_bps)

    def consume(self, now: int, bits: int) -> None:
        self.update(now)
        self.credit -= bits * 1_000_000_000
