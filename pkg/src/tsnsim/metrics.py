"""Latency records, empirical CDFs and windowed queue-occupancy averages."""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

log = logging.getLogger(__name__)

DEFAULT_WINDOW_NS = 100_000_000


@dataclass(frozen=True)
class LatencyRecord:
    flow_id: str
    traffic_class: str
    seq: int
    tx_ns: int
    rx_ns: int

    @property
    def latency_ns(self) -> int:
        return self.rx_ns - self.tx_ns


@dataclass(frozen=True)
class OccupancyWindow:
    queue_id: int
    window_start_ns: int
    window_len_ns: int
    avg_level: float
    max_level: int
    area: int  # exact integral of the level over the window, packet-ns


class _QueueTrack:
    __slots__ = ("level", "last", "start", "area", "peak")

    def __init__(self, start: int):
        self.level = 0
        self.last = start
        self.start = start
        self.area = 0
        self.peak = 0


class OccupancySampler:
    """Exact time-weighted queue level, emitted in fixed windows.

    The level is a step function that only changes on enqueue/dequeue, so
    integrating it event by event is exact.  At each window rollover the
    accumulator is turned into an :class:`OccupancyWindow` and reset.
    """

    def __init__(self, queue_ids: Iterable[int], window_len_ns: int = DEFAULT_WINDOW_NS,
                 start_ns: int = 0, capacity: Optional[int] = None):
        if window_len_ns <= 0:
            raise ValueError("window_len_ns must be positive")
        self.window_len_ns = window_len_ns
        self.capacity = capacity
        self._tracks: Dict[int, _QueueTrack] = {q: _QueueTrack(start_ns) for q in queue_ids}
        self.windows: List[OccupancyWindow] = []

    def _advance(self, q: int, tr: _QueueTrack, now: int) -> None:
        end = tr.start + self.window_len_ns
        while now >= end:
            tr.area += tr.level * (end - tr.last)
            self._emit(q, tr, self.window_len_ns)
            tr.start = tr.last = end
            tr.area = 0
            tr.peak = tr.level
            end += self.window_len_ns
        tr.area += tr.level * (now - tr.last)
        tr.last = now

    def _emit(self, q: int, tr: _QueueTrack, length: int) -> None:
        self.windows.append(
            OccupancyWindow(q, tr.start, length, tr.area / length, tr.peak, tr.area)
        )

    def record(self, queue_id: int, level: int, now: int) -> None:
        if self.capacity is not None and level > self.capacity:
            raise ValueError(f"level {level} exceeds capacity {self.capacity}")
        tr = self._tracks[queue_id]
        if now < tr.last:
            raise ValueError("occupancy samples must be time-ordered")
        self._advance(queue_id, tr, now)
        tr.level = level
        if level > tr.peak:
            tr.peak = level

    def finalize(self, end_ns: int) -> List[OccupancyWindow]:
        """Close every window up to ``end_ns``; a trailing partial window keeps its true length."""
        for q, tr in self._tracks.items():
            self._advance(q, tr, end_ns)
            if end_ns > tr.start:
                self._emit(q, tr, end_ns - tr.start)
                tr.start = tr.last = end_ns
                tr.area = 0
        self.windows.sort(key=lambda w: (w.queue_id, w.window_start_ns))
        return self.windows


def record_occupancy(sampler: OccupancySampler, queue_id: int, level: int, now: int) -> OccupancySampler:
    sampler.record(queue_id, level, now)
    return sampler


def _latencies(records) -> List[int]:
    return [r.latency_ns if isinstance(r, LatencyRecord) else int(r) for r in records]


def cdf(records: Sequence) -> List[Tuple[int, float]]:
    """Empirical CDF as ``(latency, fraction <= latency)`` at each distinct value."""
    values = sorted(_latencies(records))
    n = len(values)
    if n == 0:
        log.warning("cdf of an empty record set")
        return []
    out = []
    for i, v in enumerate(values):
        if i + 1 < n and values[i + 1] == v:
            continue
        out.append((v, (i + 1) / n))
    return out


def bound_breaches(records: Sequence[LatencyRecord], bound_ns: int) -> Tuple[int, List[int]]:
    if bound_ns <= 0:
        raise ValueError("bound must be positive")
    seqs = [r.seq for r in records if r.latency_ns > bound_ns]
    return len(seqs), seqs


def quantile(sorted_values: Sequence[int], p: float) -> int:
    """Nearest-rank quantile of already sorted values."""
    if not sorted_values:
        raise ValueError("quantile of empty data")
    k = max(1, math.ceil(p * len(sorted_values)))
    return sorted_values[k - 1]


def cdf_distance(a: Sequence, b: Sequence) -> float:
    """Largest vertical gap between two empirical CDFs."""
    xa, xb = sorted(_latencies(a)), sorted(_latencies(b))
    if not xa or not xb:
        raise ValueError("both samples must be non-empty")
    worst = 0.0
    for v in set(xa) | set(xb):
        fa = bisect.bisect_right(xa, v) / len(xa)
        fb = bisect.bisect_right(xb, v) / len(xb)
        worst = max(worst, abs(fa - fb))
    return worst


@dataclass(frozen=True)
class LatencySummary:
    count: int
    min_ns: int
    median_ns: int
    p99_ns: int
    max_ns: int

    @classmethod
    def of(cls, records: Sequence[LatencyRecord]) -> Optional["LatencySummary"]:
        values = sorted(_latencies(records))
        if not values:
            return None
        return cls(len(values), values[0], quantile(values, 0.5),
                   quantile(values, 0.99), values[-1])


def _real(x: float) -> str:
    return f"{x:.9f}"


def latency_csv(records: Sequence[LatencyRecord]) -> str:
    rows = ["flow_id,class,seq,tx_ns,rx_ns,latency_ns"]
    rows += [f"{r.flow_id},{r.traffic_class},{r.seq},{r.tx_ns},{r.rx_ns},{r.latency_ns}"
             for r in records]
    return "\n".join(rows) + "\n"


def occupancy_csv(windows: Sequence[OccupancyWindow]) -> str:
    rows = ["queue_id,window_start_ms,avg_level,max_level"]
    rows += [f"{w.queue_id},{_real(w.window_start_ns / 1e6)},{_real(w.avg_level)},{w.max_level}"
             for w in windows]
    return "\n".join(rows) + "\n"


def cdf_csv(records: Sequence[LatencyRecord]) -> str:
    rows = ["class,latency_ns,cum_fraction"]
    for cls in sorted({r.traffic_class for r in records}):
        for v, f in cdf([r for r in records if r.traffic_class == cls]):
            rows.append(f"{cls},{v},{_real(f)}")
    return "\n".join(rows) + "\n"
