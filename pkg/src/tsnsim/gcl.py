"""Cycle configuration and gate control lists.

Gate intervals are half-open ``[open, close)`` offsets inside one cycle, and
the phase of a local time is simply ``t mod cycle_time``.  A packet that
lands exactly on a boundary belongs to the slot that starts there.
"""

from __future__ import annotations

import bisect
import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

ST_QUEUE = 0
BE_QUEUE = 1
MAX_ST_FRACTION = 0.7
DEFAULT_SLOTS = 10


class GclError(ValueError):
    """Malformed cycle configuration or GCL text."""


class StandardViolation(GclError):
    """Schedule gives ST traffic more than 70 % of the cycle."""


@dataclass(frozen=True)
class CycleConfig:
    cycle_time_ns: int
    slot_length_ns: int
    slot_count: int

    def __post_init__(self):
        if self.slot_count < 1 or self.slot_length_ns < 1:
            raise GclError("slot_count and slot_length_ns must be >= 1")
        if self.slot_count * self.slot_length_ns != self.cycle_time_ns:
            raise GclError(
                f"{self.slot_count} slots x {self.slot_length_ns} ns "
                f"!= cycle {self.cycle_time_ns} ns"
            )

    @classmethod
    def from_cycle(cls, cycle_time_ns: int, slot_count: int = DEFAULT_SLOTS) -> "CycleConfig":
        if slot_count < 1 or cycle_time_ns % slot_count:
            raise GclError(
                f"cycle {cycle_time_ns} ns is not divisible into {slot_count} slots"
            )
        return cls(cycle_time_ns, cycle_time_ns // slot_count, slot_count)


@dataclass(frozen=True)
class GclEntry:
    queue_id: int
    open_start_ns: int
    open_end_ns: int

    @property
    def length(self) -> int:
        return self.open_end_ns - self.open_start_ns


@dataclass(frozen=True)
class GateControlList:
    cycle: CycleConfig
    entries: Tuple[GclEntry, ...]
    _by_queue: Dict[int, List[Tuple[int, int]]] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        by_queue: Dict[int, List[Tuple[int, int]]] = {}
        for e in self.entries:
            by_queue.setdefault(e.queue_id, []).append((e.open_start_ns, e.open_end_ns))
        for q, spans in by_queue.items():
            by_queue[q] = _merge(spans)
        object.__setattr__(self, "_by_queue", by_queue)

    @property
    def cycle_time_ns(self) -> int:
        return self.cycle.cycle_time_ns

    @property
    def queues(self) -> List[int]:
        return sorted(self._by_queue)

    def spans(self, queue_id: int) -> List[Tuple[int, int]]:
        """Merged open intervals of ``queue_id`` within one cycle."""
        return list(self._by_queue.get(queue_id, ()))

    def boundaries(self) -> List[int]:
        """Sorted distinct phases at which some gate changes state."""
        ct = self.cycle_time_ns
        points = set()
        for e in self.entries:
            points.add(e.open_start_ns % ct)
            points.add(e.open_end_ns % ct)
        return sorted(points)

    def open_queue(self, phase: int) -> Optional[int]:
        """The queue whose gate is open at ``phase``, or None when all are closed."""
        for q in self.queues:
            if _in_spans(self._by_queue[q], phase):
                return q
        return None

    def time_to_close(self, queue_id: int, phase: int) -> Optional[int]:
        """Nanoseconds from ``phase`` until ``queue_id``'s gate closes.

        Returns 0 if the gate is closed at ``phase`` and None if it never
        closes.  Windows that run into the next cycle are followed across
        the wrap.
        """
        spans = self._by_queue.get(queue_id)
        if not spans or not _in_spans(spans, phase):
            return 0
        ct = self.cycle_time_ns
        if spans == [(0, ct)]:
            return None
        i = bisect.bisect_right(spans, (phase, math.inf)) - 1
        end = spans[i][1]
        if end == ct and spans[0][0] == 0:
            end = ct + spans[0][1]
        return end - phase


def _merge(spans: Sequence[Tuple[int, int]]) -> List[Tuple[int, int]]:
    out: List[Tuple[int, int]] = []
    for s, e in sorted(spans):
        if out and s <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], e))
        else:
            out.append((s, e))
    return out


def _in_spans(spans: List[Tuple[int, int]], phase: int) -> bool:
    i = bisect.bisect_right(spans, (phase, math.inf)) - 1
    return i >= 0 and spans[i][0] <= phase < spans[i][1]


def cycle_phase(t_local: int, cycle: CycleConfig) -> int:
    """Offset of ``t_local`` inside the current cycle, in ``[0, cycle_time)``."""
    return t_local % cycle.cycle_time_ns


def gate_open(gcl: GateControlList, queue_id: int, t_local: int) -> bool:
    """Whether ``queue_id`` may transmit at local time ``t_local``.

    Unknown queues are reported closed.
    """
    spans = gcl._by_queue.get(queue_id)
    if not spans:
        return False
    return _in_spans(spans, t_local % gcl.cycle_time_ns)


def build_two_flow_gcl(cycle: CycleConfig, st_fraction: float) -> GateControlList:
    """ST on queue 0 for the leading slots, BE on queue 1 for the rest.

    Raises:
        StandardViolation: ``st_fraction`` above 0.7.
        GclError: ``st_fraction`` not positive or rounding to zero slots.
    """
    if st_fraction > MAX_ST_FRACTION:
        raise StandardViolation(
            f"st_fraction={st_fraction} exceeds the 70% cap on ST time slots"
        )
    if not st_fraction > 0:
        raise GclError("st_fraction must be positive")
    st_slots = math.floor(st_fraction * cycle.slot_count + 0.5)
    if st_slots < 1:
        raise GclError(
            f"st_fraction={st_fraction} rounds to zero of {cycle.slot_count} slots"
        )
    split = st_slots * cycle.slot_length_ns
    entries = [GclEntry(ST_QUEUE, 0, split)]
    if split < cycle.cycle_time_ns:
        entries.append(GclEntry(BE_QUEUE, split, cycle.cycle_time_ns))
    return GateControlList(cycle, tuple(entries))


@dataclass(frozen=True)
class Violation:
    kind: str  # "overlap" | "out_of_cycle" | "empty"
    detail: str
    span: Optional[Tuple[int, int]] = None


def validate_gcl(gcl: GateControlList) -> List[Violation]:
    """Structural problems of ``gcl``; an empty list means it is valid."""
    ct = gcl.cycle_time_ns
    problems: List[Violation] = []
    for e in gcl.entries:
        if e.open_end_ns <= e.open_start_ns:
            problems.append(Violation("empty", f"{e} has no open time"))
        elif e.open_start_ns < 0 or e.open_end_ns > ct:
            problems.append(Violation("out_of_cycle", f"{e} exceeds cycle {ct}"))
    # Sweep over starts; each entry only needs checking against still-open ones.
    ordered = sorted(
        (e for e in gcl.entries if e.open_end_ns > e.open_start_ns),
        key=lambda e: (e.open_start_ns, e.open_end_ns),
    )
    active: List[GclEntry] = []
    for e in ordered:
        active = [a for a in active if a.open_end_ns > e.open_start_ns]
        for a in active:
            if a.queue_id != e.queue_id:
                span = (e.open_start_ns, min(a.open_end_ns, e.open_end_ns))
                problems.append(
                    Violation(
                        "overlap",
                        f"queues {a.queue_id} and {e.queue_id} both open on "
                        f"[{span[0]}, {span[1]})",
                        span,
                    )
                )
        active.append(e)
    return problems


def open_time_total(gcl: GateControlList) -> int:
    return sum(e - s for q in gcl.queues for s, e in gcl.spans(q))


_HEADER = re.compile(r"cycle=(\d+) slots=(\d+)")
_ENTRY = re.compile(r"queue=(\d+) open=(\d+) close=(\d+)")


def parse_gcl(text: str) -> GateControlList:
    """Parse the line-oriented GCL text form.

    The first line is ``cycle=<ns> slots=<n>``; each further line is
    ``queue=<id> open=<ns> close=<ns>``.  Anything else is rejected.
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise GclError("empty GCL")
    m = _HEADER.fullmatch(lines[0])
    if not m:
        raise GclError(f"line 1: expected 'cycle=<ns> slots=<n>', got {lines[0]!r}")
    cycle = CycleConfig.from_cycle(int(m.group(1)), int(m.group(2)))
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        m = _ENTRY.fullmatch(line)
        if not m:
            raise GclError(f"line {lineno}: malformed entry {line!r}")
        q, s, e = (int(g) for g in m.groups())
        entries.append(GclEntry(q, s, e))
    gcl = GateControlList(cycle, tuple(entries))
    problems = validate_gcl(gcl)
    if problems:
        raise GclError("; ".join(p.detail for p in problems))
    return gcl


def format_gcl(gcl: GateControlList) -> str:
    out = [f"cycle={gcl.cycle_time_ns} slots={gcl.cycle.slot_count}"]
    out += [f"queue={e.queue_id} open={e.open_start_ns} close={e.open_end_ns}" for e in gcl.entries]
    return "\n".join(out) + "\n"
