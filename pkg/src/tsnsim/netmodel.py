"""Flows, packets, links and the switch data path up to the egress queues."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, Iterator, List, Optional, Tuple

from tsnsim.gcl import BE_QUEUE, ST_QUEUE
from tsnsim.timebase import LocalClock

DEFAULT_QUEUE_CAPACITY = 64
FIBER_PROPAGATION_NS = 5
LINE_RATE_BPS = 10_000_000_000
DEFAULT_EGRESS_CAP_BPS = 15_000_000
DEFAULT_PROCESSING_NS = 3_700
DEFAULT_PROCESSING_JITTER_NS = 750


class TrafficClass(str, enum.Enum):
    ST = "ST"
    BE = "BE"

    @property
    def queue_id(self) -> int:
        return ST_QUEUE if self is TrafficClass.ST else BE_QUEUE


@dataclass(frozen=True)
class Flow:
    flow_id: str
    vlan_id: int
    traffic_class: TrafficClass
    rate_bps: int = 10_000_000
    packet_len_bytes: int = 1000
    start_offset_ns: int = 0

    def __post_init__(self):
        if not 1 <= self.vlan_id <= 4094:
            raise ValueError(f"vlan_id {self.vlan_id} outside 1..4094")
        if self.rate_bps <= 0:
            raise ValueError("rate_bps must be positive")
        if not 64 <= self.packet_len_bytes <= 1500:
            raise ValueError(f"packet_len_bytes {self.packet_len_bytes} outside 64..1500")
        if self.start_offset_ns < 0:
            raise ValueError("start_offset_ns must be non-negative")
        object.__setattr__(self, "traffic_class", TrafficClass(self.traffic_class))


class Packet:
    """One frame in flight.

    ``gen_ns`` is when the source produced it; ``tx_host_time_ns`` is when it
    started onto the wire at the sending host, which is what latency is
    measured from.
    """

    __slots__ = (
        "flow_id", "vlan_id", "seq", "len_bytes", "traffic_class", "gen_ns",
        "tx_host_time_ns", "rx_host_time_ns", "hops", "probe",
    )

    def __init__(self, flow_id, vlan_id, seq, len_bytes, traffic_class=TrafficClass.BE,
                 gen_ns=0, probe=None):
        self.flow_id = flow_id
        self.vlan_id = vlan_id
        self.seq = seq
        self.len_bytes = len_bytes
        self.traffic_class = traffic_class
        self.gen_ns = gen_ns
        self.tx_host_time_ns: Optional[int] = None
        self.rx_host_time_ns: Optional[int] = None
        self.hops: List[Tuple[str, int]] = []
        self.probe = probe

    def __repr__(self):
        return f"Packet({self.flow_id!r}, seq={self.seq}, vlan={self.vlan_id})"


@dataclass(frozen=True)
class Link:
    propagation_delay_ns: int = FIBER_PROPAGATION_NS
    bandwidth_bps: int = LINE_RATE_BPS

    def __post_init__(self):
        if self.propagation_delay_ns <= 0 or self.bandwidth_bps <= 0:
            raise ValueError("link delay and bandwidth must be positive")


def serialization_time(len_bytes: int, bandwidth_bps: int) -> int:
    """Transmission time in whole nanoseconds, rounded up."""
    if bandwidth_bps <= 0:
        raise ValueError("bandwidth must be positive")
    return -(-len_bytes * 8 * 1_000_000_000 // bandwidth_bps)


def departure_times(flow: Flow, duration_ns: int) -> Iterator[int]:
    """Constant-bit-rate departure instants of ``flow`` within ``[0, duration]``.

    The k-th departure is at ``offset + floor(k * bits * 1e9 / rate)``, so
    fractional inter-departure gaps do not accumulate rounding error.
    """
    bits_ns = flow.packet_len_bytes * 8 * 1_000_000_000
    span = duration_ns - flow.start_offset_ns
    if span < 0:
        return
    count = span * flow.rate_bps // bits_ns + 1
    for k in range(count):
        yield flow.start_offset_ns + k * bits_ns // flow.rate_bps


def generate_traffic(flow: Flow, duration_ns: int) -> List[Packet]:
    if duration_ns <= 0:
        raise ValueError("duration must be positive")
    return [
        Packet(flow.flow_id, flow.vlan_id, seq, flow.packet_len_bytes,
               flow.traffic_class, gen_ns=t)
        for seq, t in enumerate(departure_times(flow, duration_ns))
    ]


class BoundedQueue:
    """Tail-drop FIFO with enqueue/dequeue/drop counters."""

    __slots__ = ("queue_id", "capacity", "items", "enqueued", "dequeued", "dropped", "max_level")

    def __init__(self, queue_id: int, capacity: int = DEFAULT_QUEUE_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.queue_id = queue_id
        self.capacity = capacity
        self.items: Deque[Packet] = deque()
        self.enqueued = 0
        self.dequeued = 0
        self.dropped = 0
        self.max_level = 0

    def __len__(self):
        return len(self.items)

    def head(self) -> Optional[Packet]:
        return self.items[0] if self.items else None

    def push(self, packet: Packet) -> bool:
        if len(self.items) >= self.capacity:
            self.dropped += 1
            return False
        self.items.append(packet)
        self.enqueued += 1
        if len(self.items) > self.max_level:
            self.max_level = len(self.items)
        return True

    def pop(self) -> Packet:
        self.dequeued += 1
        return self.items.popleft()

    def conserved(self) -> bool:
        return self.enqueued == self.dequeued + len(self.items)


@dataclass
class SwitchState:
    """Passive state of one switch; the engine drives it."""

    node_id: str
    local_clock: LocalClock = field(default_factory=LocalClock)
    queue_count: int = 2
    capacity_packets: int = DEFAULT_QUEUE_CAPACITY
    classifier: Dict[int, int] = field(default_factory=dict)
    policy: object = None
    egress_cap_bps: int = DEFAULT_EGRESS_CAP_BPS
    processing_delay_ns: int = DEFAULT_PROCESSING_NS
    processing_jitter_ns: int = DEFAULT_PROCESSING_JITTER_NS
    queues: List[BoundedQueue] = field(init=False)

    def __post_init__(self):
        self.queues = [BoundedQueue(q, self.capacity_packets) for q in range(self.queue_count)]

    @property
    def default_queue(self) -> int:
        # Lowest class: the highest-numbered queue.
        return self.queue_count - 1

    def drops(self) -> Dict[int, int]:
        return {q.queue_id: q.dropped for q in self.queues}


def classify(switch: SwitchState, packet: Packet) -> int:
    """Egress queue for ``packet``; VLANs without a mapping go to best effort."""
    return switch.classifier.get(packet.vlan_id, switch.default_queue)


def enqueue(switch: SwitchState, queue_id: int, packet: Packet, now: int) -> bool:
    """Tail-drop enqueue; returns False when the packet was dropped."""
    return switch.queues[queue_id].push(packet)
