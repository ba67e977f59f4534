"""Deterministic discrete-event simulation of the Host-1 -> SW1 -> SW2 -> Host-2 chain.

Events are ordered by ``(fire_time, seq)`` where ``seq`` is a global
counter, so simultaneous events run in the order they were scheduled.
Every stochastic source (processing jitter, clock read noise, TAPRIO
transition latency) draws from its own stream derived from the scenario
seed.

Egress model: frames are serialised at the link line rate, while each switch
port is limited to ``egress_cap_bps`` by token buckets.  Under the gated
policies each queue has its own bucket which only fills while that queue's
shaper is at full rate; otherwise one bucket is shared by the port.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Optional, Tuple

from tsnsim import syncproto
from tsnsim.gcl import ST_QUEUE, GateControlList, gate_open
from tsnsim.metrics import LatencyRecord, OccupancySampler, OccupancyWindow
from tsnsim.netmodel import (
    BoundedQueue, Flow, Link, Packet, SwitchState, TrafficClass, classify, departure_times,
    enqueue, serialization_time,
)
from tsnsim.scenario import Scenario, ScenarioError, format_scenario
from tsnsim.schedulers import (
    SchedulerKind, SchedulerPolicy, ShaperState, TokenBucket, initial_shaper, on_slot_boundary,
    pick_next,
)
from tsnsim.timebase import (
    LocalClock, apply_compensation, read_local, set_clock, true_time_at,
)

# event kinds
PACKET_DEPARTURE = "PacketDeparture"
PACKET_ARRIVAL = "PacketArrival"
INGRESS_DONE = "IngressDone"
TRANSMISSION_COMPLETE = "TransmissionComplete"
GATE_BOUNDARY = "GateBoundary"
SHAPER_FLIP = "ShaperFlip"
SHAPER_RETRY = "ShaperRetry"
SYNC_PROBE = "SyncProbe"
END = "End"


class InvariantViolation(RuntimeError):
    """A model invariant failed; ``context`` describes the offending event."""

    def __init__(self, message: str, **context):
        detail = ", ".join(f"{k}={v!r}" for k, v in context.items())
        super().__init__(f"{message} [{detail}]" if detail else message)
        self.context = context


def derive_rng(seed: int, tag: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


@dataclass
class SyncResult:
    records: List[syncproto.ProbeRecord]
    probe_true_times: List[int]
    fit: Optional[syncproto.DriftFit]
    verify_records: List[syncproto.ProbeRecord]
    residuals_ns: List[float]
    compensation: Optional[Tuple[float, float]]
    anomalies: int = 0

    @property
    def rtts(self) -> List[int]:
        return [syncproto.rtt(r) for r in self.records]


@dataclass
class TraceBundle:
    scenario: Scenario
    latency: List[LatencyRecord]
    occupancy: List[OccupancyWindow]
    sync: Optional[SyncResult]
    drops: Dict[str, Dict[int, int]]
    event_count: int
    departures: List[Tuple[str, int, str, int, int]]
    generated: Dict[str, int]
    received: Dict[str, int]
    in_flight: Dict[str, int]
    flow_drops: Dict[str, int]
    traffic_start_ns: int
    metadata: str = ""
    flips: List[Tuple[str, int, int, int, int]] = field(default_factory=list)

    def records_for(self, traffic_class: str) -> List[LatencyRecord]:
        return [r for r in self.latency if r.traffic_class == traffic_class]


class _Probe:
    __slots__ = ("phase", "index", "t1", "t2", "t3", "t2_true", "tc")

    def __init__(self, phase: str, index: int):
        self.phase = phase
        self.index = index
        self.t1 = self.t2 = self.t3 = self.t2_true = self.tc = None


class _Port:
    """One direction of a link: line-rate serialisation plus propagation."""

    def __init__(self, sim: "Simulator", name: str, link: Link, deliver: Callable[[int, Packet], None]):
        self.sim = sim
        self.name = name
        self.link = link
        self.deliver = deliver
        self.busy = False
        self.control: Deque[Packet] = deque()
        self.on_free: Callable[[int], None] = lambda now: None

    def transmit(self, packet: Packet, now: int) -> None:
        ser = serialization_time(packet.len_bytes, self.link.bandwidth_bps)
        self.busy = True
        self.sim.schedule(now + ser, TRANSMISSION_COMPLETE, self._done)
        self.sim.schedule(now + ser + self.link.propagation_delay_ns, PACKET_ARRIVAL,
                          self.deliver, packet)

    def _done(self, now: int) -> None:
        self.busy = False
        self.on_free(now)


class _GateClock:
    """Chain of gate-boundary events driven by a node's local clock."""

    def __init__(self, sim: "Simulator", node_id: str, gcl: GateControlList,
                 get_clock: Callable[[], LocalClock], handler: Callable[[int, int], None]):
        self.sim = sim
        self.node_id = node_id
        self.gcl = gcl
        self.get_clock = get_clock
        self.handler = handler
        self.generation = 0
        self._points = gcl.boundaries()

    def next_local(self, local: int) -> int:
        ct = self.gcl.cycle_time_ns
        base, phase = divmod(local, ct)
        for p in self._points:
            if p > phase:
                return base * ct + p
        return (base + 1) * ct + self._points[0]

    def restart(self, now: int) -> None:
        self.generation += 1
        self._arm(self.next_local(read_local(self.get_clock(), now)))

    def _arm(self, local_boundary: int) -> None:
        t = true_time_at(self.get_clock(), local_boundary)
        self.sim.schedule(t, GATE_BOUNDARY, self._fire, self.generation, local_boundary)

    def _fire(self, now: int, generation: int, local_boundary: int) -> None:
        if generation != self.generation:
            return
        clock = self.get_clock()
        reading = read_local(clock, now)
        if reading < local_boundary or (now > clock.base_true and read_local(clock, now - 1) >= local_boundary):
            raise InvariantViolation("gate boundary fired off its local-clock crossing",
                                     node=self.node_id, now=now, boundary=local_boundary,
                                     reading=reading)
        self.handler(now, local_boundary)
        self._arm(self.next_local(local_boundary))


def schedule_gate_boundaries(clock: LocalClock, gcl: GateControlList, horizon_ns: int,
                             start_ns: int = 0) -> List[Tuple[int, int]]:
    """``(true_time, local_boundary)`` for every gate change in ``(start, horizon]``.

    Fire instants are where the clock's exact reading first reaches each
    boundary, found by inverting the affine clock model.
    """
    points = gcl.boundaries()
    ct = gcl.cycle_time_ns
    out = []
    local = read_local(clock, start_ns)
    k = local // ct
    while True:
        for p in points:
            b = k * ct + p
            if b <= local:
                continue
            t = true_time_at(clock, b)
            if t > horizon_ns:
                return out
            out.append((t, b))
        k += 1


class _Switch:
    def __init__(self, sim: "Simulator", state: SwitchState, link: Link, burst_bits: int):
        self.sim = sim
        self.state = state
        self.policy: SchedulerPolicy = state.policy
        self.node_id = state.node_id
        self.proc_rng = derive_rng(sim.scenario.seed, f"proc.{self.node_id}")
        self.noise_rng = derive_rng(sim.scenario.seed, f"noise.{self.node_id}")
        self.taprio_rng = derive_rng(sim.scenario.seed, f"taprio.{self.node_id}")
        self.proc_done = 0
        self.egress: Optional[_Port] = None
        self.reverse: Optional[_Port] = None
        self.retry_at: Optional[int] = None
        self.pending_flips = 0
        self.last_flip = 0
        n = state.queue_count
        cap = state.egress_cap_bps
        self.shaper = initial_shaper(self.policy, n, read_local(state.local_clock, 0))
        if self.policy.kind.gated:
            self.buckets = [TokenBucket(cap, burst_bits, 0, active=self.shaper.full[q]) for q in range(n)]
            self.gates = _GateClock(sim, self.node_id, self.policy.gcl,
                                    lambda: self.state.local_clock, self._on_boundary)
        else:
            shared = TokenBucket(cap, burst_bits, 0)
            self.buckets = [shared] * n
            self.gates = None

    # -- ingress ----------------------------------------------------------
    def on_arrival(self, now: int, packet: Packet) -> None:
        st = self.state
        j = st.processing_jitter_ns
        delay = st.processing_delay_ns + (self.proc_rng.randint(-j, j) if j else 0)
        done = max(now + delay, self.proc_done)
        self.proc_done = done
        self.sim.schedule(done, INGRESS_DONE, self._ingress, packet)

    def _ingress(self, now: int, packet: Packet) -> None:
        packet.hops.append((self.node_id, now))
        if packet.probe is not None:
            self.sim._probe_at(self, packet, now)
            return
        q = classify(self.state, packet)
        if enqueue(self.state, q, packet, now):
            self.sim._level(self, q, now)
        else:
            self.sim.flow_drops[packet.flow_id] += 1
        self.try_send(now)

    # -- egress -----------------------------------------------------------
    def read(self, now: int, noisy: bool = False) -> int:
        return read_local(self.state.local_clock, now, self.noise_rng if noisy else None)

    def try_send(self, now: int) -> None:
        port = self.egress
        if port.busy:
            return
        if port.control:
            packet = port.control.popleft()
            if packet.probe.t1 is None and packet.probe.phase != "config":
                packet.probe.t1 = self.read(now, noisy=True)
            elif packet.probe.phase == "config":
                packet.probe.tc = self.read(now, noisy=True)
            port.transmit(packet, now)
            return
        st = self.state
        policy = self.policy
        local = read_local(st.local_clock, now)
        effective = self.shaper if self.pending_flips else None
        q = pick_next(policy, st.queues, local, True, effective, st.egress_cap_bps, commit=False)
        if q is None:
            return
        head = st.queues[q].head()
        bits = head.len_bytes * 8
        wait = self.buckets[q].wait_ns(now, bits)
        if wait is None:
            return
        if wait > 0:
            self._retry(now + wait)
            return
        if policy.kind is SchedulerKind.RR:
            pick_next(policy, st.queues, local, True, None, st.egress_cap_bps, commit=True)
        elif policy.kind is SchedulerKind.UTAS:
            self._check_gate(q, local, head, now)
        packet = st.queues[q].pop()
        self.buckets[q].consume(now, bits)
        self.sim._level(self, q, now)
        self.sim._departed(self.node_id, now, packet, q)
        port.transmit(packet, now)

    def _check_gate(self, q: int, local: int, head: Packet, now: int) -> None:
        gcl = self.policy.gcl
        if not gate_open(gcl, q, local):
            raise InvariantViolation("departure from a closed gate", node=self.node_id,
                                     now=now, local=local, queue=q, packet=head)
        need = serialization_time(head.len_bytes, self.state.egress_cap_bps)
        left = gcl.time_to_close(q, local % gcl.cycle_time_ns)
        if left is not None and not need < left:
            raise InvariantViolation("transmission would overrun its gate", node=self.node_id,
                                     now=now, local=local, queue=q, needed=need, left=left)

    def _retry(self, t: int) -> None:
        if self.retry_at is not None and self.retry_at <= t:
            return
        self.retry_at = t
        self.sim.schedule(t, SHAPER_RETRY, self._on_retry)

    def _on_retry(self, now: int) -> None:
        if self.retry_at == now:
            self.retry_at = None
        self.try_send(now)

    # -- gates ------------------------------------------------------------
    def _on_boundary(self, now: int, local_boundary: int) -> None:
        target, delay = on_slot_boundary(self.policy, self.shaper, local_boundary, self.taprio_rng)
        if delay == 0 and not self.pending_flips:
            self.last_flip = now
            self.sim._flipped(self.node_id, now, local_boundary, delay, now)
            self._apply(now, target)
            return
        t = max(now + delay, self.last_flip)
        self.last_flip = t
        self.sim._flipped(self.node_id, now, local_boundary, delay, t)
        self.pending_flips += 1
        self.sim.schedule(t, SHAPER_FLIP, self._on_flip, self.gates.generation, target)

    def _on_flip(self, now: int, generation: int, target: ShaperState) -> None:
        if generation != self.gates.generation:
            return
        self.pending_flips -= 1
        self._apply(now, target)

    def _apply(self, now: int, target: ShaperState) -> None:
        for q, full in enumerate(target.full):
            self.buckets[q].set_active(now, full)
        self.shaper = target
        self.try_send(now)

    def reset_gates(self, now: int) -> None:
        """Re-derive gate state after the local clock was changed."""
        if self.gates is None:
            return
        self.pending_flips = 0
        self.shaper = initial_shaper(self.policy, self.state.queue_count, self.read(now))
        for q, full in enumerate(self.shaper.full):
            self.buckets[q].set_active(now, full)
        self.gates.restart(now)


class _Talker:
    """Host-1: per-class source queues, optionally holding ST to its gate window."""

    def __init__(self, sim: "Simulator", clock: LocalClock, capacity: int, gcl: Optional[GateControlList],
                 egress_cap_bps: int, guard_ns: int):
        self.sim = sim
        self.clock = clock
        self.queues = [BoundedQueue(0, capacity), BoundedQueue(1, capacity)]
        self.gcl = gcl
        self.cap = egress_cap_bps
        self.guard_ns = guard_ns
        self.port: Optional[_Port] = None
        self.gates = None
        if gcl is not None:
            self.gates = _GateClock(sim, "host1", gcl, lambda: self.clock, lambda now, b: self.try_send(now))

    def offer(self, packet: Packet, now: int) -> None:
        q = packet.traffic_class.queue_id
        if not self.queues[q].push(packet):
            self.sim.flow_drops[packet.flow_id] += 1
        self.try_send(now)

    def _st_allowed(self, now: int, packet: Packet) -> bool:
        if self.gcl is None:
            return True
        local = read_local(self.clock, now)
        left = self.gcl.time_to_close(ST_QUEUE, local % self.gcl.cycle_time_ns)
        if left is None:
            return True
        return serialization_time(packet.len_bytes, self.cap) + self.guard_ns < left

    def try_send(self, now: int) -> None:
        if self.port.busy:
            return
        st, be = self.queues
        if st.items and self._st_allowed(now, st.head()):
            packet = st.pop()
        elif be.items:
            packet = be.pop()
        else:
            return
        packet.tx_host_time_ns = now
        packet.hops.append(("host1", now))
        self.sim._departed("host1", now, packet, packet.traffic_class.queue_id)
        self.port.transmit(packet, now)


class Simulator:
    """One scenario, one engine.  Engines share nothing."""

    def __init__(self, scenario: Scenario, record_departures: bool = True):
        errors = scenario.validate()
        if errors:
            raise ScenarioError(errors)
        self.scenario = scenario
        self.record_departures = record_departures
        self.now = 0
        self._seq = 0
        self._heap: list = []
        self.event_count = 0

        topo = scenario.topology
        self.link = Link(topo.link_delay_ns, topo.line_rate_bps)
        self.flows: List[Flow] = scenario.build_flows()
        classifier = {f.vlan_id: f.traffic_class.queue_id for f in self.flows}
        burst_bits = topo.shaper_burst_bytes * 8

        self.switches: Dict[str, _Switch] = {}
        for node in ("sw1", "sw2"):
            state = SwitchState(
                node, LocalClock(scenario.clocks[node].drift()), 2, topo.queue_capacity,
                dict(classifier), scenario.build_policy(), topo.egress_cap_bps,
                topo.processing_delay_ns, topo.processing_jitter_ns,
            )
            self.switches[node] = _Switch(self, state, self.link, burst_bits)
        sw1, sw2 = self.switches["sw1"], self.switches["sw2"]
        policy = sw1.policy
        talker_gcl = policy.gcl if (policy.kind.gated and scenario.scheduler.talker_gating) else None
        self.host_clock = LocalClock(scenario.clocks["host1"].drift())
        self.talker = _Talker(self, self.host_clock, topo.queue_capacity, talker_gcl,
                              topo.egress_cap_bps, scenario.scheduler.talker_guard_ns)

        self.talker.port = _Port(self, "host1->sw1", self.link, sw1.on_arrival)
        self.talker.port.on_free = self.talker.try_send
        sw1.egress = _Port(self, "sw1->sw2", self.link, sw2.on_arrival)
        sw1.egress.on_free = sw1.try_send
        sw2.egress = _Port(self, "sw2->host2", self.link, self._deliver)
        sw2.egress.on_free = sw2.try_send
        sw2.reverse = _Port(self, "sw2->sw1", self.link, sw1.on_arrival)
        sw2.reverse.on_free = lambda now: self._send_reverse(sw2, now)

        self.latency: List[LatencyRecord] = []
        self.departures: List[Tuple[str, int, str, int, int]] = []
        # (node, boundary true time, local boundary, jitter delay, effective true time)
        self.flips: List[Tuple[str, int, int, int, int]] = []
        self.generated = {f.flow_id: 0 for f in self.flows}
        self.received = {f.flow_id: 0 for f in self.flows}
        self.flow_drops = {f.flow_id: 0 for f in self.flows}
        self._last_rx_seq = {f.flow_id: -1 for f in self.flows}
        self._gen_rngs = {f.flow_id: derive_rng(scenario.seed, f"gen.{f.flow_id}") for f in self.flows}
        self.sampler: Optional[OccupancySampler] = None
        self.sync_result: Optional[SyncResult] = None
        self._sync_state = None
        self.traffic_start = 0

    # -- event core -------------------------------------------------------
    def schedule(self, t: int, kind: str, handler: Callable, *args) -> None:
        if t < self.now:
            raise InvariantViolation("event scheduled in the past", now=self.now, fire_time=t, kind=kind)
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, handler, args))

    def _loop(self, until: int) -> None:
        heap = self._heap
        while heap and heap[0][0] <= until:
            t, seq, kind, handler, args = heapq.heappop(heap)
            if t < self.now:
                raise InvariantViolation("causality violated", now=self.now, fire_time=t, kind=kind)
            self.now = t
            self.event_count += 1
            handler(t, *args)
        self.now = max(self.now, until)

    # -- bookkeeping ------------------------------------------------------
    def _level(self, sw: _Switch, q: int, now: int) -> None:
        level = len(sw.state.queues[q])
        if level > sw.state.capacity_packets:
            raise InvariantViolation("queue over capacity", node=sw.node_id, queue=q, level=level)
        if self.sampler is not None and sw.node_id == "sw1":
            self.sampler.record(q, level, now)

    def _departed(self, node: str, now: int, packet: Packet, q: int) -> None:
        if self.record_departures:
            self.departures.append((node, now, packet.flow_id, packet.seq, q))

    def _flipped(self, node: str, now: int, local_boundary: int, delay: int, effective: int) -> None:
        if self.record_departures:
            self.flips.append((node, now, local_boundary, delay, effective))

    def _deliver(self, now: int, packet: Packet) -> None:
        packet.rx_host_time_ns = now
        packet.hops.append(("host2", now))
        fid = packet.flow_id
        if packet.seq <= self._last_rx_seq[fid]:
            raise InvariantViolation("flow reordered", flow=fid, seq=packet.seq,
                                     previous=self._last_rx_seq[fid], now=now)
        self._last_rx_seq[fid] = packet.seq
        self.received[fid] += 1
        rec = LatencyRecord(fid, packet.traffic_class.value, packet.seq,
                            packet.tx_host_time_ns, now)
        if rec.latency_ns <= 0:
            raise InvariantViolation("non-positive latency", record=rec)
        self.latency.append(rec)

    def _generate(self, now: int, flow: Flow, times, seq: int) -> None:
        packet = Packet(flow.flow_id, flow.vlan_id, seq, flow.packet_len_bytes,
                        flow.traffic_class, gen_ns=now)
        self.generated[flow.flow_id] += 1
        self._schedule_generation(flow, times, seq + 1, now)
        self.talker.offer(packet, now)

    def _schedule_generation(self, flow: Flow, times, seq: int, now: int) -> None:
        nominal = next(times, None)
        if nominal is None:
            return
        jitter = self.scenario.topology.host_jitter_ns
        t = self.traffic_start + nominal
        if jitter:
            t += self._gen_rngs[flow.flow_id].randint(0, jitter)
        self.schedule(max(t, now), PACKET_DEPARTURE, self._generate, flow, times, seq)

    # -- synchronisation --------------------------------------------------
    def _send_reverse(self, sw: _Switch, now: int) -> None:
        port = sw.reverse
        if not port.busy and port.control:
            port.transmit(port.control.popleft(), now)

    def _send_probe(self, now: int, phase: str, index: int) -> None:
        sw1 = self.switches["sw1"]
        packet = Packet("probe", 0, index, self.scenario.topology.probe_len_bytes,
                        TrafficClass.ST, gen_ns=now, probe=_Probe(phase, index))
        sw1.egress.control.append(packet)
        sw1.try_send(now)

    def _probe_at(self, sw: _Switch, packet: Packet, now: int) -> None:
        probe = packet.probe
        st = self._sync_state
        if sw.node_id == "sw2":
            if probe.phase == "config":
                self._configure(sw, probe, now)
                return
            probe.t2 = sw.read(now, noisy=True)
            probe.t2_true = now
            sw.reverse.control.append(packet)
            self._send_reverse(sw, now)
            return
        probe.t3 = sw.read(now, noisy=True)
        rec = syncproto.ProbeRecord(probe.t1, probe.t2, probe.t3)
        try:
            syncproto.rtt(rec)
        except syncproto.ClockAnomaly:
            st["anomalies"] += 1
            return
        if probe.phase == "collect":
            st["records"].append(rec)
            st["true_times"].append(probe.t2_true)
        else:
            st["verify"].append(rec)
            sw1c = self.switches["sw1"].state.local_clock
            sw2c = self.switches["sw2"].state.local_clock
            st["residuals"].append(sw2c.value(probe.t2_true) - sw1c.value(probe.t2_true))

    def _start_config(self, now: int) -> None:
        st = self._sync_state
        samples = [(syncproto.probe_time(r), syncproto.offset_sample(r)) for r in st["records"]]
        st["fit"] = syncproto.fit_drift(samples)
        rtts = [syncproto.rtt(r) for r in st["records"]]
        st["one_way"] = sum(rtts) / len(rtts) / 2
        self._send_probe(now, "config", -1)

    def _configure(self, sw2: _Switch, probe: _Probe, now: int) -> None:
        st = self._sync_state
        fit = st["fit"]
        clock = sw2.state.local_clock
        before = clock.value(now)
        new_reading = math.floor(probe.tc + st["one_way"] + 0.5)
        prior = clock.compensation or (1.0, 0.0)
        clock = set_clock(clock, new_reading, now)
        slope, intercept = syncproto.compensation_from_fit(fit, new_reading, before, prior)
        clock = apply_compensation(clock, slope, intercept)
        sw2.state.local_clock = clock
        st["compensation"] = (slope, intercept)
        sw2.reset_gates(now)

    def run_sync(self, probe_count: int, probe_interval_ns: int, verify_count: int = 0,
                 start_ns: Optional[int] = None) -> SyncResult:
        """Collection phase, drift fit, configuration of SW2, then optional verification probes."""
        if probe_count < 2:
            raise ValueError("probe_count must be >= 2")
        start = self.now if start_ns is None else start_ns
        self._sync_state = {"records": [], "true_times": [], "verify": [], "residuals": [],
                            "anomalies": 0, "fit": None, "compensation": None}
        for k in range(probe_count):
            self.schedule(start + k * probe_interval_ns, SYNC_PROBE, self._send_probe, "collect", k)
        config_t = start + probe_count * probe_interval_ns
        self.schedule(config_t, SYNC_PROBE, self._start_config)
        for j in range(verify_count):
            self.schedule(config_t + (j + 1) * probe_interval_ns, SYNC_PROBE, self._send_probe, "verify", j)
        end = config_t + (verify_count + 1) * probe_interval_ns
        self._loop(end)
        st = self._sync_state
        self.sync_result = SyncResult(st["records"], st["true_times"], st["fit"], st["verify"],
                                      st["residuals"], st["compensation"], st["anomalies"])
        return self.sync_result

    # -- run --------------------------------------------------------------
    def _start_gates(self, now: int) -> None:
        for sw in self.switches.values():
            sw.reset_gates(now)
        if self.talker.gates is not None:
            self.talker.gates.restart(now)

    def run(self) -> TraceBundle:
        sc = self.scenario
        self._start_gates(0)
        if sc.sync.enabled:
            self.run_sync(sc.sync.probe_count, sc.sync.probe_interval_ns, sc.sync.verify_count)
        start = self.now
        policy = self.switches["sw1"].policy
        if policy.gcl is not None and start > 0:
            ct = policy.gcl.cycle_time_ns
            start = -(-start // ct) * ct
        self.traffic_start = start
        self.sampler = OccupancySampler((0, 1), sc.occupancy_window_ns, start,
                                        capacity=sc.topology.queue_capacity)
        end = start + sc.duration_ns
        for flow in self.flows:
            self._schedule_generation(flow, departure_times(flow, sc.duration_ns), 0, start)
        self.schedule(end, END, lambda now: None)
        self._loop(end)
        return self._bundle(end)

    def _in_flight(self) -> Dict[str, int]:
        counts = {f.flow_id: 0 for f in self.flows}

        def count(p):
            if isinstance(p, Packet) and p.probe is None:
                counts[p.flow_id] += 1

        for q in self.talker.queues:
            for p in q.items:
                count(p)
        for sw in self.switches.values():
            for q in sw.state.queues:
                for p in q.items:
                    count(p)
        for entry in self._heap:
            for a in entry[4]:
                count(a)
        return counts

    def _bundle(self, end: int) -> TraceBundle:
        windows = self.sampler.finalize(end)
        in_flight = self._in_flight()
        for fid in self.generated:
            if self.generated[fid] != self.received[fid] + self.flow_drops[fid] + in_flight[fid]:
                raise InvariantViolation("packets not conserved", flow=fid,
                                         generated=self.generated[fid], received=self.received[fid],
                                         dropped=self.flow_drops[fid], in_flight=in_flight[fid])
        for sw in self.switches.values():
            for q in sw.state.queues:
                if not q.conserved():
                    raise InvariantViolation("queue counters inconsistent", node=sw.node_id, queue=q.queue_id)
        drops = {"host1": {q.queue_id: q.dropped for q in self.talker.queues}}
        drops.update({n: sw.state.drops() for n, sw in self.switches.items()})
        return TraceBundle(
            scenario=self.scenario,
            latency=self.latency,
            occupancy=windows,
            sync=self.sync_result,
            drops=drops,
            event_count=self.event_count,
            departures=self.departures,
            generated=dict(self.generated),
            received=dict(self.received),
            in_flight=in_flight,
            flow_drops=dict(self.flow_drops),
            traffic_start_ns=self.traffic_start,
            metadata=format_scenario(self.scenario),
            flips=self.flips,
        )


def run(scenario: Scenario, record_departures: bool = True) -> TraceBundle:
    return Simulator(scenario, record_departures).run()
