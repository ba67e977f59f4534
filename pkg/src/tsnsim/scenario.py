"""Scenario description and its line-oriented ``key = value`` file format.

A file is a sequence of optional top-level keys followed by bracketed
sections::

    name = paper-case-d
    seed = 1
    duration_ns = 10000000000

    [topology]
    egress_cap_bps = 15000000

    [flow.st]
    vlan_id = 100
    class = ST

    [scheduler]
    kind = utas

Unknown sections or keys, duplicate keys and unparsable values are errors,
each reported with its line number.  Every omitted key takes the default
shown by :func:`format_scenario`, which writes all effective parameters.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from tsnsim.gcl import (
    MAX_ST_FRACTION, CycleConfig, GateControlList, GclError, build_two_flow_gcl, parse_gcl,
)
from tsnsim.netmodel import (
    DEFAULT_EGRESS_CAP_BPS, DEFAULT_PROCESSING_JITTER_NS, DEFAULT_PROCESSING_NS,
    DEFAULT_QUEUE_CAPACITY, FIBER_PROPAGATION_NS, LINE_RATE_BPS, Flow, TrafficClass,
)
from tsnsim.schedulers import JitterModel, SchedulerKind, SchedulerPolicy
from tsnsim.timebase import DriftModel

NODES = ("host1", "sw1", "sw2", "host2")


class ScenarioError(ValueError):
    """One or more problems in a scenario; ``errors`` holds them all."""

    def __init__(self, errors: List[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


@dataclass
class TopologyConfig:
    link_delay_ns: int = FIBER_PROPAGATION_NS
    line_rate_bps: int = LINE_RATE_BPS
    egress_cap_bps: int = DEFAULT_EGRESS_CAP_BPS
    processing_delay_ns: int = DEFAULT_PROCESSING_NS
    processing_jitter_ns: int = DEFAULT_PROCESSING_JITTER_NS
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY
    shaper_burst_bytes: int = 8000
    probe_len_bytes: int = 64
    host_jitter_ns: int = 10_000


@dataclass
class SchedulerConfig:
    kind: str = "utas"
    cycle_ns: int = 5_000_000
    slots: int = 10
    st_fraction: float = 0.7
    gcl_file: str = ""
    jitter_median_ns: float = 150_000.0
    jitter_sigma: float = 0.6
    jitter_cap_ns: int = 2_000_000
    talker_gating: bool = True
    talker_guard_ns: int = 50_000


@dataclass
class SyncConfig:
    enabled: bool = False
    probe_count: int = 500
    probe_interval_ns: int = 1_000_000
    verify_count: int = 50


@dataclass
class ClockConfig:
    slope_ppm: float = 0.0
    offset_ns: int = 0
    noise_sigma_ns: float = 0.0

    def drift(self) -> DriftModel:
        return DriftModel(self.slope_ppm, self.offset_ns, self.noise_sigma_ns)


@dataclass
class FlowConfig:
    vlan_id: int
    traffic_class: str
    rate_bps: int = 10_000_000
    packet_len_bytes: int = 1000
    start_offset_ns: int = 0


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 1
    duration_ns: int = 10_000_000_000
    occupancy_window_ns: int = 100_000_000
    latency_bound_ns: int = 30_000
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    flows: Dict[str, FlowConfig] = field(default_factory=dict)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    clocks: Dict[str, ClockConfig] = field(
        default_factory=lambda: {n: ClockConfig() for n in NODES}
    )
    sync: SyncConfig = field(default_factory=SyncConfig)
    gcl_text: Optional[str] = None  # contents of gcl_file once loaded

    def with_scheduler(self, kind: str) -> "Scenario":
        s = dataclasses.replace(self, scheduler=dataclasses.replace(self.scheduler, kind=kind))
        return s

    def with_seed(self, seed: int) -> "Scenario":
        return dataclasses.replace(self, seed=seed)

    def build_flows(self) -> List[Flow]:
        return [
            Flow(fid, f.vlan_id, TrafficClass(f.traffic_class), f.rate_bps,
                 f.packet_len_bytes, f.start_offset_ns)
            for fid, f in self.flows.items()
        ]

    def build_gcl(self) -> GateControlList:
        if self.gcl_text is not None:
            return parse_gcl(self.gcl_text)
        cycle = CycleConfig.from_cycle(self.scheduler.cycle_ns, self.scheduler.slots)
        return build_two_flow_gcl(cycle, self.scheduler.st_fraction)

    def build_policy(self) -> SchedulerPolicy:
        kind = SchedulerKind(self.scheduler.kind)
        gcl = self.build_gcl() if kind.gated else None
        jitter = None
        if kind is SchedulerKind.TAPRIO:
            sc = self.scheduler
            jitter = JitterModel(sc.jitter_median_ns, sc.jitter_sigma, sc.jitter_cap_ns)
        return SchedulerPolicy(kind, gcl, jitter)

    def validate(self) -> List[str]:
        errors: List[str] = []
        if self.duration_ns <= 0:
            errors.append("duration_ns must be positive")
        if self.occupancy_window_ns <= 0:
            errors.append("occupancy_window_ns must be positive")
        if self.latency_bound_ns <= 0:
            errors.append("latency_bound_ns must be positive")
        t = self.topology
        for name in ("link_delay_ns", "line_rate_bps", "egress_cap_bps", "queue_capacity",
                     "shaper_burst_bytes", "probe_len_bytes"):
            if getattr(t, name) <= 0:
                errors.append(f"topology.{name} must be positive")
        if t.host_jitter_ns < 0:
            errors.append("topology.host_jitter_ns must be non-negative")
        if t.processing_delay_ns < 0 or t.processing_jitter_ns < 0:
            errors.append("processing delay and jitter must be non-negative")
        elif t.processing_jitter_ns > t.processing_delay_ns:
            errors.append("processing_jitter_ns may not exceed processing_delay_ns")
        sc = self.scheduler
        try:
            kind = SchedulerKind(sc.kind)
        except ValueError:
            errors.append(f"scheduler.kind {sc.kind!r} not one of rr, sp, taprio, utas")
            kind = None
        if sc.st_fraction > MAX_ST_FRACTION:
            errors.append(
                f"scheduler.st_fraction={sc.st_fraction} exceeds the 70% maximum of ST time slots"
            )
        if kind is not None:
            try:
                policy = self.build_policy()
                if policy.gcl is not None and t.shaper_burst_bytes * 8 < 1:
                    errors.append("shaper burst too small")
            except (GclError, ValueError) as exc:
                if sc.st_fraction <= MAX_ST_FRACTION:
                    errors.append(f"scheduler: {exc}")
        for fid, f in self.flows.items():
            try:
                Flow(fid, f.vlan_id, TrafficClass(f.traffic_class), f.rate_bps,
                     f.packet_len_bytes, f.start_offset_ns)
            except ValueError as exc:
                errors.append(f"flow.{fid}: {exc}")
        longest = max([f.packet_len_bytes for f in self.flows.values()] + [t.probe_len_bytes])
        if t.shaper_burst_bytes < longest:
            # a bucket shallower than one frame never admits it
            errors.append(f"topology.shaper_burst_bytes={t.shaper_burst_bytes} is below the "
                          f"largest frame ({longest} B)")
        vlans = [f.vlan_id for f in self.flows.values()]
        if len(set(vlans)) != len(vlans):
            errors.append("flows must use distinct vlan_id values")
        for node, c in self.clocks.items():
            try:
                c.drift()
            except ValueError as exc:
                errors.append(f"clock.{node}: {exc}")
        sy = self.sync
        if sy.enabled and (sy.probe_count < 2 or sy.probe_interval_ns <= 0 or sy.verify_count < 0):
            errors.append("sync needs probe_count >= 2 and a positive probe_interval_ns")
        return errors


def paper_scenario(kind: str = "utas", seed: int = 1, duration_ns: int = 10_000_000_000) -> Scenario:
    """Two-switch chain with one ST and one BE flow at 10 Mbit/s, 1000 B frames."""
    return Scenario(
        name=f"paper-{kind}",
        seed=seed,
        duration_ns=duration_ns,
        flows={
            "st": FlowConfig(vlan_id=100, traffic_class="ST"),
            "be": FlowConfig(vlan_id=200, traffic_class="BE"),
        },
        scheduler=SchedulerConfig(kind=kind),
    )


# ---------------------------------------------------------------------------
# file format

_SECTION = re.compile(r"\[([a-z0-9_.]+)\]")
_KV = re.compile(r"([a-z_][a-z0-9_]*)\s*=\s*(.*?)\s*")
_FLOW_SECTION = re.compile(r"flow\.([a-z0-9_]+)")
_CLOCK_SECTION = re.compile(r"clock\.(" + "|".join(NODES) + r")")

_TOP_KEYS = ("name", "seed", "duration_ns", "occupancy_window_ns", "latency_bound_ns")
# "class" is the file spelling of FlowConfig.traffic_class
_FLOW_KEYS = {"vlan_id": "vlan_id", "class": "traffic_class", "rate_bps": "rate_bps",
              "packet_len_bytes": "packet_len_bytes", "start_offset_ns": "start_offset_ns"}


def _convert(raw: str, typ):
    if typ is bool:
        if raw in ("true", "yes", "1"):
            return True
        if raw in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true/false, got {raw!r}")
    if typ is int:
        if not re.fullmatch(r"-?\d+", raw.replace("_", "")):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(raw.replace("_", ""))
    if typ is float:
        return float(raw)
    return raw


def _field_types(cls) -> Dict[str, type]:
    hints = {"int": int, "float": float, "bool": bool, "str": str}
    return {f.name: hints.get(f.type, str) for f in dataclasses.fields(cls)}


def parse_scenario(text: str, base_dir: Optional[Path] = None) -> Scenario:
    """Parse scenario text; raises :class:`ScenarioError` listing every problem."""
    errors: List[str] = []
    top: Dict[str, str] = {}
    sections: Dict[str, Dict[str, Tuple[int, str]]] = {}
    current: Optional[Dict[str, Tuple[int, str]]] = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        m = _SECTION.fullmatch(stripped)
        if m:
            name = m.group(1)
            if name in sections:
                errors.append(f"line {lineno}: duplicate section [{name}]")
            current = sections.setdefault(name, {})
            if not (name in ("topology", "scheduler", "sync")
                    or _FLOW_SECTION.fullmatch(name) or _CLOCK_SECTION.fullmatch(name)):
                errors.append(f"line {lineno}: unknown section [{name}]")
            continue
        m = _KV.fullmatch(stripped)
        if not m:
            errors.append(f"line {lineno}: expected 'key = value', got {stripped!r}")
            continue
        key, value = m.groups()
        target = top if current is None else current
        if key in target:
            errors.append(f"line {lineno}: duplicate key {key!r}")
        target[key] = (lineno, value)

    sc = Scenario(flows={})

    for key, (lineno, value) in top.items():
        if key not in _TOP_KEYS:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        typ = str if key == "name" else int
        try:
            setattr(sc, key, _convert(value, typ))
        except ValueError as exc:
            errors.append(f"line {lineno}: {key}: {exc}")

    def fill(obj, entries, keymap=None, label=""):
        types = _field_types(type(obj))
        for key, (lineno, value) in entries.items():
            attr = keymap.get(key) if keymap is not None else key
            if attr is None or attr not in types:
                errors.append(f"line {lineno}: unknown key {key!r} in [{label}]")
                continue
            try:
                setattr(obj, attr, _convert(value, types[attr]))
            except ValueError as exc:
                errors.append(f"line {lineno}: {key}: {exc}")

    for name, entries in sections.items():
        if name == "topology":
            fill(sc.topology, entries, label=name)
        elif name == "scheduler":
            fill(sc.scheduler, entries, label=name)
        elif name == "sync":
            fill(sc.sync, entries, label=name)
        elif _CLOCK_SECTION.fullmatch(name):
            fill(sc.clocks[name.split(".", 1)[1]], entries, label=name)
        elif _FLOW_SECTION.fullmatch(name):
            fid = name.split(".", 1)[1]
            missing = [k for k in ("vlan_id", "class") if k not in entries]
            if missing:
                errors.append(f"[{name}]: missing required key(s) {', '.join(missing)}")
                continue
            default_cls = entries["class"][1]
            flow = FlowConfig(vlan_id=0, traffic_class=default_cls)
            fill(flow, entries, keymap=_FLOW_KEYS, label=name)
            if flow.traffic_class not in ("ST", "BE"):
                errors.append(f"[{name}]: class must be ST or BE")
            sc.flows[fid] = flow

    if sc.scheduler.gcl_file:
        path = Path(sc.scheduler.gcl_file)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            sc.gcl_text = path.read_text()
        except OSError as exc:
            errors.append(f"scheduler.gcl_file: {exc}")

    if not errors:
        errors.extend(sc.validate())
    if errors:
        raise ScenarioError(errors)
    return sc


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), base_dir=path.parent)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def format_scenario(sc: Scenario) -> str:
    """Every effective parameter, in the file format (round-trips through the parser)."""
    out = [f"{k} = {_fmt(getattr(sc, k))}" for k in _TOP_KEYS]
    for label, obj in (("topology", sc.topology), ("scheduler", sc.scheduler)):
        out += ["", f"[{label}]"]
        out += [f"{f.name} = {_fmt(getattr(obj, f.name))}" for f in dataclasses.fields(obj)]
    for fid, f in sc.flows.items():
        out += ["", f"[flow.{fid}]"]
        inverse = {v: k for k, v in _FLOW_KEYS.items()}
        out += [f"{inverse[x.name]} = {_fmt(getattr(f, x.name))}" for x in dataclasses.fields(f)]
    for node in NODES:
        out += ["", f"[clock.{node}]"]
        c = sc.clocks[node]
        out += [f"{x.name} = {_fmt(getattr(c, x.name))}" for x in dataclasses.fields(c)]
    out += ["", "[sync]"]
    out += [f"{x.name} = {_fmt(getattr(sc.sync, x.name))}" for x in dataclasses.fields(sc.sync)]
    return "\n".join(out) + "\n"
