"""Faultable simulated data plane that executes test scripts and logs them.

The simulator reuses the NF models, but it is instantiated from its own
topology copy. Faults rewrite only that copy, so the planner's model never
sees them.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

from .adu import ADU, TCP, UDP
from .network import Event, LoopError, Network, Topology, TopologyError, build_network
from .nflib import NF_TYPES
from .translator import TestScript, WireEvent, expand

STATEFUL_ONLY, MONITOR_ALL = "stateful", "all"
MODES = (STATEFUL_ONLY, MONITOR_ALL)
BACKGROUND_ID_BASE = 500_000


class FaultError(ValueError):
    pass


@dataclass(frozen=True)
class Fault:
    """One injected misbehaviour. ``type`` is one of FAULT_TYPES."""

    type: str
    params: tuple = ()

    def get(self, key, default=None):
        return dict(self.params).get(key, default)

    @classmethod
    def from_json(cls, data: Mapping) -> "Fault":
        kind = data.get("type")
        if kind not in FAULT_TYPES:
            raise FaultError(f"unknown fault type {kind!r}")
        missing = [k for k in FAULT_TYPES[kind] if k not in data]
        if missing:
            raise FaultError(f"{kind} needs {missing}")
        return cls(kind, tuple(sorted((k, v) for k, v in data.items() if k != "type")))

    def to_json(self) -> dict:
        return {"type": self.type, **dict(self.params)}


FAULT_TYPES = {
    "LinkDown": ("edge",),
    "RuleMissing": ("switch", "rule"),
    "ThresholdMisconfig": ("nf", "value"),
    "CounterReset": ("nf",),
    "ControllerOff": (),
    "AggregateMiscount": ("nf", "hosts"),
}


def load_faults(path) -> list[Fault]:
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, Mapping):
        data = data.get("faults", [data])
    return [Fault.from_json(d) for d in data]


class Simulator:
    """Twin network standing in for the real data plane."""

    def __init__(self, topology: Topology, down_edges: Iterable[int] = (), faults: Sequence[Fault] = ()):
        self.topology = topology
        self.down_edges = frozenset(down_edges)
        self.faults = tuple(faults)
        self.network = build_network(topology, down_edges=self.down_edges)

    @classmethod
    def fault_free(cls, topology: Topology) -> "Simulator":
        return cls(topology.copy())

    def stateful_nodes(self) -> set[str]:
        return {n for n, spec in self.topology.nodes.items() if NF_TYPES[spec.type].stateful}

    def visible_edges(self, mode: str) -> set[int]:
        if mode not in MODES:
            raise ValueError(f"unknown monitor mode {mode!r}")
        edges = self.topology.edges
        if mode == MONITOR_ALL:
            return set(range(len(edges)))
        stateful = self.stateful_nodes()
        return {i for i, e in enumerate(edges) if e.src in stateful or e.dst in stateful}


def _node(topology: Topology, nid, kind: str | None = None):
    spec = topology.nodes.get(nid)
    if spec is None:
        raise FaultError(f"fault names unknown element {nid!r}")
    if kind and spec.type != kind:
        raise FaultError(f"{nid} is a {spec.type}, not a {kind}")
    return spec


def _counter_nf(topology, nid):
    spec = _node(topology, nid)
    key = NF_TYPES[spec.type].counters_key
    if key is None:
        raise FaultError(f"{nid} ({spec.type}) keeps no counter")
    return spec, key


def inject_fault(sim: Simulator, fault: Fault | Mapping) -> Simulator:
    """Return a new simulator whose plane misbehaves as ``fault`` describes."""
    if not isinstance(fault, Fault):
        fault = Fault.from_json(fault)
    topo = sim.topology.copy()
    down = set(sim.down_edges)
    kind = fault.type
    if kind == "LinkDown":
        name = fault.get("edge")
        hit = [i for i, e in enumerate(topo.edges) if e.name == name or i == name]
        if not hit:
            raise FaultError(f"no link {name!r}")
        down.update(hit)
    elif kind == "RuleMissing":
        spec = _node(topo, fault.get("switch"), "switch")
        rules = spec.config.get("rules", [])
        idx = fault.get("rule")
        if not isinstance(idx, int) or not 0 <= idx < len(rules):
            raise FaultError(f"{spec.id} has no rule {idx!r}")
        spec.config["rules"] = rules[:idx] + rules[idx + 1:]
    elif kind == "ThresholdMisconfig":
        spec, key = _counter_nf(topo, fault.get("nf"))
        spec.config[key] = fault.get("value")
    elif kind == "CounterReset":
        spec, _ = _counter_nf(topo, fault.get("nf"))
        spec.config["counter_reset"] = True
    elif kind == "ControllerOff":
        for spec in topo.nodes.values():
            if spec.type == "switch":
                spec.config["steering"] = False
            elif NF_TYPES[spec.type].stateful:
                spec.config["tagging"] = False
    elif kind == "AggregateMiscount":
        spec = _node(topo, fault.get("nf"), "lips")
        spec.config["aggregate_group"] = int(fault.get("hosts"))
    try:
        return Simulator(Topology.from_json(topo.to_json()), down, sim.faults + (fault,))
    except TopologyError as exc:
        raise FaultError(str(exc)) from exc


@dataclass(frozen=True)
class BackgroundFlow:
    at: int  # injected just before test event number ``at``
    source: str
    adu: ADU
    lifetime: int | None = None  # drain cycles before the flow stops

    def to_json(self) -> dict:
        return {"at": self.at, "source": self.source, "adu": self.adu.to_json(), "lifetime": self.lifetime}


_KINDS = {
    "syn": dict(proto=TCP, tcp_syn=1, tcp_ack=0),
    "get": dict(proto=TCP, tcp_syn=0, tcp_ack=1),
    "data": dict(proto=TCP, tcp_syn=0, tcp_ack=1),
    "udp": dict(proto=UDP),
}


def background_traffic(spec: Mapping | None, topology: Topology, seed: int = 0) -> list[BackgroundFlow]:
    """Explicit flows plus seeded pseudo-random ones, ordered by position."""
    if not spec:
        return []
    flows = []
    for item in spec.get("flows", ()):
        if item["source"] not in topology.sources:
            raise TopologyError(f"background source {item['source']!r} is not a topology source")
        flows.append(BackgroundFlow(int(item.get("at", 0)), item["source"], ADU.from_json(item["adu"]),
                                    item.get("lifetime")))
    gen = spec.get("random")
    if gen:
        rng = random.Random(spec.get("seed", seed))
        sources = gen.get("sources", topology.sources)
        for s in sources:
            if s not in topology.sources:
                raise TopologyError(f"background source {s!r} is not a topology source")
        dsts = gen.get("dstIPs") or sorted(topology.host_addrs())
        objects = gen.get("objects", [0])
        for _ in range(int(gen.get("count", 0))):
            source = rng.choice(sources)
            kind = rng.choice(gen.get("kinds", ["syn"]))
            fields = dict(_KINDS[kind], src_ip=topology.addr_of(source), dst_ip=rng.choice(dsts),
                          src_port=rng.randrange(1024, 65536), dst_port=gen.get("dstPort", 80))
            if kind == "get":
                fields["http_get_obj"] = rng.choice(objects)
            flows.append(BackgroundFlow(rng.randrange(0, int(gen.get("span", 4)) + 1), source, ADU(**fields),
                                        gen.get("lifetime")))
    flows = sorted(enumerate(flows), key=lambda p: (p[1].at, p[0]))
    return [f.__class__(f.at, f.source, f.adu.replace(adu_id=BACKGROUND_ID_BASE + i + 1, is_test=0), f.lifetime)
            for i, (_, f) in enumerate(flows)]


class MonitorRecord(NamedTuple):
    port: int
    adu_id: int
    direction: str  # rx | drop | lost | loop
    adu: dict
    tick: int
    is_test: bool

    def to_json(self) -> dict:
        return {"port": self.port, "aduId": self.adu_id, "direction": self.direction, "adu": self.adu,
                "tick": self.tick, "isTest": self.is_test}

    @classmethod
    def from_json(cls, data: Mapping) -> "MonitorRecord":
        return cls(int(data["port"]), int(data["aduId"]), data["direction"], dict(data["adu"]),
                   int(data["tick"]), bool(data["isTest"]))


@dataclass
class MonitorLog:
    records: list[MonitorRecord] = field(default_factory=list)
    mode: str = MONITOR_ALL

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def background(self) -> list[MonitorRecord]:
        return [r for r in self.records if not r.is_test]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str, mode: str = MONITOR_ALL) -> "MonitorLog":
        return cls([MonitorRecord.from_json(json.loads(l)) for l in text.splitlines() if l.strip()], mode)


class _Recorder:
    def __init__(self, visible: set[int], log: MonitorLog):
        self.visible = visible
        self.log = log
        self.tick = 0

    def __call__(self, event: Event):
        if event.kind == "hop" or event.edge is None or event.edge not in self.visible:
            return
        if event.kind == "edge":
            direction = "rx"
        elif event.reason in ("dropped", "lost"):
            direction = "drop" if event.reason == "dropped" else "lost"
        else:
            return
        adu = event.adu
        self.log.records.append(MonitorRecord(event.edge, adu.adu_id, direction, adu.to_json(), self.tick,
                                              adu.is_test == 1))


def run_script(sim: Simulator, scripts: Sequence[TestScript] | Sequence[WireEvent], mode: str = MONITOR_ALL,
               background: Sequence[BackgroundFlow] = (), elapsed_cycles: int = 0) -> MonitorLog:
    """Execute wire events in barrier order with background flows interleaved.

    Flows whose ``lifetime`` is at most ``elapsed_cycles`` have already ended.
    """
    events = list(scripts)
    if events and isinstance(events[0], TestScript):
        events = expand(events)
    log = MonitorLog(mode=mode)
    recorder = _Recorder(sim.visible_edges(mode), log)
    live = [f for f in background if f.lifetime is None or f.lifetime > elapsed_cycles]
    queue: list[tuple[str, ADU]] = []
    for k, ev in enumerate(events):
        queue += [(f.source, f.adu) for f in live if f.at == k]
        queue.append((ev.source, ev.adu))
    queue += [(f.source, f.adu) for f in live if f.at >= len(events)]

    state = sim.network.initial_state()
    for source, adu in queue:
        if adu.is_time_tick == 1:
            recorder.tick = adu.tick
        try:
            state = sim.network.inject(state, adu, source, recorder).state
        except LoopError:
            log.records.append(MonitorRecord(-1, adu.adu_id, "loop", adu.to_json(), recorder.tick,
                                             adu.is_test == 1))
    return log
