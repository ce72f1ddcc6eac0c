"""Topology, composed network state and lock-step execution semantics."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

from .adu import ADU
from .nf import ConfigError, Effect, NFModel, StateStore
from .nflib import build_model


class TopologyError(Exception):
    pass


class LoopError(Exception):
    def __init__(self, adu_id, steps):
        super().__init__(f"ADU {adu_id} exceeded the loop bound after {steps} steps")
        self.adu_id = adu_id
        self.steps = steps


class Edge(NamedTuple):
    src: str
    port: str
    dst: str

    @property
    def name(self) -> str:
        return f"{self.src}->{self.dst}"


@dataclass
class NodeSpec:
    id: str
    type: str
    config: dict = field(default_factory=dict)


class Topology:
    """Nodes, directed edges ``(node, port) -> node``, sources and sinks."""

    def __init__(self, nodes: Iterable[NodeSpec], edges: Iterable[Edge], sources: Sequence[str],
                 sinks: Sequence[str], domains: Mapping | None = None):
        self.nodes = {n.id: n for n in nodes}
        self.edges = list(edges)
        self.sources = list(sources)
        self.sinks = list(sinks)
        self.domains = dict(domains or {})
        self._out = {}
        for i, e in enumerate(self.edges):
            if (e.src, e.port) in self._out:
                raise TopologyError(f"port {e.src}:{e.port} is wired twice")
            self._out[(e.src, e.port)] = i
        self.validate()

    def validate(self):
        for e in self.edges:
            for end in (e.src, e.dst):
                if end not in self.nodes:
                    raise TopologyError(f"edge {e.name} references unknown node {end!r}")
        for s in self.sources:
            if s not in self.nodes:
                raise TopologyError(f"unknown source {s!r}")
            if (s, "nic") not in self._out:
                raise TopologyError(f"source {s!r} has no 'nic' port")
        if not self.sinks:
            raise TopologyError("topology needs at least one sink")
        for s in self.sinks:
            if s not in self.nodes:
                raise TopologyError(f"unknown sink {s!r}")

    def ports(self, node: str) -> dict[str, str]:
        return {e.port: e.dst for e in self.edges if e.src == node}

    def out_edge(self, node: str, port: str) -> int:
        try:
            return self._out[(node, port)]
        except KeyError:
            raise TopologyError(f"{node} has no edge on port {port!r}") from None

    def edges_into(self, node: str) -> list[int]:
        return [i for i, e in enumerate(self.edges) if e.dst == node]

    def addr_of(self, node: str) -> int:
        return int(self.nodes[node].config["addr"])

    def host_addrs(self) -> dict[int, str]:
        return {int(n.config["addr"]): n.id for n in self.nodes.values() if "addr" in n.config
                and n.type in ("host", "server")}

    def source_for(self, addr: int) -> str:
        for s in self.sources:
            if self.nodes[s].config.get("addr") == addr:
                return s
        raise TopologyError(f"no source with address {addr}")

    def nodes_of_type(self, kind: str) -> list[str]:
        return [n.id for n in self.nodes.values() if n.type == kind]

    def copy(self) -> "Topology":
        return Topology.from_json(self.to_json())

    def to_json(self) -> dict:
        out = {
            "nodes": [{"id": n.id, "type": n.type, "config": n.config} for n in self.nodes.values()],
            "edges": [{"from": e.src, "fromPort": e.port, "to": e.dst} for e in self.edges],
            "sources": self.sources,
            "sinks": self.sinks,
        }
        if self.domains:
            out["domains"] = self.domains
        return copy.deepcopy(out)

    @classmethod
    def from_json(cls, data: Mapping) -> "Topology":
        try:
            nodes = [NodeSpec(n["id"], n["type"], dict(n.get("config", {}))) for n in data["nodes"]]
            edges = [Edge(e["from"], e.get("fromPort", e["to"]), e["to"]) for e in data["edges"]]
            return cls(nodes, edges, data.get("sources", []), data.get("sinks", []), data.get("domains"))
        except KeyError as exc:
            raise TopologyError(f"topology JSON missing key {exc}") from None

    @classmethod
    def load(cls, path) -> "Topology":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


class NetworkState(Mapping):
    """Per-node StateStore snapshots; immutable and hashable."""

    __slots__ = ("_stores", "_key")

    def __init__(self, stores: Mapping[str, StateStore]):
        self._stores = dict(stores)
        self._key = None

    def __getitem__(self, node):
        return self._stores[node]

    def __iter__(self):
        return iter(self._stores)

    def __len__(self):
        return len(self._stores)

    def with_store(self, node: str, store: StateStore) -> "NetworkState":
        if self._stores[node] is store:
            return self
        stores = dict(self._stores)
        stores[node] = store
        return NetworkState(stores)

    def key(self) -> tuple:
        if self._key is None:
            self._key = tuple((n, s.key()) for n, s in sorted(self._stores.items()) if len(s))
        return self._key

    def __hash__(self):
        return hash(self.key())

    def __eq__(self, other):
        return isinstance(other, NetworkState) and self.key() == other.key()

    def dumps(self) -> str:
        return json.dumps({n: s.snapshot() for n, s in sorted(self._stores.items())}, sort_keys=True)


class Hop(NamedTuple):
    node: str
    effect: Effect
    adu: ADU  # ADU as emitted by the node
    edge_in: int


class SmallStep(NamedTuple):
    state: NetworkState
    next_node: str | None
    adu: ADU
    effect: Effect
    edge: int | None


class Event(NamedTuple):
    """Observation emitted during execution.

    kind: ``edge`` (ADU placed on an edge), ``hop`` (node processed it) or
    ``done`` (traversal ended; ``reason`` tells how).
    """

    kind: str
    adu: ADU
    injected: ADU
    node: str | None = None
    edge: int | None = None
    effect: Effect | None = None
    seen: int = 0
    path: tuple = ()
    reason: str = ""
    origin: int = -1  # injection edge


class Injection(NamedTuple):
    state: NetworkState
    path: tuple[Hop, ...]
    adu: ADU
    outcome: str  # sink | consumed | dropped | lost | tick


Observer = Callable[[Event], None]


class Network:
    """Composed network model executed one ADU at a time.

    ``down_edges`` silently lose ADUs (used by the fault harness). The loop
    bound is ``loop_k * |edges|`` steps per ADU.
    """

    def __init__(self, topology: Topology, loop_k: int = 3, down_edges: Iterable[int] = ()):
        self.topology = topology
        self.loop_k = loop_k
        self.down_edges = frozenset(down_edges)
        self.models: dict[str, NFModel] = {
            nid: build_model(nid, spec.type, spec.config, topology.ports(nid))
            for nid, spec in topology.nodes.items()
        }

    @property
    def loop_bound(self) -> int:
        return self.loop_k * max(1, len(self.topology.edges))

    def initial_state(self) -> NetworkState:
        return NetworkState({n: StateStore() for n in self.topology.nodes})

    def reset(self, state: NetworkState, node: str) -> NetworkState:
        return state.with_store(node, self.models[node].reset(state[node]))

    def small_step(self, state: NetworkState, at: str, adu: ADU, ingress: str | None = None) -> SmallStep:
        model = self.models[at]
        store, out, port, effect = model.process(state[at], adu, ingress)
        state = state.with_store(at, store)
        if out.is_dropped or port is None:
            return SmallStep(state, None, out, effect, None)
        edge = self.topology.out_edge(at, port)
        return SmallStep(state, self.topology.edges[edge].dst, out.replace(network_port=edge), effect, edge)

    def tick(self, state: NetworkState, adu: ADU) -> tuple[NetworkState, tuple[Hop, ...]]:
        hops = []
        for node, model in self.models.items():
            if model.stateful:
                state, _, _, effect, _ = self.small_step(state, node, adu)
                hops.append(Hop(node, effect, adu, -1))
        return state, tuple(hops)

    def inject(self, state: NetworkState, adu: ADU, source: str, observer: Observer | None = None) -> Injection:
        if adu.is_time_tick == 1:
            state, hops = self.tick(state, adu)
            if observer:
                observer(Event("done", adu, adu, reason="tick", path=hops))
            return Injection(state, hops, adu, "tick")
        if source not in self.topology.sources:
            raise TopologyError(f"{source!r} is not a topology source")
        injected = adu
        edge = origin = self.topology.out_edge(source, "nic")
        adu = adu.replace(network_port=edge)
        at, ingress = self.topology.edges[edge].dst, source
        path: list[Hop] = []
        seen: dict[int, int] = {}
        steps = 0
        while True:
            seen[edge] = seen.get(edge, 0) + 1
            if observer:
                observer(Event("edge", adu, injected, node=at, edge=edge, seen=seen[edge], path=tuple(path),
                               origin=origin))
            if edge in self.down_edges:
                if observer:
                    observer(Event("done", adu, injected, node=at, edge=edge, path=tuple(path), reason="lost",
                                   origin=origin))
                return Injection(state, tuple(path), adu, "lost")
            steps += 1
            if steps > self.loop_bound:
                raise LoopError(adu.adu_id, steps)
            state, nxt, out, effect, out_edge = self.small_step(state, at, adu, ingress)
            path.append(Hop(at, effect, out, edge))
            if observer:
                observer(Event("hop", out, injected, node=at, edge=edge, effect=effect, path=tuple(path),
                               origin=origin))
            if nxt is None:
                if out.is_dropped:
                    reason = "dropped"
                elif self.topology.nodes[at].type in ("host", "server"):
                    reason = "sink"
                else:
                    reason = "consumed"
                if observer:
                    observer(Event("done", out, injected, node=at, edge=edge, effect=effect, path=tuple(path),
                                   reason=reason, origin=origin))
                return Injection(state, tuple(path), out, reason)
            ingress, at, edge, adu = at, nxt, out_edge, out

    def execute_trace(self, state: NetworkState, trace: Iterable[tuple[str, ADU]],
                      observer: Observer | None = None) -> tuple[NetworkState, list[tuple[Effect, ...]]]:
        sem = []
        for source, adu in trace:
            state, path, _, _ = self.inject(state, adu, source, observer)
            sem.append(tuple(h.effect for h in path))
        return state, sem


def build_network(topology: Topology, **kwargs) -> Network:
    try:
        return Network(topology, **kwargs)
    except ConfigError as exc:
        raise TopologyError(str(exc)) from exc
