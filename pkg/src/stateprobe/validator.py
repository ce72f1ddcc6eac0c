"""Verdicts from intended vs. observed paths, with failure localization."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

from .adu import ADU, CONTEXT_TOKENS, CTags
from .harness import MONITOR_ALL, STATEFUL_ONLY, MonitorLog
from .network import Topology
from .nflib import NF_TYPES
from .policy import DROP, PolicyScenario, admits

SUCCESS, FAIL, UNKNOWN = "Success", "Fail", "Unknown"
NONE, RESOLVABLE, UNRESOLVABLE = "None", "Resolvable", "Unresolvable"
BACKOFF = (1, 2, 4)
# NFs whose state is per connection or per server, not per host
CONNECTION_SCOPED = frozenset({"firewall", "proxy", "nat", "lb", "monitor"})


class CorruptLog(ValueError):
    pass


class PathEntry(NamedTuple):
    port: int  # -1 for a gap
    direction: str  # rx | drop | lost | loop | gap
    adu: Mapping | None
    record: int  # index into the log, -1 for a gap

    def same(self, other: "PathEntry") -> bool:
        return (self.port, self.direction, self.adu) == (other.port, other.direction, other.adu)


@dataclass
class PathView:
    adu_id: int
    entries: list[PathEntry] = field(default_factory=list)

    def observed(self) -> list[PathEntry]:
        return [e for e in self.entries if e.direction != "gap"]

    def __eq__(self, other):
        a, b = self.observed(), other.observed()
        return len(a) == len(b) and all(x.same(y) for x, y in zip(a, b))


def reconstruct(log: MonitorLog, topology: Topology) -> dict[int, PathView]:
    """Per test ADU, its ordered records; unseen stretches become gap markers."""
    edges = topology.edges
    views: dict[int, PathView] = {}
    for idx, rec in enumerate(log.records):
        if not rec.is_test:
            continue
        view = views.setdefault(rec.adu_id, PathView(rec.adu_id))
        entry = PathEntry(rec.port, rec.direction, rec.adu, idx)
        prev = view.entries[-1] if view.entries else None
        if rec.direction == "loop":
            view.entries.append(entry)
            continue
        if not 0 <= rec.port < len(edges):
            raise CorruptLog(f"record {idx} names unknown port {rec.port}")
        if prev is None:
            first = edges[rec.port]
            if first.port != "nic" or rec.direction != "rx":
                if log.mode == MONITOR_ALL:
                    raise CorruptLog(f"ADU {rec.adu_id} does not start at an injection port")
                view.entries.append(PathEntry(-1, "gap", None, -1))
        elif rec.direction in ("drop", "lost"):
            if prev.port != rec.port:
                if log.mode == MONITOR_ALL:
                    raise CorruptLog(f"record {idx}: {rec.direction} on a port the ADU never reached")
                view.entries.append(PathEntry(-1, "gap", None, -1))
        elif prev.direction in ("drop", "lost"):
            raise CorruptLog(f"record {idx}: ADU {rec.adu_id} moves after it ended")
        elif edges[prev.port].dst != edges[rec.port].src:
            if log.mode == MONITOR_ALL:
                raise CorruptLog(f"records {prev.record} and {idx} are not adjacent")
            view.entries.append(PathEntry(-1, "gap", None, -1))
        view.entries.append(entry)
    return views


@dataclass
class Interference:
    kind: str
    evidence: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"kind": self.kind, "evidence": self.evidence}


def detect_interference(log: MonitorLog, scenario: PolicyScenario, topology: Topology) -> Interference:
    """Classify background traffic seen in ``log`` against ``scenario``.

    Background that the scenario's traffic class does not admit, or that
    uses another protocol than the test traffic, is ignored.
    Admitted flows are harmless only if they touch none of the policy's
    stateful NFs, share no host with the test, ask for other objects, or only
    touch per-connection state for another server.
    """
    specs = [scenario.trace_spec] + [h.trace_spec for h in scenario.history]
    test_adus = {}
    for rec in log.records:
        if rec.is_test:
            test_adus.setdefault(rec.adu_id, ADU.from_json(rec.adu))
    test_hosts = {a for adu in test_adus.values() for a in (adu.src_ip, adu.dst_ip)}
    test_servers = {adu.dst_ip for adu in test_adus.values()}
    test_objects = {adu.http_get_obj for adu in test_adus.values() if adu.http_get_obj >= 0}
    test_protos = {adu.proto for adu in test_adus.values()}
    policy_nfs = {n for n in scenario.nfs() if NF_TYPES[topology.nodes[n].type].stateful}

    flows: dict[int, list[int]] = {}
    for idx, rec in enumerate(log.records):
        if not rec.is_test:
            flows.setdefault(rec.adu_id, []).append(idx)
    matching = {}
    for aid, idxs in flows.items():
        injected = ADU.from_json(log.records[idxs[0]].adu)
        if injected.proto in test_protos and any(admits(spec, injected) for spec in specs):
            matching[aid] = (injected, idxs)
    if not matching:
        return Interference(NONE)

    evidence, harmful = [], False
    for aid, (injected, idxs) in sorted(matching.items()):
        evidence += idxs
        touched = set()
        for i in idxs:
            edge = topology.edges[log.records[i].port] if log.records[i].port >= 0 else None
            if edge is not None:
                touched.update(n for n in (edge.src, edge.dst) if n in policy_nfs)
        kinds = {topology.nodes[n].type for n in touched}
        safe = (
            not touched
            or not ({injected.src_ip, injected.dst_ip} & test_hosts)
            or (injected.http_get_obj >= 0 and bool(test_objects) and injected.http_get_obj not in test_objects)
            or (kinds <= CONNECTION_SCOPED and injected.dst_ip not in test_servers)
        )
        harmful = harmful or not safe
    return Interference(UNRESOLVABLE if harmful else RESOLVABLE, evidence)


@dataclass
class Localization:
    element: str | None = None
    segment: list[str] = field(default_factory=list)
    adu_id: int = -1
    index: int = -1  # position of the first divergent entry
    follow_up: bool = False

    @property
    def blamed(self):
        return self.element if self.element is not None else self.segment

    def covers(self, name: str) -> bool:
        return self.element == name or name in self.segment


@dataclass
class Verdict:
    scenario: str
    verdict: str
    localized: Localization | None = None
    evidence: list[int] = field(default_factory=list)
    reason: str = ""
    follow_up: str = ""
    attempts: int = 0

    def to_json(self) -> dict:
        loc = self.localized
        out = {"scenario": self.scenario, "verdict": self.verdict,
               "localized": loc.blamed if loc else None, "evidence": self.evidence}
        if loc is not None:
            out["divergence"] = {"aduId": loc.adu_id, "index": loc.index}
            if loc.segment:
                out["segment"] = loc.segment
        if self.reason:
            out["reason"] = self.reason
        if self.follow_up:
            out["followUp"] = self.follow_up
        if self.attempts:
            out["attempts"] = self.attempts
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _blame(topology: Topology, orig: list[PathEntry], obs: list[PathEntry], j: int) -> str:
    edges = topology.edges
    if j >= len(orig):  # the intended path ended here, the observed one went on
        last = orig[-1]
        return edges[last.port].dst
    if j >= len(obs):  # observed path stops early
        if obs:
            return edges[obs[-1].port].dst
        return edges[orig[0].port].src
    o, b = orig[j], obs[j]
    if b.direction == "lost":
        return edges[b.port].name
    if b.direction == "loop":
        return edges[obs[j - 1].port].dst if j else edges[o.port].src
    if b.direction == "drop" and o.direction != "drop":
        return edges[b.port].dst
    if o.direction in ("drop", "lost") and b.direction == "rx":
        return edges[o.port].dst
    if o.direction == "drop" and b.direction == "drop":
        return edges[o.port].dst
    return edges[o.port].src


def _segment(topology: Topology, full: list[PathEntry], start: PathEntry | None, end: PathEntry | None) -> list[str]:
    """Nodes and links on the full intended path between two visible entries."""
    edges = topology.edges
    ports = [e.port for e in full if e.direction == "rx"]
    lo = ports.index(start.port) + 1 if start is not None and start.port in ports else 0
    hi = ports.index(end.port) + 1 if end is not None and end.port in ports else len(ports)
    out = []
    if start is not None and start.port >= 0:
        out.append(edges[start.port].dst)
    for p in ports[lo:hi]:
        e = edges[p]
        for name in (e.src, e.name, e.dst):
            if name not in out:
                out.append(name)
    return out


def localize(orig: Mapping[int, PathView], obs: Mapping[int, PathView], topology: Topology,
             mode: str = MONITOR_ALL, orig_full: Mapping[int, PathView] | None = None) -> Localization | None:
    """First element after the largest common prefix of the two paths."""
    for aid in sorted(set(orig) | set(obs)):
        a = orig.get(aid, PathView(aid)).observed()
        b = obs.get(aid, PathView(aid)).observed()
        j = 0
        while j < len(a) and j < len(b) and a[j].same(b[j]):
            j += 1
        if j == len(a) == len(b):
            continue
        if not a:
            return Localization(element=edges_src(topology, b[0]), adu_id=aid, index=0)
        element = _blame(topology, a, b, j)
        spec = topology.nodes.get(element)
        if mode == STATEFUL_ONLY and (spec is None or not NF_TYPES[spec.type].stateful):
            full = (orig_full or orig).get(aid, PathView(aid)).observed()
            start = a[j - 1] if j else None
            end = a[j] if j < len(a) else None
            segment = _segment(topology, full, start, end)
            if element not in segment:
                segment.append(element)
            return Localization(segment=segment, adu_id=aid, index=j, follow_up=True)
        return Localization(element=element, adu_id=aid, index=j)
    return None


def edges_src(topology: Topology, entry: PathEntry) -> str:
    return topology.edges[entry.port].src if entry.port >= 0 else "?"


def policy_observed(view: PathView, scenario: PolicyScenario, topology: Topology) -> bool:
    """Does the observed path show every policy element and token, in order?"""
    edges = topology.edges
    steps = []  # (node, tokens, dropped_here)
    for e in view.observed():
        if e.port < 0:
            continue
        ctags = CTags.from_json(e.adu.get("cTags", {}))
        if e.direction == "rx":
            node = edges[e.port].src
            steps.append((node, ctags.tokens(node), False))
        elif e.direction == "drop":
            node = edges[e.port].dst
            steps.append((node, ctags.tokens(node), True))
    i = 0
    path = scenario.policy_path
    for node, tokens, dropped in steps:
        if i < len(path) and path[i].nf == node:
            need = path[i].contexts
            if {t for t in need if t in CONTEXT_TOKENS} <= tokens and ("DROP" not in need or dropped):
                i += 1
    if i < len(path):
        return False
    return scenario.action != DROP or bool(steps and steps[-1][2])


def validate(orig: Mapping[int, PathView], obs: Mapping[int, PathView], interference: Interference,
             topology: Topology, scenario: PolicyScenario, mode: str = MONITOR_ALL,
             orig_full: Mapping[int, PathView] | None = None) -> Verdict:
    if interference.kind == UNRESOLVABLE:
        return Verdict(scenario.name, UNKNOWN, evidence=interference.evidence, reason="interference",
                       follow_up="rerun with MonitorAll")
    loc = localize(orig, obs, topology, mode, orig_full)
    if loc is None:
        last = obs[max(obs)] if obs else PathView(-1)
        if not policy_observed(last, scenario, topology):
            return Verdict(scenario.name, FAIL, reason="policy path not observed",
                           evidence=[e.record for e in last.entries if e.record >= 0])
        return Verdict(scenario.name, SUCCESS, evidence=interference.evidence)
    view = obs.get(loc.adu_id, PathView(loc.adu_id))
    evidence = [e.record for e in view.entries if e.record >= 0]
    return Verdict(scenario.name, FAIL, loc, evidence, follow_up="rerun with MonitorAll" if loc.follow_up else "")
