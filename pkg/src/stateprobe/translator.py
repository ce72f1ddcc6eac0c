"""Plan -> per-injector test scripts built from traffic primitives, and back
out to wire events for the harness.

A primitive is a short ADU template. Matching is greedy over each
(host pair) partition: higher protocol layers first, then longer templates.
A template only matches if expanding the recovered parameters reproduces the
ADU slice exactly, so translation always round-trips.
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

from .adu import ADU, DONT_CARE, JSON_NAMES, PY_NAMES, TCP, UDP
from .planner import Plan

HTTP, TCP_LAYER, UDP_LAYER, IP = 3, 2, 1, 0
_VOLATILE = ("adu_id", "is_test", "network_port")
FTP_PORT = 21


class ScriptError(ValueError):
    pass


class PlanEntry(NamedTuple):
    seq: int
    source: str
    adu: ADU


class Shape(NamedTuple):
    fields: Mapping[str, object]  # value, or "$name" for a parameter
    reverse: bool = False  # sent by the peer, endpoints swapped
    optional: bool = False


@dataclass(frozen=True)
class Template:
    name: str
    layer: int
    shapes: tuple[Shape, ...]
    when: Callable[[Mapping[str, int]], bool] = lambda hdr: True
    origin: str = "completed"  # or "named" for the classic primitives


def _flags(**kw):
    return {f"tcp_{k}": v for k, v in kw.items()}


def _is_tcp(hdr):
    return hdr.get("proto", TCP) == TCP


LIBRARY: dict[str, Template] = {t.name: t for t in (
    Template("getHTTP", HTTP, (Shape({"http_get_obj": "$obj"}),
                               Shape({"http_resp_obj": "$obj"}, reverse=True, optional=True)),
             lambda h: _is_tcp(h) and h.get("dst_port") != FTP_PORT, "named"),
    Template("getFTP", HTTP, (Shape({"http_get_obj": "$obj"}),
                              Shape({"http_resp_obj": "$obj"}, reverse=True, optional=True)),
             lambda h: _is_tcp(h) and h.get("dst_port") == FTP_PORT),
    Template("establishTCP", TCP_LAYER, (Shape(_flags(syn=1)),
                                         Shape(_flags(syn=1, ack=1), reverse=True, optional=True),
                                         Shape(_flags(syn=0, ack=1))), _is_tcp, "named"),
    Template("sendTCPSyn", TCP_LAYER, (Shape(_flags(syn=1)), Shape(_flags(syn=1, ack=1), reverse=True)), _is_tcp),
    Template("failedConnect", TCP_LAYER, (Shape(_flags(syn=1)),
                                          Shape(_flags(rst=1), reverse=True, optional=True)), _is_tcp),
    Template("closeTCP", TCP_LAYER, (Shape(_flags(fin=1)),
                                     Shape(_flags(fin=1, ack=1), reverse=True, optional=True)), _is_tcp, "named"),
    Template("sendPayloadSig", TCP_LAYER, (Shape({"payload_sig": "$sig"}),), _is_tcp),
    Template("sendTCPData", TCP_LAYER, (Shape(_flags(ack=1)),), _is_tcp),
    Template("sendUDP", UDP_LAYER, (Shape({}),), lambda h: h.get("proto") == UDP),
    Template("sendIPPacket", IP, (Shape({}),), origin="named"),
    Template("waitTicks", IP, ()),
)}

_ORDERED = sorted((t for t in LIBRARY.values() if t.shapes),
                  key=lambda t: (-t.layer, -len(t.shapes), t.name))


@dataclass
class Step:
    primitive: str
    params: dict
    barrier: list[int]

    def to_json(self) -> dict:
        return {"primitive": self.primitive, "params": self.params, "barrier": self.barrier}


@dataclass
class TestScript:
    __test__ = False  # not a pytest class

    injector: str
    steps: list[Step] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"injector": self.injector, "steps": [s.to_json() for s in self.steps]}

    @classmethod
    def from_json(cls, data: Mapping) -> "TestScript":
        return cls(data["injector"], [Step(s["primitive"], dict(s["params"]), list(s["barrier"]))
                                      for s in data["steps"]])


class WireEvent(NamedTuple):
    seq: int
    source: str
    adu: ADU


def entries(plan: Plan | Sequence) -> list[PlanEntry]:
    steps = plan.steps if isinstance(plan, Plan) else plan
    out = []
    for i, item in enumerate(steps):
        out.append(item if isinstance(item, PlanEntry) else PlanEntry(i, item[0], item[1]))
    return out


def pair_key(adu: ADU) -> tuple[int, int]:
    return (min(adu.src_ip, adu.dst_ip), max(adu.src_ip, adu.dst_ip))


def partition(plan: Plan | Sequence) -> dict[tuple[int, int], list[PlanEntry]]:
    """Group plan ADUs by unordered (srcIP, dstIP) pair, keeping plan order."""
    groups: dict = defaultdict(list)
    for entry in entries(plan):
        groups[pair_key(entry.adu)].append(entry)
    return dict(groups)


def _swap(values: Mapping[str, int]) -> dict:
    out = dict(values)
    for a, b in (("src_ip", "dst_ip"), ("src_port", "dst_port")):
        out[a], out[b] = values.get(b, DONT_CARE), values.get(a, DONT_CARE)
    return out


def _stable(adu: ADU) -> dict[str, int]:
    return {f: v for f, v in adu.to_json().items() if f != "cTags" and v != DONT_CARE
            and PY_NAMES[f] not in _VOLATILE}


def _instantiate(template: Template, params: Mapping, used: Sequence[bool]) -> list[ADU]:
    hdr = {PY_NAMES[k]: v for k, v in params["hdr"].items()}
    out = []
    for shape, on in zip(template.shapes, used):
        if not on:
            continue
        values = _swap(hdr) if shape.reverse else dict(hdr)
        for name, v in shape.fields.items():
            values[name] = params[v[1:]] if isinstance(v, str) else v
        out.append(ADU(**values))
    return out


def _bind(template: Template, window: Sequence[PlanEntry], used: Sequence[bool]):
    """Recover primitive params from ``window`` or return None."""
    first = window[0]
    if template.shapes[0].reverse:
        return None
    hdr = _stable(first.adu)
    params: dict = {}
    shapes = [s for s, on in zip(template.shapes, used) if on]
    for shape, entry in zip(shapes, window):
        for name, v in shape.fields.items():
            if isinstance(v, str):
                got = getattr(entry.adu, name)
                if got == DONT_CARE or params.setdefault(v[1:], got) != got:
                    return None
    for name in template.shapes[0].fields:
        hdr.pop(JSON_NAMES[name], None)
    if not template.when({PY_NAMES[k]: v for k, v in hdr.items()}):
        return None
    params["hdr"] = dict(sorted(hdr.items()))
    peers = {e.source for s, e in zip(shapes, window) if s.reverse}
    if len(peers) > 1 or any(e.source != first.source for s, e in zip(shapes, window) if not s.reverse):
        return None
    if peers:
        params["peer"] = peers.pop()
    expected = [e.adu.replace(adu_id=DONT_CARE, is_test=DONT_CARE, network_port=DONT_CARE) for e in window]
    return params if _instantiate(template, params, used) == expected else None


def _variants(template: Template):
    """Which shapes are present, longest variants first."""
    optional = [i for i, s in enumerate(template.shapes) if s.optional]
    out = []
    for mask in range(1 << len(optional)):
        used = [True] * len(template.shapes)
        for bit, i in enumerate(optional):
            used[i] = not (mask >> bit) & 1
        out.append(tuple(used))
    return sorted(set(out), key=lambda u: -sum(u))


def _match_ticks(subseq: Sequence[PlanEntry], i: int):
    first = subseq[i].adu
    if first.is_time_tick != 1:
        return None
    n = 1
    while (i + n < len(subseq) and subseq[i + n].adu.is_time_tick == 1
           and subseq[i + n].adu.tick == first.tick + n):
        n += 1
    return Step("waitTicks", {"start": first.tick, "n": n}, [e.seq for e in subseq[i:i + n]]), n


def translate(subseq: Sequence[PlanEntry] | Sequence[ADU]) -> list[Step]:
    """Greedy longest-specific match of one partition onto primitives."""
    if subseq and isinstance(subseq[0], ADU):
        subseq = [PlanEntry(i, "", a) for i, a in enumerate(subseq)]
    steps, i = [], 0
    while i < len(subseq):
        ticks = _match_ticks(subseq, i)
        if ticks:
            steps.append(ticks[0])
            i += ticks[1]
            continue
        for template in _ORDERED:
            found = None
            for used in _variants(template):
                n = sum(used)
                if i + n > len(subseq):
                    continue
                params = _bind(template, subseq[i:i + n], used)
                if params is not None:
                    found = (params, n, used)
                    break
            if found:
                params, n, used = found
                if any(not u for u in used):
                    params["omit"] = [k for k, u in enumerate(used) if not u]
                steps.append(Step(template.name, params, [e.seq for e in subseq[i:i + n]]))
                i += n
                break
        else:  # sendIPPacket always matches; kept for safety
            raise ScriptError(f"no primitive matches ADU {subseq[i].adu}")
    return steps


def to_scripts(plan: Plan | Sequence) -> list[TestScript]:
    """Translate every partition and group the steps by injector host."""
    plan_entries = entries(plan)
    by_seq = {e.seq: e for e in plan_entries}
    scripts: dict[str, TestScript] = {}
    for _, subseq in sorted(partition(plan_entries).items()):
        for step in translate(subseq):
            injector = by_seq[step.barrier[0]].source or "clock"
            scripts.setdefault(injector, TestScript(injector)).steps.append(step)
    for script in scripts.values():
        script.steps.sort(key=lambda s: s.barrier[0])
    return [scripts[k] for k in sorted(scripts)]


def expand_step(step: Step, injector: str) -> list[WireEvent]:
    if step.primitive == "waitTicks":
        start, n = step.params["start"], step.params["n"]
        adus = [ADU(is_time_tick=1, tick=start + k) for k in range(n)]
        sources = [injector] * n
    else:
        try:
            template = LIBRARY[step.primitive]
        except KeyError:
            raise ScriptError(f"unknown primitive {step.primitive!r}") from None
        omit = set(step.params.get("omit", ()))
        used = [k not in omit for k in range(len(template.shapes))]
        adus = _instantiate(template, step.params, used)
        shapes = [s for s, on in zip(template.shapes, used) if on]
        sources = [step.params.get("peer", injector) if s.reverse else injector for s in shapes]
    if len(adus) != len(step.barrier):
        raise ScriptError(f"{step.primitive}: {len(adus)} ADUs but barrier lists {len(step.barrier)}")
    return [WireEvent(seq, src, adu.replace(adu_id=seq + 1, is_test=1))
            for seq, src, adu in zip(step.barrier, sources, adus)]


def expand(scripts: TestScript | Iterable[TestScript]) -> list[WireEvent]:
    """Wire events of all scripts, merged in barrier (global plan) order."""
    if isinstance(scripts, TestScript):
        scripts = [scripts]
    events = [ev for script in scripts for step in script.steps for ev in expand_step(step, script.injector)]
    events.sort(key=lambda ev: ev.seq)
    seqs = [ev.seq for ev in events]
    if len(set(seqs)) != len(seqs):
        raise ScriptError("two wire events share a barrier slot")
    return events


def scripts_to_json(scripts: Sequence[TestScript]) -> str:
    return json.dumps([s.to_json() for s in scripts], sort_keys=True, indent=1)


def scripts_from_json(text: str) -> list[TestScript]:
    return [TestScript.from_json(d) for d in json.loads(text)]
