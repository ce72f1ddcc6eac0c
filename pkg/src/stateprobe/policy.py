"""Policy scenarios and the assertions compiled from them.

A scenario is (traceSpec; policyPath; action). The compiled assertion is the
negation of the intent: an execution *violates* it exactly when an ADU admitted
by traceSpec realizes the policy path and ends with the intended action, so a
violating trace is a test that drives the network into the policy's branch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .adu import ADU, CONTEXT_TOKENS, DONT_CARE, JSON_NAMES, PY_NAMES
from .network import Event, Hop, Topology
from .nf import EFFECT_LABELS

ALLOW, DROP = "ALLOW", "DROP"
VOCABULARY = CONTEXT_TOKENS | EFFECT_LABELS


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class PathElement:
    nf: str
    contexts: frozenset = frozenset()

    def satisfied_by(self, hop: Hop) -> bool:
        if hop.node != self.nf:
            return False
        seen = hop.adu.ctags.tokens(hop.node) | {hop.effect.label}
        return self.contexts <= seen


def _spec_from_json(data: Mapping | None) -> dict[str, tuple[int, ...]]:
    spec = {}
    for key, value in (data or {}).items():
        name = PY_NAMES.get(key, key)
        if name not in JSON_NAMES:
            raise PolicyError(f"unknown traceSpec field {key!r}")
        values = value if isinstance(value, (list, tuple)) else [value]
        if list(values) != [DONT_CARE]:
            spec[name] = tuple(sorted(int(v) for v in values))
    return spec


def _path_from_json(data) -> tuple[PathElement, ...]:
    return tuple(PathElement(e["nf"], frozenset(e.get("contexts", ()))) for e in data or ())


def admits(spec: Mapping[str, Sequence[int]], adu: ADU) -> bool:
    return all(getattr(adu, f) in vals or getattr(adu, f) == DONT_CARE for f, vals in spec.items())


def realizes(path: Sequence[Hop], policy_path: Sequence[PathElement], anchor_last: bool = False) -> bool:
    """Does ``path`` contain ``policy_path`` as a subsequence?

    With ``anchor_last`` the final element must match the final hop.
    """
    if not policy_path:
        return True
    hops = list(path)
    elements = list(policy_path)
    if anchor_last:
        if not hops or not elements[-1].satisfied_by(hops[-1]):
            return False
        hops, elements = hops[:-1], elements[:-1]
    i = 0
    for hop in hops:
        if i < len(elements) and elements[i].satisfied_by(hop):
            i += 1
    return i == len(elements)


@dataclass(frozen=True)
class HistoryClause:
    """Earlier ADUs the trace must contain: ``count`` of them admitted by
    ``trace_spec`` and realizing ``policy_path``."""

    trace_spec: Mapping[str, tuple[int, ...]]
    policy_path: tuple[PathElement, ...]
    count: int = 1


@dataclass(frozen=True)
class PolicyScenario:
    name: str
    trace_spec: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    policy_path: tuple[PathElement, ...] = ()
    action: str = ALLOW
    history: tuple[HistoryClause, ...] = ()

    def __post_init__(self):
        if self.action not in (ALLOW, DROP):
            raise PolicyError(f"{self.name}: action must be ALLOW or DROP")

    def nfs(self) -> list[str]:
        names = [e.nf for e in self.policy_path]
        for clause in self.history:
            names += [e.nf for e in clause.policy_path]
        return list(dict.fromkeys(names))

    @classmethod
    def from_json(cls, data: Mapping) -> "PolicyScenario":
        history = tuple(
            HistoryClause(_spec_from_json(h.get("traceSpec")), _path_from_json(h.get("policyPath")),
                          int(h.get("count", 1)))
            for h in data.get("history", ())
        )
        return cls(data["name"], _spec_from_json(data.get("traceSpec")), _path_from_json(data.get("policyPath")),
                   data.get("action", ALLOW).upper(), history)

    def to_json(self) -> dict:
        def spec(s):
            return {JSON_NAMES[f]: list(v) if len(v) > 1 else v[0] for f, v in s.items()}

        def path(p):
            return [{"nf": e.nf, "contexts": sorted(e.contexts)} for e in p]

        out = {"name": self.name, "traceSpec": spec(self.trace_spec), "policyPath": path(self.policy_path),
               "action": self.action}
        if self.history:
            out["history"] = [{"traceSpec": spec(h.trace_spec), "policyPath": path(h.policy_path), "count": h.count}
                              for h in self.history]
        return out


def load_policies(path) -> list[PolicyScenario]:
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, Mapping):
        data = data.get("scenarios", [data])
    return [PolicyScenario.from_json(d) for d in data]


class Assertion:
    """Predicate checked at every execution event; never mutates the network.

    Search-relevant progress (history counts) is threaded explicitly through
    :meth:`observe` so that planner branches stay independent.
    """

    kind = "abstract"

    def initial(self):
        return ()

    def observe(self, progress, event: Event):
        """Return ``(progress, violated)``."""
        raise NotImplementedError

    def __call__(self, event: Event) -> bool:
        return self.observe(self.initial(), event)[1]


class PolicyAssertion(Assertion):
    kind = "policy-negation"

    def __init__(self, scenario: PolicyScenario):
        self.scenario = scenario

    def initial(self):
        return tuple(0 for _ in self.scenario.history)

    def realized(self, event: Event) -> bool:
        s = self.scenario
        if not s.policy_path or not admits(s.trace_spec, event.injected):
            return False
        if s.action == DROP:
            return event.reason == "dropped" and realizes(event.path, s.policy_path, anchor_last=True)
        return event.reason == "sink" and not event.adu.is_dropped and realizes(event.path, s.policy_path)

    def observe(self, progress, event):
        if event.kind != "done" or event.reason == "tick":
            return progress, False
        history = self.scenario.history
        ready = all(p >= h.count for p, h in zip(progress, history))
        violated = ready and self.realized(event)
        if history and not violated:
            progress = tuple(
                min(h.count, p + (admits(h.trace_spec, event.injected) and realizes(event.path, h.policy_path)))
                for p, h in zip(progress, history)
            )
        return progress, violated


class LoopAssertion(Assertion):
    kind = "loop"

    def __init__(self, k: int):
        self.k = k

    def observe(self, progress, event):
        return progress, event.kind == "edge" and event.seen >= self.k


class ReachabilityAssertion(Assertion):
    kind = "reachability"

    def __init__(self, ports_a: Iterable[int], ports_b: Iterable[int]):
        self.ports_a = frozenset(ports_a)
        self.ports_b = frozenset(ports_b)

    def observe(self, progress, event):
        return progress, (event.kind == "edge" and event.origin in self.ports_a and event.edge in self.ports_b)


def compile_assertion(scenario: PolicyScenario, topology: Topology | None = None) -> PolicyAssertion:
    elements = list(scenario.policy_path)
    for clause in scenario.history:
        elements += clause.policy_path
    for element in elements:
        unknown = element.contexts - VOCABULARY
        if unknown:
            raise PolicyError(f"{scenario.name}: unknown context token(s) {sorted(unknown)}")
        if topology is not None and element.nf not in topology.nodes:
            raise PolicyError(f"{scenario.name}: policy path names unknown NF {element.nf!r}")
    return PolicyAssertion(scenario)


def loop_assertion(k: int) -> LoopAssertion:
    if k < 2:
        raise ValueError("loop bound K must be >= 2")
    return LoopAssertion(k)


def reachability_assertion(port_a: int | Iterable[int], port_b: int | Iterable[int]) -> ReachabilityAssertion:
    a = [port_a] if isinstance(port_a, int) else list(port_a)
    b = [port_b] if isinstance(port_b, int) else list(port_b)
    if not a or not b:
        raise ValueError("reachability needs both ports")
    return ReachabilityAssertion(a, b)
