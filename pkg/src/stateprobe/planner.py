"""Abstract test-trace search over the composed network model.

``search`` is an iterative-deepening DFS over concrete instantiations of the
scoped symbolic ADU fields, executing every candidate end to end on a private
copy of the network state. A transposition table keyed by (network state,
assertion progress) records the largest remaining depth already shown to fail.
Candidates are tried in ascending domain order, so the first plan found is the
shortest and, among those, the lexicographically least.
"""
from __future__ import annotations

import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .adu import ADU, DONT_CARE, FIELDS, JSON_NAMES, PY_NAMES, TCP
from .network import Event, LoopError, Network, NetworkState, Topology
from .nflib import NF_TYPES
from .policy import Assertion, PolicyScenario, compile_assertion

DEFAULT_MAX_LEN = 20
PLACEHOLDER_SRC_PORT = 40000
DEFAULT_DST_PORT = 80
ADDRESS_FIELDS = ("src_ip", "dst_ip")
FLAG_DOMAIN = (0, 1)


class OracleCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class Scopes:
    """Per-field value domains. Only ``domains`` fields are searched over."""

    domains: Mapping[str, tuple[int, ...]]
    fixed: Mapping[str, int] = field(default_factory=dict)
    sources: tuple[int, ...] | None = None  # allowed injection addresses

    @property
    def symbolic(self) -> tuple[str, ...]:
        return tuple(f for f in FIELDS if f in self.domains)


@dataclass
class Plan:
    steps: list[tuple[str, ADU]]
    scenario: str = ""

    def __len__(self):
        return len(self.steps)

    def adus(self) -> list[ADU]:
        return [a for _, a in self.steps]

    def to_jsonl(self) -> str:
        lines = [json.dumps({"seq": i, "source": s, "adu": a.to_json()}, sort_keys=True)
                 for i, (s, a) in enumerate(self.steps)]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str, scenario: str = "") -> "Plan":
        steps = []
        for line in text.splitlines():
            if line.strip():
                rec = json.loads(line)
                steps.append((rec["source"], ADU.from_json(rec["adu"])))
        return cls(steps, scenario)


@dataclass
class SearchResult:
    plan: Plan | None
    nodes: int
    elapsed: float = 0.0
    error: str | None = None

    @property
    def found(self) -> bool:
        return self.plan is not None


def _relevant_fields(topology: Topology, nodes: Iterable[str]) -> set[str]:
    fields = set(ADDRESS_FIELDS)
    for node in nodes:
        spec = topology.nodes.get(node)
        if spec is not None:
            fields.update(NF_TYPES[spec.type].relevant_fields)
    return fields


def _allowed(specs: Sequence[Mapping], name: str):
    """Union of the values the given trace specs allow; None if any is open."""
    if not specs:
        return None
    values = set()
    for spec in specs:
        if name not in spec:
            return None
        values.update(spec[name])
    return values


def scope_domains(target: PolicyScenario | None, topology: Topology, sources: Iterable[int] | None = None,
                  symbolic: Iterable[str] | None = None) -> Scopes:
    """Pick the symbolic fields and their finite domains for one scenario.

    Fields no NF on the policy path reads are fixed to don't-care; host and
    object ids come from the topology; flags range over {0, 1}; the client
    source port is a placeholder.
    """
    if target is not None:
        specs = [target.trace_spec] + [h.trace_spec for h in target.history]
        nodes = target.nfs()
    else:
        specs = []
        nodes = [n for n, s in topology.nodes.items() if NF_TYPES[s.type].stateful]
    fields = set(symbolic) if symbolic is not None else _relevant_fields(topology, nodes)

    declared = {PY_NAMES.get(k, k): tuple(v) for k, v in topology.domains.items()
                if PY_NAMES.get(k, k) in JSON_NAMES}
    base = {
        "src_ip": tuple(topology.addr_of(s) for s in topology.sources),
        "dst_ip": tuple(sorted(topology.host_addrs())),
        "http_get_obj": (DONT_CARE,) + tuple(declared.pop("http_get_obj", topology.domains.get("objects", ()))),
        "payload_sig": (DONT_CARE,) + tuple(declared.pop("payload_sig", topology.domains.get("signatures", ()))),
    }
    base.update(declared)

    domains = {}
    for name in FIELDS:
        if name not in fields:
            continue
        if name in base:
            values = set(base[name])
        elif name.startswith("tcp_"):
            values = set(FLAG_DOMAIN)
        else:
            continue
        allowed = _allowed(specs, name)
        if allowed is not None:
            values &= allowed | ({DONT_CARE} if name not in ADDRESS_FIELDS else set())
        domains[name] = tuple(sorted(values))

    main = target.trace_spec if target is not None else {}
    fixed = {"proto": main.get("proto", (TCP,))[0],
             "src_port": PLACEHOLDER_SRC_PORT,
             "dst_port": main.get("dst_port", (DEFAULT_DST_PORT,))[0]}
    for name, vals in main.items():
        if name not in domains and len(vals) == 1:
            fixed[name] = vals[0]
    src = tuple(sorted(sources)) if sources is not None else None
    return Scopes(domains, fixed, src)


def well_formed(values: Mapping[str, int]) -> bool:
    get = values.get
    if sum(get(f, -1) == 1 for f in ("tcp_syn", "tcp_fin", "tcp_rst")) > 1:
        return False
    carries_data = get("http_get_obj", -1) >= 0 or get("payload_sig", -1) >= 0
    if carries_data and (get("tcp_syn", -1) == 1 or get("tcp_fin", -1) == 1 or get("tcp_rst", -1) == 1):
        return False
    if get("http_get_obj", -1) >= 0 and get("payload_sig", -1) >= 0:
        return False
    return get("src_ip", -1) != get("dst_ip", -2)


def candidates(scopes: Scopes, topology: Topology) -> list[tuple[str, ADU]]:
    """All concrete (source, ADU) instantiations, in ascending domain order."""
    names = scopes.symbolic
    if any(not scopes.domains[n] for n in names):
        return []
    sources = {topology.addr_of(s): s for s in topology.sources}
    out = []
    for combo in itertools.product(*(scopes.domains[n] for n in names)):
        values = dict(scopes.fixed)
        values.update(zip(names, combo))
        if not well_formed(values):
            continue
        src = values.get("src_ip", DONT_CARE)
        if src not in sources or (scopes.sources is not None and src not in scopes.sources):
            continue
        out.append((sources[src], ADU(**values)))
    return out


class _Violated(Exception):
    pass


def _run(network: Network, state: NetworkState, assertion: Assertion, progress, source: str, adu: ADU):
    """Inject one ADU while checking the assertion at every event."""
    holder = [progress]

    def observer(event: Event):
        holder[0], violated = assertion.observe(holder[0], event)
        if violated:
            raise _Violated

    injection = network.inject(state, adu, source, observer)
    return injection.state, holder[0]


def search(network: Network, assertion: Assertion, scopes: Scopes, max_len: int = DEFAULT_MAX_LEN,
           state: NetworkState | None = None) -> SearchResult:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    started = time.perf_counter()
    cands = candidates(scopes, network.topology)
    root = state if state is not None else network.initial_state()
    failed: dict = {}
    nodes = 0

    def dfs(state, progress, remaining, prefix):
        nonlocal nodes
        key = (state.key(), progress)
        if failed.get(key, 0) >= remaining:
            return None
        seq = len(prefix)
        for source, cand in cands:
            adu = cand.replace(adu_id=seq + 1)
            nodes += 1
            try:
                nxt, nxt_progress = _run(network, state, assertion, progress, source, adu)
            except _Violated:
                return prefix + [(source, adu)]
            except LoopError:
                continue
            if remaining > 1:
                found = dfs(nxt, nxt_progress, remaining - 1, prefix + [(source, adu)])
                if found:
                    return found
        failed[key] = remaining
        return None

    if cands:
        for depth in range(1, max_len + 1):
            steps = dfs(root, assertion.initial(), depth, [])
            if steps:
                return SearchResult(Plan(steps), nodes, time.perf_counter() - started)
    return SearchResult(None, nodes, time.perf_counter() - started)


def violates(network: Network, assertion: Assertion, steps: Sequence[tuple[str, ADU]],
             state: NetworkState | None = None) -> bool:
    """Replay ``steps`` from a fresh state; True if the assertion fires."""
    state = state if state is not None else network.initial_state()
    progress = assertion.initial()
    try:
        for source, adu in steps:
            state, progress = _run(network, state, assertion, progress, source, adu)
    except _Violated:
        return True
    except LoopError:
        return False
    return False


def brute_force_oracle(network: Network, assertion: Assertion, scopes: Scopes, max_len: int,
                       cap: int = 200_000) -> Plan | None:
    """Enumerate every concrete trace in length-lexicographic order.

    No memo and no pruning. Traces sharing a prefix share its execution, which
    changes nothing but the cost.
    """
    cands = candidates(scopes, network.topology)
    root = network.initial_state()

    def walk(state, progress, prefix, length):
        seq = len(prefix)
        for source, cand in cands:
            adu = cand.replace(adu_id=seq + 1)
            try:
                nxt, nxt_progress = _run(network, state, assertion, progress, source, adu)
            except _Violated:
                if seq + 1 == length:
                    return prefix + [(source, adu)]
                continue  # a shorter trace would already have been reported
            except LoopError:
                continue
            if seq + 1 < length:
                found = walk(nxt, nxt_progress, prefix + [(source, adu)], length)
                if found:
                    return found
        return None

    total = 0
    for length in range(1, max_len + 1):
        total += len(cands) ** length
        if total > cap:
            raise OracleCapExceeded(f"{total} traces up to length {length} exceed the enumeration cap {cap}")
        steps = walk(root, assertion.initial(), [], length)
        if steps:
            return Plan(steps)
    return None


def plan_scenario(scenario: PolicyScenario, topology: Topology, max_len: int = DEFAULT_MAX_LEN) -> SearchResult:
    network = Network(topology)
    assertion = compile_assertion(scenario, topology)
    result = search(network, assertion, scope_domains(scenario, topology), max_len)
    if result.plan is not None:
        result.plan.scenario = scenario.name
        if not violates(Network(topology), assertion, result.plan.steps):
            raise AssertionError(f"{scenario.name}: plan does not reproduce the violation")
    return result


def _plan_job(args) -> SearchResult:
    scenario_json, topology_json, max_len = args
    scenario = PolicyScenario.from_json(scenario_json)
    try:
        return plan_scenario(scenario, Topology.from_json(topology_json), max_len)
    except Exception as exc:  # collected per scenario
        return SearchResult(None, 0, error=f"{type(exc).__name__}: {exc}")


def plan_scenarios(scenarios: Sequence[PolicyScenario], topology: Topology, parallelism: int = 1,
                   max_len: int = DEFAULT_MAX_LEN) -> dict[str, SearchResult]:
    jobs = [(s.to_json(), topology.to_json(), max_len) for s in scenarios]
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_plan_job, jobs))
    else:
        results = [_plan_job(j) for j in jobs]
    return {s.name: r for s, r in zip(scenarios, results)}
