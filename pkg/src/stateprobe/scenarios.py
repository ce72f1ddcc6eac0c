"""Canonical example networks with their policy scenarios.

Each builder returns ``(topology, scenarios)``. ``REDTEAM`` pairs one
deliberately broken element with the network, scenario and expected culprit.
"""
from __future__ import annotations

from typing import NamedTuple

from .network import Topology
from .policy import PolicyScenario


def _host(nid, addr, kind="host", **config):
    return {"id": nid, "type": kind, "config": {"addr": addr, **config}}


def _nf(nid, kind, **config):
    return {"id": nid, "type": kind, "config": config}


def _edge(src, dst, port=None):
    return {"from": src, "fromPort": port or dst, "to": dst}


def _nic(host, dst):
    return _edge(host, dst, "nic")


def _route(dst_ip, port, **extra):
    return {"match": {"dstIP": dst_ip}, "port": port, **extra}


def _scenario(name, path, action, spec=None, history=()):
    data = {"name": name, "traceSpec": spec or {}, "action": action,
            "policyPath": [{"nf": nf, "contexts": list(ctx)} for nf, ctx in path]}
    if history:
        data["history"] = [{"traceSpec": s, "count": n,
                            "policyPath": [{"nf": nf, "contexts": list(ctx)} for nf, ctx in p]}
                           for s, p, n in history]
    return PolicyScenario.from_json(data)


def firewall():
    """Two inside hosts behind a reflexive firewall, one outside server."""
    topo = {
        "nodes": [
            _host("H1", 1), _host("H2", 2), _host("Srv", 100, "server"),
            _nf("S1", "switch", rules=[_route(1, "H1"), _route(2, "H2")], default="fw"),
            _nf("fw", "firewall"),
            _nf("S2", "switch", rules=[_route(100, "Srv")], default="fw"),
        ],
        "edges": [
            _nic("H1", "S1"), _nic("H2", "S1"), _nic("Srv", "S2"),
            _edge("S1", "H1"), _edge("S1", "H2"), _edge("S1", "fw"),
            _edge("fw", "S1", "inside"), _edge("fw", "S2", "outside"),
            _edge("S2", "fw"), _edge("S2", "Srv"),
        ],
        "sources": ["H1", "H2", "Srv"],
        "sinks": ["H1", "H2", "Srv"],
    }
    scenarios = [
        _scenario("allow-solicited", [("fw", {"SOLICITED"})], "ALLOW", {"srcIP": [1, 2]}),
        _scenario("block-unsolicited", [("fw", {"UNSOLICITED"})], "DROP", {"srcIP": 100}),
    ]
    return Topology.from_json(topo), scenarios


def proxy_monitor(object_size: int = 1):
    """Web proxy whose client-side output passes a content monitor.

    The monitor blocks object 7 for host 2, whether served as hit or miss.
    """
    topo = {
        "nodes": [
            _host("H1", 1), _host("H2", 2),
            _host("Srv", 100, "server", object_size=object_size),
            _nf("S2", "switch", rules=[_route(1, "H1"), _route(2, "H2")], default="S1"),
            _nf("S1", "switch", rules=[{"match": {}, "port": "proxy"}]),
            _nf("proxy", "proxy", addr=50),
            _nf("mon", "monitor", watch=[{"obj": 7, "host": 2}]),
            _nf("S3", "switch", rules=[_route(50, "proxy")], default="Srv"),
        ],
        "edges": [
            _nic("H1", "S2"), _nic("H2", "S2"), _nic("Srv", "S3"),
            _edge("S2", "H1"), _edge("S2", "H2"), _edge("S2", "S1"),
            _edge("S1", "proxy"),
            _edge("proxy", "mon", "down"), _edge("proxy", "S3", "up"),
            _edge("mon", "S2", "out"),
            _edge("S3", "proxy"), _edge("S3", "Srv"),
        ],
        "sources": ["H1", "H2"],
        "sinks": ["H1", "H2", "Srv"],
        "domains": {"objects": [7]},
    }
    spec = {"httpGetObj": 7}
    scenarios = [
        _scenario("allow", [("proxy", {"MISS"}), ("mon", {"OK"})], "ALLOW", spec),
        _scenario("drop-hit", [("proxy", {"HIT"}), ("mon", {"DROP"})], "DROP", spec),
        _scenario("drop-miss", [("proxy", {"MISS"}), ("mon", {"DROP"})], "DROP", spec),
    ]
    return Topology.from_json(topo), scenarios


def cascaded_nats():
    """Two NATs in series before a firewall that filters by origin host."""
    topo = {
        "nodes": [
            _host("H1", 1), _host("H2", 2), _host("Srv", 100, "server"),
            _nf("S1", "switch", rules=[_route(1, "H1"), _route(2, "H2")], default="nat1"),
            _nf("nat1", "nat", pool=[11]),
            _nf("S2", "switch", rules=[_route(11, "nat1")], default="nat2"),
            _nf("nat2", "nat", pool=[21]),
            _nf("S3", "switch", rules=[_route(21, "nat2")], default="fw"),
            _nf("fw", "firewall", deny_provenance=[1]),
        ],
        "edges": [
            _nic("H1", "S1"), _nic("H2", "S1"), _nic("Srv", "fw"),
            _edge("S1", "H1"), _edge("S1", "H2"), _edge("S1", "nat1"),
            _edge("nat1", "S1", "inside"), _edge("nat1", "S2", "outside"),
            _edge("S2", "nat1"), _edge("S2", "nat2"),
            _edge("nat2", "S2", "inside"), _edge("nat2", "S3", "outside"),
            _edge("S3", "nat2"), _edge("S3", "fw"),
            _edge("fw", "S3", "inside"), _edge("fw", "Srv", "outside"),
        ],
        "sources": ["H1", "H2"],
        "sinks": ["H1", "H2", "Srv"],
    }
    mapped = [("nat1", {"NAT-MAPPED"}), ("nat2", {"NAT-MAPPED"})]
    scenarios = [
        _scenario("block-H1", mapped + [("fw", {"DENIED"})], "DROP", {"srcIP": 1}),
        _scenario("allow-H2", mapped + [("fw", {"OUTBOUND"})], "ALLOW", {"srcIP": 2}),
    ]
    return Topology.from_json(topo), scenarios


def ips_chain(threshold: int = 3, destinations: int = 3):
    """Light IPS counting scans; alarmed traffic is steered through a heavy IPS."""
    dests = [(f"D{i}", 100 + i) for i in range(1, destinations + 1)]
    topo = {
        "nodes": [
            _host("H1", 1), _host("H2", 2), *[_host(n, a) for n, a in dests],
            _nf("S1", "switch", rules=[_route(1, "H1"), _route(2, "H2")], default="lips"),
            _nf("lips", "lips", threshold=threshold),
            _nf("S2", "switch", rules=[{"match": {}, "context": ["lips", "ALARM"], "port": "hips"}], default="S3"),
            _nf("hips", "hips", bad_signatures=[13], requires="lips"),
            _nf("S3", "switch", rules=[_route(a, n) for n, a in dests]),
        ],
        "edges": [
            _nic("H1", "S1"), _nic("H2", "S1"),
            _edge("S1", "H1"), _edge("S1", "H2"), _edge("S1", "lips"),
            _edge("lips", "S2", "out"),
            _edge("S2", "hips"), _edge("S2", "S3"),
            _edge("hips", "S3", "out"),
            *[_edge("S3", n) for n, _ in dests],
            *[_nic(n, "S3") for n, _ in dests],
        ],
        "sources": ["H1", "H2"],
        "sinks": [n for n, _ in dests] + ["H1", "H2"],
        "domains": {"signatures": [13]},
    }
    scenarios = [
        _scenario("suspicious", [("lips", {"ALARM"}), ("hips", {"ALARM"})], "DROP"),
        _scenario("clean-host", [("lips", {"OK"})], "ALLOW", {"srcIP": 2},
                  history=[({"srcIP": 1}, [("lips", {"SCAN"})], threshold - 1),
                           ({"srcIP": 2}, [("lips", {"SCAN"})], 1)]),
    ]
    return Topology.from_json(topo), scenarios


def conn_limit(limit: int = 3):
    """Login gate in front of a server; repeated failures lock the host out."""
    topo = {
        "nodes": [
            _host("H1", 1), _host("H2", 2), _host("Srv", 100),
            _nf("S1", "switch", rules=[
                {"match": {"dstIP": 100}, "from": "auth", "port": "Srv"},
                {"match": {"dstIP": 100}, "from": ["H1", "H2"], "port": "auth"},
                _route(1, "H1"), _route(2, "H2"),
            ]),
            _nf("auth", "auth", addr=60, password=1, limit=limit),
        ],
        "edges": [
            _nic("H1", "S1"), _nic("H2", "S1"), _nic("Srv", "S1"),
            _edge("S1", "H1"), _edge("S1", "H2"), _edge("S1", "auth"), _edge("S1", "Srv"),
            _edge("auth", "S1", "out"),
        ],
        "sources": ["H1", "H2"],
        "sinks": ["H1", "H2", "Srv"],
        "domains": {"signatures": [1, 2]},
    }
    scenarios = [
        _scenario("lockout", [("auth", {"LOCKED"})], "DROP", {"srcIP": 1}),
        _scenario("valid-login", [("auth", {"AUTHED"})], "ALLOW", {"srcIP": 2}),
    ]
    return Topology.from_json(topo), scenarios


def stage_chain(length: int):
    """``length`` synthetic stateful stages, each gated on its predecessor."""
    stages = [f"st{i}" for i in range(1, length + 1)]
    nodes = [_host("H1", 1), _host("H2", 2), _host("D", 100)]
    edges = [_nic("H1", stages[0]), _nic("H2", stages[0])]
    for i, st in enumerate(stages):
        nodes.append(_nf(st, "stage", **({"requires": stages[i - 1]} if i else {})))
        edges.append(_edge(st, stages[i + 1] if i + 1 < length else "D", "out"))
    topo = {"nodes": nodes, "edges": edges, "sources": ["H1", "H2"], "sinks": ["D"]}
    scenarios = [_scenario("chain-pass", [(st, {"PASS"}) for st in stages], "ALLOW", {"srcIP": 1})]
    return Topology.from_json(topo), scenarios


def forwarding_loop():
    """Two switches pointing at each other for one destination."""
    topo = {
        "nodes": [_host("H1", 1), _host("H2", 2),
                  _nf("S1", "switch", rules=[_route(2, "H2")], default="S2"),
                  _nf("S2", "switch", rules=[_route(1, "H1")], default="S1")],
        "edges": [_nic("H1", "S1"), _nic("H2", "S2"), _edge("S1", "S2"), _edge("S2", "S1"),
                  _edge("S1", "H2"), _edge("S2", "H1")],
        "sources": ["H1", "H2"],
        "sinks": ["H1", "H2"],
        "domains": {"dstIP": [1, 2, 3]},
    }
    return Topology.from_json(topo)


CANONICAL = {
    "firewall": firewall,
    "proxy-monitor": proxy_monitor,
    "cascaded-nats": cascaded_nats,
    "ips-chain": ips_chain,
    "conn-limit": conn_limit,
}


class RedTeamCase(NamedTuple):
    network: str
    scenario: str
    fault: dict
    culprit: str  # element the validator must blame


REDTEAM = [
    RedTeamCase("proxy-monitor", "allow", {"type": "LinkDown", "edge": "S2->S1"}, "S2->S1"),
    RedTeamCase("proxy-monitor", "allow", {"type": "RuleMissing", "switch": "S1", "rule": 0}, "S1"),
    RedTeamCase("cascaded-nats", "block-H1", {"type": "ControllerOff"}, "nat1"),
    RedTeamCase("ips-chain", "clean-host", {"type": "AggregateMiscount", "nf": "lips", "hosts": 3}, "lips"),
    RedTeamCase("conn-limit", "lockout", {"type": "CounterReset", "nf": "auth"}, "auth"),
    RedTeamCase("conn-limit", "valid-login", {"type": "RuleMissing", "switch": "S1", "rule": 0}, "S1"),
]


def write_configs(directory) -> list[str]:
    """Dump every canonical network as topology/policies/fault JSON files."""
    import json
    from pathlib import Path

    root = Path(directory)
    written = []

    def dump(path, data):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")
        written.append(str(path))

    for name, build in CANONICAL.items():
        topo, scens = build()
        dump(root / name / "topology.json", topo.to_json())
        dump(root / name / "policies.json", {"scenarios": [s.to_json() for s in scens]})
    for i, case in enumerate(REDTEAM, 1):
        dump(root / case.network / f"fault-{i}-{case.fault['type']}.json", {"faults": [case.fault]})
    dump(root / "loop" / "topology.json", forwarding_loop().to_json())
    return written


if __name__ == "__main__":
    import sys

    for path in write_configs(sys.argv[1] if len(sys.argv) > 1 else "configs"):
        print(path)
