"""Command-line entry point: plan, test, check, inject-fault."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .harness import MODES, STATEFUL_ONLY, FaultError, Simulator, background_traffic, inject_fault, load_faults
from .network import Network, Topology, TopologyError
from .nf import ConfigError
from .pipeline import run_test
from .planner import DEFAULT_MAX_LEN, plan_scenarios, scope_domains, search
from .policy import PolicyError, load_policies, loop_assertion, reachability_assertion
from .translator import scripts_to_json
from .validator import FAIL, UNKNOWN

EXIT_OK, EXIT_FAIL, EXIT_UNKNOWN, EXIT_CONFIG = 0, 1, 2, 3
CONFIG_ERRORS = (OSError, json.JSONDecodeError, TopologyError, PolicyError, FaultError, ConfigError, KeyError,
                 ValueError)


def _dump(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _policies(args, topology):
    scenarios = load_policies(args.policies)
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise PolicyError("scenario names must be unique")
    return scenarios


def cmd_plan(args) -> int:
    topology = Topology.load(args.topology)
    scenarios = _policies(args, topology)
    started = time.perf_counter()
    results = plan_scenarios(scenarios, topology, args.parallelism, args.max_len)
    out = Path(args.out)
    rows, failed = [], []
    for s in scenarios:
        r = results[s.name]
        if r.error:
            status = f"error: {r.error}"
            failed.append(s.name)
        elif r.plan is None:
            status = "no plan within maxLen"
            failed.append(s.name)
        else:
            status = "planned"
            _write(out / "plans" / f"{s.name}.jsonl", r.plan.to_jsonl())
        rows.append({"scenario": s.name, "planLength": len(r.plan) if r.plan else None,
                     "searchNodes": r.nodes, "status": status})
        print(f"{s.name:<24} len={rows[-1]['planLength']!s:<5} nodes={r.nodes:<8} "
              f"time={r.elapsed:.3f}s  {status}")
    _dump(out / "summary.json", rows)
    print(f"planned {len(scenarios) - len(failed)}/{len(scenarios)} in {time.perf_counter() - started:.3f}s")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_test(args) -> int:
    topology = Topology.load(args.topology)
    scenarios = _policies(args, topology)
    faults = load_faults(args.faults) if args.faults else []
    sim = Simulator.fault_free(topology)
    for f in faults:  # surface bad faults as config errors before any work
        sim = inject_fault(sim, f)
    background = background_traffic(_load_json(args.background), topology, args.seed) if args.background else []
    plans = plan_scenarios(scenarios, topology, args.parallelism, args.max_len)
    out = Path(args.out)
    report = []
    for s in scenarios:
        result = plans[s.name]
        if result.error:
            raise ConfigError(f"{s.name}: {result.error}")
        run = run_test(topology, s, result.plan, faults, background, args.monitor, args.max_len)
        base = out / s.name
        if run.plan is not None:
            _write(base / "plan.jsonl", run.plan.to_jsonl())
            _write(base / "scripts.json", scripts_to_json(run.scripts) + "\n")
        for label, log in run.logs:
            _write(base / f"log-{label}.jsonl", log.to_jsonl())
        verdict = run.verdict.to_json()
        _dump(base / "report.json", verdict)
        report.append(verdict)
        where = f" at {verdict['localized']}" if verdict["localized"] else ""
        print(f"{s.name:<24} {verdict['verdict']}{where}")
    _dump(out / "report.json", report)
    kinds = {v["verdict"] for v in report}
    if FAIL in kinds:
        return EXIT_FAIL
    if UNKNOWN in kinds:
        return EXIT_UNKNOWN
    return EXIT_OK


def _ports(topology: Topology, spec: str) -> list[int]:
    found = []
    for item in spec.split(","):
        item = item.strip()
        if item.lstrip("-").isdigit():
            idx = int(item)
            if not 0 <= idx < len(topology.edges):
                raise ConfigError(f"no port {idx}")
            found.append(idx)
            continue
        hits = [i for i, e in enumerate(topology.edges) if e.name == item]
        if not hits:
            raise ConfigError(f"no port {item!r}")
        found += hits
    return found


def cmd_check(args) -> int:
    topology = Topology.load(args.topology)
    network = Network(topology, loop_k=args.loop_k)
    if args.kind == "loops":
        assertion = loop_assertion(args.loop_k)
        sources = None
    else:
        if not args.src or not args.dst:
            raise ConfigError("reachability needs --from and --to")
        ports_a, ports_b = _ports(topology, args.src), _ports(topology, args.dst)
        bad = [p for p in ports_a if topology.edges[p].port != "nic"]
        if bad:
            raise ConfigError(f"--from must name injection ports, got {[topology.edges[p].name for p in bad]}")
        assertion = reachability_assertion(ports_a, ports_b)
        sources = [topology.addr_of(topology.edges[p].src) for p in ports_a]
    scopes = scope_domains(None, topology, sources)
    result = search(network, assertion, scopes, args.max_len)
    data = {"kind": args.kind, "witness": None, "searchNodes": result.nodes}
    if result.plan is None:
        print("none within bounds")
    else:
        data["witness"] = [{"seq": i, "source": s, "adu": a.to_json()} for i, (s, a) in enumerate(result.plan.steps)]
        print(result.plan.to_jsonl(), end="")
    if args.out:
        _dump(Path(args.out) / "check.json", data)
    return EXIT_OK


def cmd_inject_fault(args) -> int:
    topology = Topology.load(args.topology)
    sim = Simulator.fault_free(topology)
    for fault in load_faults(args.faults):
        sim = inject_fault(sim, fault)
    data = sim.topology.to_json()
    data["downLinks"] = sorted(topology.edges[i].name for i in sim.down_edges)
    out = Path(args.out)
    if out.suffix != ".json":
        out = out / "topology.json"
    _dump(out, data)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stateprobe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, policies=True):
        p.add_argument("--topology", required=True)
        if policies:
            p.add_argument("--policies", required=True)
        p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
        p.add_argument("--parallelism", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out")

    p = sub.add_parser("plan", help="search a test plan per policy scenario")
    common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("test", help="plan, run and validate every scenario")
    common(p)
    p.add_argument("--faults")
    p.add_argument("--background")
    p.add_argument("--monitor", choices=MODES, default=STATEFUL_ONLY)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("check", help="look for forwarding loops or a reachability witness")
    common(p, policies=False)
    p.add_argument("--kind", choices=("loops", "reachability"), required=True)
    p.add_argument("--from", dest="src", help="injection port(s): edge name 'A->B' or index")
    p.add_argument("--to", dest="dst", help="target port(s)")
    p.add_argument("--loop-k", type=int, default=3)
    p.set_defaults(func=cmd_check, out=None)  # check.json only when --out is given

    p = sub.add_parser("inject-fault", help="write a copy of the topology with faults applied")
    p.add_argument("--topology", required=True)
    p.add_argument("--faults", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inject_fault)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "max_len", 1) < 1:
        print("config error: --max-len must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
