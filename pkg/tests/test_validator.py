import pytest

from stateprobe import scenarios as sc
from stateprobe.adu import ADU, TCP, UDP
from stateprobe.harness import MONITOR_ALL, STATEFUL_ONLY, BackgroundFlow, MonitorLog, MonitorRecord, Simulator, \
    inject_fault, run_script
from stateprobe.network import Topology
from stateprobe.pipeline import run_test
from stateprobe.planner import plan_scenario
from stateprobe.translator import expand, to_scripts
from stateprobe.validator import (
    FAIL, NONE, RESOLVABLE, SUCCESS, UNKNOWN, UNRESOLVABLE, CorruptLog, Interference, PathView, detect_interference,
    localize, policy_observed, reconstruct, validate,
)
from tests.conftest import scenario


def events_for(topo, s):
    return expand(to_scripts(plan_scenario(s, topo).plan))


def trace(topo, view):
    return [(topo.edges[e.port].name if e.port >= 0 else None, e.direction) for e in view.entries]


def bg(at, source, **fields):
    return BackgroundFlow(at, source, ADU(proto=TCP, src_port=41000, dst_port=80, adu_id=500_001 + at, is_test=0,
                                          **fields))


def test_reconstruct_four_hops(fw_net):
    topo, scens = fw_net
    log = run_script(Simulator.fault_free(topo), events_for(topo, scens[0]))
    view = reconstruct(log, topo)[1]
    assert trace(topo, view)[:4] == [("H1->S1", "rx"), ("S1->fw", "rx"), ("fw->S2", "rx"), ("S2->Srv", "rx")]
    assert trace(topo, view)[4] == ("Srv->S2", "rx")  # the server's reply keeps the id


def test_reconstruct_drop_marker(fw_net):
    topo, scens = fw_net
    log = run_script(Simulator.fault_free(topo), events_for(topo, scens[1]))
    assert trace(topo, reconstruct(log, topo)[1])[-2:] == [("S2->fw", "rx"), ("S2->fw", "drop")]


def test_reconstruct_marks_gaps_in_stateful_mode(fw_net):
    topo, scens = fw_net
    log = run_script(Simulator.fault_free(topo), events_for(topo, scens[0]), STATEFUL_ONLY)
    view = reconstruct(log, topo)[1]
    assert view.entries[0].direction == "gap"
    assert trace(topo, view)[1:3] == [("S1->fw", "rx"), ("fw->S2", "rx")]
    assert all(e.port >= 0 for e in view.entries[1:])


def test_reconstruct_rejects_corrupt_log(fw_net):
    topo, scens = fw_net
    log = run_script(Simulator.fault_free(topo), events_for(topo, scens[0]))
    holed = MonitorLog([r for i, r in enumerate(log.records) if i != 1], MONITOR_ALL)
    with pytest.raises(CorruptLog):
        reconstruct(holed, topo)
    bogus = MonitorLog([log.records[0]._replace(port=99)], MONITOR_ALL)
    with pytest.raises(CorruptLog):
        reconstruct(bogus, topo)
    late = MonitorLog(list(log.records[:1]) + [log.records[0]._replace(direction="drop"), log.records[1]])
    with pytest.raises(CorruptLog):
        reconstruct(late, topo)


def two_servers():
    topo, scens = sc.firewall()
    data = topo.to_json()
    data["nodes"].append({"id": "Srv2", "type": "server", "config": {"addr": 101}})
    for n in data["nodes"]:
        if n["id"] == "S2":
            n["config"]["rules"].append({"match": {"dstIP": 101}, "port": "Srv2"})
    data["edges"] += [{"from": "S2", "fromPort": "Srv2", "to": "Srv2"}, {"from": "Srv2", "fromPort": "nic", "to": "S2"}]
    data["sources"].append("Srv2")
    return Topology.from_json(data), scens


def interference_for(topo, s, flows):
    log = run_script(Simulator.fault_free(topo), events_for(topo, s), MONITOR_ALL, flows)
    return detect_interference(log, s, topo)


def test_unrelated_udp_is_no_interference(proxy_net):
    topo, scens = proxy_net
    flow = BackgroundFlow(1, "H2", ADU(src_ip=2, dst_ip=100, proto=UDP, adu_id=500_001, is_test=0))
    assert interference_for(topo, scenario(scens, "allow"), [flow]).kind == NONE


def test_scan_from_test_host_is_unresolvable():
    topo, scens = sc.ips_chain()
    s = scenario(scens, "clean-host")
    flows = [bg(0, "H2", src_ip=2, dst_ip=102, tcp_syn=1, tcp_ack=0)]
    found = interference_for(topo, s, flows)
    assert found.kind == UNRESOLVABLE and found.evidence


def test_web_flow_to_other_server_is_resolvable():
    topo, scens = two_servers()
    s = scens[0]
    assert interference_for(topo, s, [bg(0, "H1", src_ip=1, dst_ip=101, tcp_syn=1, tcp_ack=0)]).kind == RESOLVABLE
    assert interference_for(topo, s, [bg(0, "H1", src_ip=1, dst_ip=100, tcp_syn=1, tcp_ack=0)]).kind == UNRESOLVABLE


def test_disjoint_hosts_are_resolvable():
    topo, scens = sc.ips_chain(destinations=4)
    s = scenario(scens, "suspicious")  # no traceSpec: every TCP flow is in class
    flows = [bg(0, "H2", src_ip=2, dst_ip=104, tcp_syn=1, tcp_ack=0)]
    assert interference_for(topo, s, flows).kind == RESOLVABLE
    shared = [bg(0, "H1", src_ip=1, dst_ip=104, tcp_syn=1, tcp_ack=0)]
    assert interference_for(topo, s, shared).kind == UNRESOLVABLE


def views(topo, events, sim, mode):
    return reconstruct(run_script(sim, events, mode), topo)


def test_localize_rule_missing():
    topo, scens = sc.proxy_monitor()
    events = events_for(topo, scenario(scens, "allow"))
    model = Simulator.fault_free(topo)
    broken = inject_fault(model, {"type": "RuleMissing", "switch": "S1", "rule": 0})
    loc = localize(views(topo, events, model, MONITOR_ALL), views(topo, events, broken, MONITOR_ALL), topo)
    assert loc.element == "S1" and loc.adu_id == 1 and not loc.follow_up
    full = views(topo, events, model, MONITOR_ALL)
    loc = localize(views(topo, events, model, STATEFUL_ONLY), views(topo, events, broken, STATEFUL_ONLY), topo,
                   STATEFUL_ONLY, full)
    assert loc.element is None and loc.follow_up and loc.covers("S1")


def test_localize_strict_prefix(fw_net):
    topo, scens = fw_net
    events = events_for(topo, scens[0])
    full = views(topo, events, Simulator.fault_free(topo), MONITOR_ALL)
    cut = {1: PathView(1, full[1].entries[:2])}
    assert localize(full, cut, topo).element == "fw"
    assert localize(full, full, topo) is None


def test_localize_reports_first_divergence():
    topo, scens = sc.proxy_monitor()
    events = events_for(topo, scenario(scens, "allow"))
    model = Simulator.fault_free(topo)
    broken = inject_fault(model, {"type": "LinkDown", "edge": "S2->S1"})
    loc = localize(views(topo, events, model, MONITOR_ALL), views(topo, events, broken, MONITOR_ALL), topo)
    assert (loc.element, loc.adu_id, loc.index) == ("S2->S1", 1, 2)


@pytest.mark.parametrize("net", sorted(sc.CANONICAL))
def test_policy_observed_on_fault_free_runs(net):
    topo, scens = sc.CANONICAL[net]()
    sim = Simulator.fault_free(topo)
    for s in scens:
        v = views(topo, events_for(topo, s), sim, MONITOR_ALL)
        assert policy_observed(v[max(v)], s, topo)


def test_validate_success_and_unknown(fw_net):
    topo, scens = fw_net
    s = scens[0]
    v = views(topo, events_for(topo, s), Simulator.fault_free(topo), MONITOR_ALL)
    assert validate(v, v, Interference(NONE), topo, s).verdict == SUCCESS
    unknown = validate(v, v, Interference(UNRESOLVABLE, [3]), topo, s)
    assert unknown.verdict == UNKNOWN and unknown.evidence == [3] and unknown.follow_up


def test_validate_fail_when_policy_not_shown(fw_net):
    topo, scens = fw_net
    s, other = scens
    v = views(topo, events_for(topo, s), Simulator.fault_free(topo), MONITOR_ALL)
    assert validate(v, v, Interference(NONE), topo, other).verdict == FAIL


def test_unknown_resolved_by_rerun_after_flow_ends():
    topo, scens = two_servers()
    s = scens[0]
    flow = bg(0, "H1", src_ip=1, dst_ip=100, tcp_syn=1, tcp_ack=0)
    flows = [BackgroundFlow(flow.at, flow.source, flow.adu, lifetime=1)]
    run = run_test(topo, s, background=flows)
    assert run.verdict.verdict == SUCCESS and run.verdict.attempts == 1
    assert [label for label, _ in run.logs] == ["initial", "rerun1"]


def test_persistent_interference_stays_unknown():
    topo, scens = two_servers()
    flows = [bg(0, "H1", src_ip=1, dst_ip=100, tcp_syn=1, tcp_ack=0)]
    run = run_test(topo, scens[0], background=flows)
    assert run.verdict.verdict == UNKNOWN and run.verdict.attempts == 3
    assert len(run.logs) == 4


def test_stateful_fail_refined_in_full_view():
    topo, scens = sc.proxy_monitor()
    fault = inject_fault(Simulator.fault_free(topo), {"type": "RuleMissing", "switch": "S1", "rule": 0}).faults
    run = run_test(topo, scenario(scens, "allow"), faults=fault, mode=STATEFUL_ONLY)
    out = run.verdict.to_json()
    assert out["verdict"] == FAIL and out["localized"] == "S1"
    assert "S1" in out["segment"] and run.logs[-1][0] == "refine"


def test_verdict_json_shape(fw_net):
    topo, scens = fw_net
    out = run_test(topo, scens[0]).verdict.to_json()
    assert out == {"scenario": "allow-solicited", "verdict": SUCCESS, "localized": None, "evidence": []}
