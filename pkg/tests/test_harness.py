import pytest

from stateprobe import scenarios as sc
from stateprobe.adu import ADU, CTags, TCP, UDP
from stateprobe.harness import (
    MONITOR_ALL, STATEFUL_ONLY, BackgroundFlow, Fault, FaultError, MonitorLog, Simulator, background_traffic,
    inject_fault, run_script,
)
from stateprobe.network import TopologyError
from stateprobe.planner import plan_scenario
from stateprobe.translator import WireEvent, expand, to_scripts
from tests.conftest import scenario


def syn(seq, src, dst, source):
    return WireEvent(seq, source, ADU(src_ip=src, dst_ip=dst, proto=TCP, src_port=40000, dst_port=80, tcp_syn=1,
                                      tcp_ack=0, adu_id=seq + 1, is_test=1))


def tokens(rec, nf):
    return CTags.from_json(rec.adu.get("cTags", {})).tokens(nf)


def last_records(log):
    out = {}
    for r in log.records:
        out[r.adu_id] = r
    return out


def plan_events(net, name):
    topo, scens = sc.CANONICAL[net]()
    return topo, expand(to_scripts(plan_scenario(scenario(scens, name), topo).plan))


def test_fault_free_simulator_is_a_copy(fw_net):
    topo = fw_net[0]
    sim = Simulator.fault_free(topo)
    assert sim.topology is not topo
    sim.topology.nodes["fw"].config["timeout"] = 1
    assert "timeout" not in topo.nodes["fw"].config


def test_inject_fault_returns_new_simulator(proxy_net):
    sim = Simulator.fault_free(proxy_net[0])
    broken = inject_fault(sim, {"type": "RuleMissing", "switch": "S1", "rule": 0})
    assert broken is not sim and not sim.faults
    assert sim.topology.nodes["S1"].config["rules"]
    assert not broken.topology.nodes["S1"].config["rules"]


def test_link_down_truncates_path():
    topo, events = plan_events("proxy-monitor", "allow")
    sim = inject_fault(Simulator.fault_free(topo), Fault.from_json({"type": "LinkDown", "edge": "S2->S1"}))
    log = run_script(sim, events)
    first = [r for r in log.records if r.adu_id == 1]
    trace = [(topo.edges[r.port].name, r.direction) for r in first]
    assert trace == [("H1->S2", "rx"), ("S2->S1", "rx"), ("S2->S1", "lost")]


def test_rule_missing_drops_at_switch():
    topo, events = plan_events("proxy-monitor", "allow")
    sim = inject_fault(Simulator.fault_free(topo), {"type": "RuleMissing", "switch": "S1", "rule": 0})
    rec = last_records(run_script(sim, events))[1]
    assert rec.direction == "drop" and topo.edges[rec.port].dst == "S1"


def test_threshold_misconfig_alarms_later():
    topo, _ = sc.ips_chain(destinations=4)
    events = [syn(i, 1, 101 + i, "H1") for i in range(4)]
    base = Simulator.fault_free(topo)
    raised = inject_fault(base, {"type": "ThresholdMisconfig", "nf": "lips", "value": 4})
    for sim, first_alarm in ((base, 3), (raised, 4)):
        final = sorted(last_records(run_script(sim, events)).items())
        alarmed = [aid for aid, r in final if "ALARM" in tokens(r, "lips")]
        assert alarmed[0] == first_alarm


def test_counter_reset_prevents_lockout():
    topo, events = plan_events("conn-limit", "lockout")
    base = Simulator.fault_free(topo)
    assert "LOCKED" in tokens(last_records(run_script(base, events))[len(events)], "auth")
    reset = inject_fault(base, {"type": "CounterReset", "nf": "auth"})
    assert "LOCKED" not in tokens(last_records(run_script(reset, events))[len(events)], "auth")


def test_controller_off_loses_origin():
    topo, events = plan_events("cascaded-nats", "block-H1")
    base = Simulator.fault_free(topo)
    assert last_records(run_script(base, events))[1].direction == "drop"
    off = inject_fault(base, {"type": "ControllerOff"})
    final = last_records(run_script(off, events))[1]
    assert final.direction == "rx" and topo.edges[final.port].dst == "Srv"


def test_aggregate_miscount_blames_clean_host():
    topo, events = plan_events("ips-chain", "clean-host")
    base = Simulator.fault_free(topo)
    last = len(events)
    assert "ALARM" not in tokens(last_records(run_script(base, events))[last], "lips")
    bad = inject_fault(base, {"type": "AggregateMiscount", "nf": "lips", "hosts": 3})
    assert "ALARM" in tokens(last_records(run_script(bad, events))[last], "lips")


@pytest.mark.parametrize("fault", [
    {"type": "LinkDown", "edge": "nowhere->S1"},
    {"type": "RuleMissing", "switch": "ghost", "rule": 0},
    {"type": "RuleMissing", "switch": "fw", "rule": 0},
    {"type": "RuleMissing", "switch": "S1", "rule": 9},
    {"type": "ThresholdMisconfig", "nf": "S1", "value": 2},
    {"type": "CounterReset", "nf": "ghost"},
    {"type": "Meteor"},
    {"type": "LinkDown"},
])
def test_bad_faults_rejected(fw_net, fault):
    with pytest.raises(FaultError):
        inject_fault(Simulator.fault_free(fw_net[0]), fault)


@pytest.mark.parametrize("net", sorted(sc.CANONICAL))
def test_stateful_view_is_subset_of_all(net):
    topo, scens = sc.CANONICAL[net]()
    sim = Simulator.fault_free(topo)
    for s in scens:
        events = expand(to_scripts(plan_scenario(s, topo).plan))
        full = run_script(sim, events, MONITOR_ALL).records
        part = run_script(sim, events, STATEFUL_ONLY).records
        assert all(r in full for r in part)
        assert [r for r in full if r.port in sim.visible_edges(STATEFUL_ONLY)] == part


def test_stateful_mode_hides_switch_only_links(fw_net):
    sim = Simulator.fault_free(fw_net[0])
    names = {fw_net[0].edges[i].name for i in sim.visible_edges(STATEFUL_ONLY)}
    assert "S1->fw" in names and "H1->S1" not in names


def test_log_jsonl_round_trip():
    topo, events = plan_events("proxy-monitor", "drop-hit")
    log = run_script(Simulator.fault_free(topo), events)
    again = MonitorLog.from_jsonl(log.to_jsonl())
    assert again.records == log.records
    assert set(log.records[0].to_json()) == {"port", "aduId", "direction", "adu", "tick", "isTest"}


SPEC = {"random": {"count": 6, "kinds": ["syn", "get", "udp"], "objects": [3, 7], "span": 3}}


def test_background_is_deterministic(proxy_net):
    topo = proxy_net[0]
    a = background_traffic(SPEC, topo, seed=5)
    assert a == background_traffic(SPEC, topo, seed=5)
    assert a != background_traffic(SPEC, topo, seed=6)
    assert all(f.adu.is_test == 0 and f.adu.adu_id > 500_000 for f in a)
    assert [f.at for f in a] == sorted(f.at for f in a)


def test_background_sources_checked(proxy_net):
    with pytest.raises(TopologyError):
        background_traffic({"random": {"count": 1, "sources": ["Srv"]}}, proxy_net[0])


def test_background_flows_expire(fw_net):
    topo = fw_net[0]
    flow = BackgroundFlow(0, "H2", ADU(src_ip=2, dst_ip=100, proto=UDP, adu_id=500_001, is_test=0), lifetime=2)
    events = [syn(0, 1, 100, "H1")]
    sim = Simulator.fault_free(topo)
    assert run_script(sim, events, background=[flow], elapsed_cycles=1).background()
    assert not run_script(sim, events, background=[flow], elapsed_cycles=2).background()


def test_background_precedes_test_event(fw_net):
    topo = fw_net[0]
    flow = BackgroundFlow(1, "H2", ADU(src_ip=2, dst_ip=100, proto=UDP, adu_id=500_001, is_test=0))
    events = [syn(0, 1, 100, "H1"), syn(1, 1, 100, "H1")]
    ids = [r.adu_id for r in run_script(Simulator.fault_free(topo), events, background=[flow]).records]
    assert ids.index(500_001) > ids.index(1) and ids.index(500_001) < ids.index(2)


def test_loop_recorded():
    topo = sc.forwarding_loop()
    log = run_script(Simulator.fault_free(topo), [syn(0, 1, 3, "H1")])
    assert log.records[-1].direction == "loop"
