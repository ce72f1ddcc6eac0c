import json

import pytest
from hypothesis import given, settings, strategies as st

from stateprobe import scenarios as sc
from stateprobe.adu import ADU, DONT_CARE, TCP, UDP
from stateprobe.harness import Simulator, run_script
from stateprobe.planner import Plan, plan_scenario
from stateprobe.translator import (
    LIBRARY, PlanEntry, ScriptError, Step, TestScript, WireEvent, expand, expand_step, partition, scripts_from_json,
    scripts_to_json, to_scripts, translate,
)
from tests.conftest import scenario


def tcp(src, dst, **kw):
    return ADU(src_ip=src, dst_ip=dst, proto=TCP, src_port=40000, dst_port=80, **kw)


def bare(adu):
    return adu.replace(adu_id=DONT_CARE, is_test=DONT_CARE, network_port=DONT_CARE)


def test_partition_by_unordered_pair():
    steps = [("H1", tcp(1, 100, tcp_syn=1)), ("H2", tcp(2, 100, tcp_syn=1)),
             ("Srv", tcp(100, 1, tcp_ack=1)), ("H1", tcp(1, 2))]
    groups = partition(steps)
    assert sorted(groups) == [(1, 2), (1, 100), (2, 100)]
    assert [e.seq for e in groups[(1, 100)]] == [0, 2]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 3), st.integers(1, 3)), min_size=1, max_size=8), st.randoms())
def test_partition_ignores_interleaving_of_other_pairs(pairs, rnd):
    steps = [(f"H{a}", ADU(src_ip=a, dst_ip=b, proto=UDP)) for a, b in pairs]
    order = list(range(len(steps)))
    rnd.shuffle(order)
    base = {k: [e.adu for e in v] for k, v in partition(steps).items()}
    shuffled = {k: [e.adu for e in v] for k, v in partition([steps[i] for i in order]).items()}
    for key in base:  # each pair keeps its own relative order under the permutation
        expected = [steps[i][1] for i in order if (min(pairs[i]), max(pairs[i])) == key]
        assert shuffled[key] == expected
        assert sorted(map(repr, base[key])) == sorted(map(repr, shuffled[key]))


def test_handshake_becomes_establish_tcp_with_peer():
    plan = [("H1", tcp(1, 100, tcp_syn=1, tcp_ack=0)),
            ("Srv", tcp(1, 100, tcp_syn=1, tcp_ack=1).replace(src_ip=100, dst_ip=1, src_port=80, dst_port=40000)),
            ("H1", tcp(1, 100, tcp_syn=0, tcp_ack=1))]
    steps = translate([PlanEntry(i, s, a) for i, (s, a) in enumerate(plan)])
    assert [s.primitive for s in steps] == ["establishTCP"]
    assert steps[0].params["peer"] == "Srv" and steps[0].barrier == [0, 1, 2]


def test_planned_handshake_and_get(proxy_net):
    topo, scens = proxy_net
    plan = plan_scenario(scenario(scens, "allow"), topo).plan
    scripts = to_scripts(plan)
    assert [s.injector for s in scripts] == ["H1"]
    assert [s.primitive for s in scripts[0].steps] == ["establishTCP", "getHTTP"]
    est, get = scripts[0].steps
    assert "omit" in est.params and get.params["obj"] == 7


def test_lone_adu_falls_back_to_ip_packet():
    adu = ADU(src_ip=1, dst_ip=2, proto=47)
    steps = translate([adu])
    assert [s.primitive for s in steps] == ["sendIPPacket"]
    assert [bare(e.adu) for e in expand_step(steps[0], "H1")] == [adu]


def test_udp_and_signature_primitives():
    steps = translate([ADU(src_ip=1, dst_ip=2, proto=UDP), tcp(1, 2, tcp_ack=1, payload_sig=13)])
    assert [s.primitive for s in steps] == ["sendUDP", "sendPayloadSig"]
    assert steps[1].params["sig"] == 13


def test_higher_layer_preferred():
    steps = translate([tcp(1, 100, tcp_ack=1, http_get_obj=3)])
    assert steps[0].primitive == "getHTTP"


def test_wait_ticks_expands_to_n_tick_events():
    events = expand_step(Step("waitTicks", {"start": 4, "n": 2}, [7, 8]), "clock")
    assert [(e.seq, e.adu.is_time_tick, e.adu.tick) for e in events] == [(7, 1, 4), (8, 1, 5)]
    assert [e.adu.adu_id for e in events] == [8, 9]


def test_ticks_grouped_into_one_step():
    ticks = [ADU(is_time_tick=1, tick=t) for t in (0, 1, 2, 5)]
    steps = translate(ticks)
    assert [(s.primitive, s.params) for s in steps] == [("waitTicks", {"start": 0, "n": 3}),
                                                       ("waitTicks", {"start": 5, "n": 1})]


def test_unknown_primitive_and_bad_barrier():
    with pytest.raises(ScriptError):
        expand_step(Step("teleport", {"hdr": {}}, [0]), "H1")
    with pytest.raises(ScriptError):
        expand_step(Step("sendUDP", {"hdr": {"proto": UDP}}, [0, 1]), "H1")
    clash = [TestScript("H1", [Step("sendIPPacket", {"hdr": {"srcIP": 1}}, [0])]),
             TestScript("H2", [Step("sendIPPacket", {"hdr": {"srcIP": 2}}, [0])])]
    with pytest.raises(ScriptError):
        expand(clash)


def test_expand_counts_and_order():
    topo, scens = sc.ips_chain()
    plan = plan_scenario(scenario(scens, "suspicious"), topo).plan
    events = expand(to_scripts(plan))
    assert len(events) == len(plan)
    assert [e.seq for e in events] == list(range(len(plan)))
    assert all(e.adu.is_test == 1 and e.adu.adu_id == e.seq + 1 for e in events)


def test_scripts_json_round_trip(proxy_net):
    topo, scens = proxy_net
    scripts = to_scripts(plan_scenario(scens[1], topo).plan)
    text = scripts_to_json(scripts)
    assert scripts_from_json(text) == scripts
    assert json.loads(text)[0]["steps"][0]["primitive"] in LIBRARY


def test_every_library_entry_is_expandable():
    assert {"establishTCP", "getHTTP", "closeTCP", "sendIPPacket", "waitTicks"} <= set(LIBRARY)


hosts = st.sampled_from([1, 2, 100])
fields = st.fixed_dictionaries({
    "src_ip": hosts, "dst_ip": hosts,
    "proto": st.sampled_from([TCP, UDP, 47]),
    "tcp_syn": st.sampled_from([DONT_CARE, 0, 1]), "tcp_ack": st.sampled_from([DONT_CARE, 0, 1]),
    "tcp_rst": st.sampled_from([DONT_CARE, 0, 1]), "tcp_fin": st.sampled_from([DONT_CARE, 0, 1]),
    "http_get_obj": st.sampled_from([DONT_CARE, 3, 7]), "http_resp_obj": st.sampled_from([DONT_CARE, 7]),
    "payload_sig": st.sampled_from([DONT_CARE, 13]),
    "src_port": st.sampled_from([DONT_CARE, 40000, 80]), "dst_port": st.sampled_from([DONT_CARE, 21, 80]),
})
names = {1: "H1", 2: "H2", 100: "Srv"}


@settings(max_examples=150, deadline=None)
@given(st.lists(st.one_of(fields.map(lambda f: ADU(**f)), st.integers(0, 4).map(lambda t: ADU(is_time_tick=1, tick=t))),
                min_size=1, max_size=10))
def test_translation_round_trips(adus):
    steps = [(names.get(a.src_ip, "clock"), a) for a in adus]
    events = expand(scripts_from_json(scripts_to_json(to_scripts(steps))))
    assert [e.seq for e in events] == list(range(len(adus)))
    assert [bare(e.adu) for e in events] == [bare(a) for a in adus]
    assert [e.source for e in events] == [s for s, _ in steps]


@pytest.mark.parametrize("name", sorted(sc.CANONICAL))
def test_harness_sees_the_plan_it_was_given(name):
    topo, scens = sc.CANONICAL[name]()
    sim = Simulator.fault_free(topo)
    for s in scens:
        plan = plan_scenario(s, topo).plan
        direct = [WireEvent(i, src, a.replace(is_test=1)) for i, (src, a) in enumerate(plan.steps)]
        assert run_script(sim, direct).records == run_script(sim, to_scripts(plan)).records
