"""Small instances shared by the planner tests and the acceptance suite.

EXPECTED holds the minimal plan lengths found by exhaustive enumeration with
``brute_force_oracle`` (max_len 4), frozen here; None means no plan exists.
"""
from stateprobe import scenarios as sc
from stateprobe.policy import PolicyScenario


def narrow(s, **spec):
    data = s.to_json()
    data["traceSpec"].update(spec)
    return PolicyScenario.from_json(data)


def oracle_instances():
    t, s = sc.firewall()
    yield "fw/allow-solicited", t, s[0]
    yield "fw/block-unsolicited", t, s[1]
    yield "fw/outside-solicited", t, PolicyScenario.from_json(
        {"name": "outside-solicited", "traceSpec": {"srcIP": 100}, "action": "ALLOW",
         "policyPath": [{"nf": "fw", "contexts": ["SOLICITED"]}]})
    t, s = sc.proxy_monitor()
    yield "proxy/allow", t, s[0]
    yield "proxy/drop-hit-h2", t, narrow(s[1], srcIP=2)
    yield "proxy/drop-miss", t, s[2]
    t, s = sc.cascaded_nats()
    yield "nats/block-H1", t, s[0]
    yield "nats/allow-H2", t, s[1]
    t, s = sc.ips_chain()
    yield "ips/suspicious-h1", t, narrow(s[0], srcIP=1)
    t, s = sc.ips_chain(threshold=2, destinations=2)
    yield "ips2/clean-host", t, s[1]
    t, s = sc.conn_limit()
    yield "auth/lockout", t, s[0]
    yield "auth/valid-login", t, s[1]
    yield "auth/locked-but-allowed", t, PolicyScenario.from_json(
        {"name": "locked-but-allowed", "action": "ALLOW", "policyPath": [{"nf": "auth", "contexts": ["LOCKED"]}]})


EXPECTED = {
    "fw/allow-solicited": 1,
    "fw/block-unsolicited": 1,
    "fw/outside-solicited": None,
    "proxy/allow": 3,
    "proxy/drop-hit-h2": 4,
    "proxy/drop-miss": 3,
    "nats/block-H1": 1,
    "nats/allow-H2": 1,
    "ips/suspicious-h1": 4,
    "ips2/clean-host": 3,
    "auth/lockout": 3,
    "auth/valid-login": 1,
    "auth/locked-but-allowed": None,
}
ORACLE_MAX_LEN = 4
