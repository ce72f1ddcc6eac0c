"""Concrete NF models built as ensembles of small per-unit FSMs."""
from __future__ import annotations

import zlib
from typing import Mapping

from .adu import ADU, DONT_CARE, TCP, matches
from .nf import ConfigError, Effect, NFModel, StateStore, Step

# firewall / TCP connection states
NULL, NEW, ESTABLISHED, INVALID = "NULL", "NEW", "ESTABLISHED", "INVALID"
FW_STATES = (NULL, NEW, ESTABLISHED, INVALID)


def is_syn(adu: ADU) -> bool:
    return adu.tcp_syn == 1 and adu.tcp_ack != 1


def is_synack(adu: ADU) -> bool:
    return adu.tcp_syn == 1 and adu.tcp_ack == 1


def is_teardown(adu: ADU) -> bool:
    return adu.tcp_fin == 1 or adu.tcp_rst == 1


def swap_endpoints(adu: ADU, **changes) -> ADU:
    return adu.replace(src_ip=adu.dst_ip, dst_ip=adu.src_ip, src_port=adu.dst_port,
                       dst_port=adu.src_port, **changes)


class Host(NFModel):
    """Passive endpoint: injection point and sink."""

    kind = "host"
    stateful = False
    relevant_fields = ("dst_ip",)

    @property
    def addr(self) -> int:
        return int(self.config["addr"])

    def _process(self, store, adu, ingress):
        return Step(store, adu, None, Effect.of(self.id, "OK"))


class Server(Host):
    """Endpoint that answers SYNs with SYN-ACKs and GETs with the object."""

    kind = "server"

    def _process(self, store, adu, ingress):
        if is_syn(adu):
            out = swap_endpoints(adu, tcp_syn=1, tcp_ack=1)
            return Step(store, out, "nic", Effect.of(self.id, "RESPOND"))
        if adu.http_get_obj >= 0:
            objects = self.config.get("objects")
            if objects is None or adu.http_get_obj in objects:
                out = swap_endpoints(adu, http_resp_obj=adu.http_get_obj, http_get_obj=DONT_CARE,
                                     tcp_syn=DONT_CARE, tcp_ack=1)
                # one ADU stands for the whole transfer, whatever its packet count
                packets = int(self.config.get("object_size", 1))
                return Step(store, out, "nic", Effect.of(self.id, "RESPOND", obj=adu.http_get_obj, packets=packets))
        return Step(store, adu, None, Effect.of(self.id, "OK"))


class Switch(NFModel):
    """Stateless first-match forwarding table.

    Rule: ``{"match": {field: value}, "from": node | [nodes], "context": [nf, token],
    "port": out_port}``. ``default`` names the fallback port, if any.
    """

    kind = "switch"
    stateful = False
    relevant_fields = ("dst_ip",)

    def validate_config(self):
        self.rules = []
        for rule in self.config.get("rules", []):
            if "port" not in rule:
                raise ConfigError(f"{self.id}: rule without port: {rule}")
            pattern = ADU.from_json(rule.get("match", {}))
            sources = rule.get("from")
            if isinstance(sources, str):
                sources = [sources]
            self.rules.append((pattern, frozenset(sources) if sources else None,
                               tuple(rule["context"]) if rule.get("context") else None, rule["port"]))

    def lookup(self, adu: ADU, ingress: str | None):
        steering = self.config.get("steering", True)
        for i, (pattern, sources, context, port) in enumerate(self.rules):
            if sources is not None and ingress not in sources:
                continue
            if context is not None:
                if not steering or context[1] not in adu.ctags.tokens(context[0]):
                    continue
            if matches(adu, pattern):
                return i, port
        return -1, self.config.get("default")

    def _process(self, store, adu, ingress):
        rule, port = self.lookup(adu, ingress)
        if port is None:
            return self.drop(store, adu, no_route=1)
        return Step(store, adu, port, Effect.of(self.id, "FORWARD", rule=rule))


class Firewall(NFModel):
    """Reflexive stateful firewall with one 4-state FSM per connection.

    Ports ``inside`` and ``outside``. Optional ``deny_provenance`` blocks ADUs
    whose origin host is listed; ``timeout`` (in ticks) expires idle connections.
    """

    kind = "firewall"
    relevant_fields = ("src_ip", "dst_ip", "tcp_syn", "tcp_ack", "tcp_fin", "tcp_rst")

    def conn_key(self, adu: ADU, outbound: bool):
        if outbound:
            unit = (adu.src_ip, adu.src_port, adu.dst_ip, adu.dst_port, adu.proto)
        else:
            unit = (adu.dst_ip, adu.dst_port, adu.src_ip, adu.src_port, adu.proto)
        return self.key("connTrack", unit)

    def conn_state(self, store: StateStore, key) -> str:
        value = store.get(key)
        return NULL if value is None else value[0]

    def _now(self, store):
        return store.get(self.key("clock", 0), 0)

    def _process(self, store, adu, ingress):
        outbound = self.side(ingress) == "inside"
        key = self.conn_key(adu, outbound)
        state = self.conn_state(store, key)
        now = self._now(store)
        deny = self.config.get("deny_provenance", ())
        if adu.ctags.provenance in deny:
            return self.drop(store, adu, "DENIED", host=adu.ctags.provenance)

        def keep(new_state):
            return store.set(key, (new_state, now))

        if outbound:
            out = self.tag(adu, "OUTBOUND")
            if is_teardown(adu):
                store = keep(INVALID) if state != NULL else store
            elif is_syn(adu) and state in (NULL, INVALID):
                store = keep(NEW)
            elif state != NULL:
                store = keep(state)
            return Step(store, out, "outside", Effect.of(self.id, "FORWARD"))

        if state == ESTABLISHED:
            store = keep(INVALID if is_teardown(adu) else ESTABLISHED)
            return Step(store, self.tag(adu, "SOLICITED"), "inside", Effect.of(self.id, "FORWARD"))
        if state == NEW and is_synack(adu):
            return Step(keep(ESTABLISHED), self.tag(adu, "SOLICITED"), "inside", Effect.of(self.id, "FORWARD"))
        return self.drop(store, adu, "UNSOLICITED")

    def tick(self, store, now):
        timeout = self.config.get("timeout", -1)
        store = store.set(self.key("clock", 0), now)
        if timeout is None or timeout < 0:
            return store
        for key in store.keys_for(self.id, "connTrack"):
            if now - store[key][1] >= timeout:
                store = store.delete(key)
        return store

    def reachable_state_count(self, store):
        return len(store.keys_for(self.id, "connTrack"))


class Nat(NFModel):
    """Source NAT with session-stable, injective (public ip, port) allocation."""

    kind = "nat"
    relevant_fields = ("src_ip", "dst_ip")

    def validate_config(self):
        if not self.config.get("pool"):
            raise ConfigError(f"{self.id}: NAT needs a non-empty public pool")

    def _process(self, store, adu, ingress):
        if self.side(ingress) == "inside":
            key = self.key("map", (adu.src_ip, adu.src_port))
            mapping = store.get(key)
            if mapping is None:
                pool = self.config["pool"]
                per_ip = self.config.get("ports_per_ip", 64)
                n = len(store.keys_for(self.id, "map"))
                if n >= len(pool) * per_ip:
                    return self.drop(store, adu, exhausted=1)
                mapping = (pool[n // per_ip], self.config.get("port_base", 1024) + n % per_ip)
                store = store.set(key, mapping)
            out = adu.replace(src_ip=mapping[0], src_port=mapping[1])
            if self.config.get("tagging", True):
                out = out.replace(ctags=out.ctags.with_provenance(adu.src_ip))
            out = self.tag(out, "NAT-MAPPED")
            return Step(store, out, "outside", Effect.of(self.id, "MAPPED", host=adu.src_ip))

        for key in store.keys_for(self.id, "map"):
            if store[key] == (adu.dst_ip, adu.dst_port):
                private_ip, private_port = key.unit
                out = self.tag(adu.replace(dst_ip=private_ip, dst_port=private_port), "NAT-MAPPED")
                return Step(store, out, "inside", Effect.of(self.id, "MAPPED", host=private_ip))
        return self.drop(store, adu, no_mapping=1)


CACHED = "CACHED"
SYN_RCVD, SYN_SENT = "SYN_RCVD", "SYN_SENT"


class Proxy(NFModel):
    """Transparent web proxy: clientTCP, serverTCP, cache and pending-fetch tasks.

    Ports ``down`` (towards clients) and ``up`` (towards origin servers).
    A miss is served within the same traversal: the ADU is rewritten into the
    upstream SYN / GET and comes back as the server's answer.
    """

    kind = "proxy"
    relevant_fields = ("src_ip", "dst_ip", "tcp_syn", "tcp_ack", "http_get_obj")

    @property
    def addr(self) -> int:
        return int(self.config["addr"])

    def cached(self, store, obj) -> bool:
        return store.get(self.key("cache", obj)) == CACHED

    def evict(self, store, obj) -> StateStore:
        return store.delete(self.key("cache", obj))

    def preload(self, store, obj) -> StateStore:
        return store.set(self.key("cache", obj), CACHED)

    def _provenance(self, adu, host):
        if not self.config.get("tagging", True):
            return adu
        return adu.replace(ctags=adu.ctags.with_provenance(host))

    def _process(self, store, adu, ingress):
        if ingress is not None and ingress == self.ports.get("up"):
            return self._from_server(store, adu)
        return self._from_client(store, adu)

    def _from_client(self, store, adu):
        client, server = adu.src_ip, adu.dst_ip
        ckey = self.key("clientTCP", (client, adu.src_port, server))
        cstate = store.get(ckey)
        if is_syn(adu):
            store = store.set(ckey, SYN_RCVD)
            out = self._provenance(swap_endpoints(adu, tcp_syn=1, tcp_ack=1), client)
            return Step(store, out, "down", Effect.of(self.id, "RESPOND"))
        if is_teardown(adu):
            return Step(store.delete(ckey), adu, None, Effect.of(self.id, "OK"))
        if adu.http_get_obj < 0:
            if cstate == SYN_RCVD and adu.tcp_ack == 1:
                return Step(store.set(ckey, ESTABLISHED), adu, None, Effect.of(self.id, "OK"))
            if cstate == ESTABLISHED:
                return Step(store, adu, None, Effect.of(self.id, "OK"))
            return self.drop(store, adu, no_connection=1)

        obj = adu.http_get_obj
        if cstate != ESTABLISHED:
            return self.drop(store, adu, no_connection=1)
        adu = self._provenance(adu, client)
        if self.cached(store, obj):
            out = swap_endpoints(adu, http_resp_obj=obj, http_get_obj=DONT_CARE, tcp_syn=DONT_CARE, tcp_ack=1)
            return Step(store, self.tag(out, "HIT"), "down", Effect.of(self.id, "HIT", obj=obj))

        store = store.set(self.key("pending", server), (client, adu.src_port, obj))
        skey = self.key("serverTCP", server)
        base = adu.replace(src_ip=self.addr, src_port=self.config.get("port", 3128))
        if store.get(skey) == ESTABLISHED:
            out = base.replace(tcp_syn=DONT_CARE, tcp_ack=1)
        else:
            store = store.set(skey, SYN_SENT)
            out = base.replace(tcp_syn=1, tcp_ack=0, http_get_obj=DONT_CARE)
        return Step(store, out, "up", Effect.of(self.id, "FORWARD", miss=obj))

    def _from_server(self, store, adu):
        server = adu.src_ip
        skey = self.key("serverTCP", server)
        pkey = self.key("pending", server)
        pending = store.get(pkey)
        if is_synack(adu) and store.get(skey) == SYN_SENT:
            store = store.set(skey, ESTABLISHED)
            if pending is None:
                return Step(store, adu, None, Effect.of(self.id, "OK"))
            out = adu.replace(src_ip=self.addr, dst_ip=server, src_port=adu.dst_port, dst_port=adu.src_port,
                              tcp_syn=DONT_CARE, tcp_ack=1, http_get_obj=pending[2])
            return Step(store, out, "up", Effect.of(self.id, "FORWARD", miss=pending[2]))
        if adu.http_resp_obj >= 0 and pending is not None and pending[2] == adu.http_resp_obj:
            obj = adu.http_resp_obj
            store = store.set(self.key("cache", obj), CACHED).delete(pkey)
            client, client_port, _ = pending
            out = adu.replace(dst_ip=client, dst_port=client_port, src_port=adu.src_port)
            return Step(store, self.tag(out, "MISS"), "down", Effect.of(self.id, "MISS", obj=obj))
        if is_teardown(adu):
            return Step(store.delete(skey), adu, None, Effect.of(self.id, "OK"))
        return Step(store, adu, None, Effect.of(self.id, "OK"))


class LightIPS(NFModel):
    """Counts first-time scan destinations per host; alarms at the threshold."""

    kind = "lips"
    counters_key = "threshold"
    relevant_fields = ("src_ip", "dst_ip", "tcp_syn")

    def validate_config(self):
        if self.config.get("threshold", 3) < 1:
            raise ConfigError(f"{self.id}: threshold must be >= 1")

    def counter_unit(self, host: int):
        group = self.config.get("aggregate_group")
        return (host - 1) // group if group else host

    def _process(self, store, adu, ingress):
        host = adu.src_ip
        alarm_key = self.key("alarm", host)
        tokens = []
        if is_syn(adu):
            seen_key = self.key("seen", (host, adu.dst_ip))
            if seen_key not in store:
                store = store.set(seen_key, 1)
                count_key = self.key("count", self.counter_unit(host))
                count = 1 if self.config.get("counter_reset") else store.get(count_key, 0) + 1
                store = store.set(count_key, count)
                tokens.append("SCAN")
                if count >= self.config.get("threshold", 3):
                    store = store.set(alarm_key, 1)
        if store.get(alarm_key) == 1:
            out = self.tag(adu, *tokens, "ALARM")
            return Step(store, out, "out", Effect.of(self.id, "ALARM", host=host))
        return Step(store, self.tag(adu, *tokens), "out", Effect.of(self.id, "OK", host=host))

    def tick(self, store, now):
        decay = self.config.get("decay_ticks")
        if decay and now % decay == 0:
            for key in store.keys_for(self.id, "count"):
                store = store.set(key, max(0, store[key] - 1))
        return store


class HeavyIPS(NFModel):
    """Payload-signature matcher for hosts the light IPS flagged."""

    kind = "hips"
    relevant_fields = ("src_ip", "payload_sig")

    def _flagged(self, adu: ADU) -> bool:
        source = self.config.get("requires")
        if source:
            return "ALARM" in adu.ctags.tokens(source)
        return any("ALARM" in toks for nf, toks in adu.ctags.per_nf if nf != self.id)

    def _process(self, store, adu, ingress):
        flagged = self._flagged(adu)
        if not flagged:
            adu = self.tag(adu, "CONTRACT-VIOLATION")
        extra = {} if flagged else {"contract_violation": 1}
        # a SYN carries no payload
        if not is_syn(adu) and adu.payload_sig in self.config.get("bad_signatures", ()):
            store = store.set(self.key("alarm", adu.src_ip), 1)
            out = self.tag(adu, "ALARM").replace(dropped=1)
            return Step(store, out, None, Effect.of(self.id, "ALARM", dropped=1, host=adu.src_ip, **extra))
        return Step(store, adu, "out", Effect.of(self.id, "OK", host=adu.src_ip, **extra))


class Monitor(NFModel):
    """Drops watched objects headed for watched hosts (by provenance, else dstIP)."""

    kind = "monitor"
    stateful = True
    relevant_fields = ("src_ip", "http_get_obj")

    def _process(self, store, adu, ingress):
        if adu.http_resp_obj >= 0:
            target = adu.ctags.provenance if adu.ctags.provenance != DONT_CARE else adu.dst_ip
            for rule in self.config.get("watch", ()):
                if rule["obj"] == adu.http_resp_obj and rule["host"] == target:
                    return self.drop(store, adu, obj=adu.http_resp_obj, host=target)
        return Step(store, adu, "out", Effect.of(self.id, "OK"))


class LoadBalancer(NFModel):
    """Rewrites dstIP to a backend chosen by a stable hash of the flow key."""

    kind = "lb"
    relevant_fields = ("src_ip", "dst_ip")

    def validate_config(self):
        if not self.config.get("backends"):
            raise ConfigError(f"{self.id}: load balancer needs at least one backend")

    @staticmethod
    def flow_hash(flow) -> int:
        return zlib.crc32(repr(flow).encode())

    def select(self, flow) -> int:
        backends = self.config["backends"]
        return backends[self.flow_hash(flow) % len(backends)]

    def _process(self, store, adu, ingress):
        flow = (adu.src_ip, adu.src_port, adu.dst_ip, adu.dst_port, adu.proto)
        key = self.key("flow", flow)
        backend = store.get(key)
        if backend is None:
            backend = self.select(flow)
            store = store.set(key, backend)
        out = self.tag(adu.replace(dst_ip=backend), "BALANCED")
        return Step(store, out, "out", Effect.of(self.id, "FORWARD", backend=backend))


class AuthServer(NFModel):
    """Login gate: locks a host after ``limit`` consecutive wrong credentials.

    The credential travels in payloadSig; ``password`` is the accepted token.
    """

    kind = "auth"
    counters_key = "limit"
    relevant_fields = ("src_ip", "payload_sig")

    def _process(self, store, adu, ingress):
        host = adu.src_ip
        if store.get(self.key("locked", host)) == 1:
            return self.drop(store, adu, "LOCKED", host=host)
        if adu.payload_sig < 0:
            return self.drop(store, adu, no_credential=1)
        fail_key = self.key("failures", host)
        if adu.payload_sig == self.config.get("password", 1):
            return Step(store.delete(fail_key), self.tag(adu, "AUTHED"), "out", Effect.of(self.id, "OK", host=host))
        count = 1 if self.config.get("counter_reset") else store.get(fail_key, 0) + 1
        store = store.set(fail_key, count)
        if count >= self.config.get("limit", 3):
            store = store.set(self.key("locked", host), 1)
            out = self.tag(adu, "LOGIN-FAIL", "LOCKED").replace(dropped=1)
            return Step(store, out, None, Effect.of(self.id, "DROP", host=host, locked=1))
        return self.drop(store, adu, "LOGIN-FAIL", host=host)


class Stage(NFModel):
    """Synthetic chain element with context hand-off.

    A per-host counter advances on SYNs, but only on ADUs the stage named in
    ``requires`` has already tagged PASS. Once the counter reaches
    ``threshold`` (default 2) later ADUs from that host are tagged PASS.
    """

    kind = "stage"
    relevant_fields = ("src_ip", "tcp_syn")

    def _process(self, store, adu, ingress):
        key = self.key("level", adu.src_ip)
        level = store.get(key, 0)
        required = self.config.get("requires")
        if required and "PASS" not in adu.ctags.tokens(required):
            return Step(store, adu, "out", Effect.of(self.id, "OK"))
        if level >= int(self.config.get("threshold", 2)):
            return Step(store, self.tag(adu, "PASS"), "out", Effect.of(self.id, "FORWARD"))
        if is_syn(adu):
            store = store.set(key, level + 1)
        return Step(store, adu, "out", Effect.of(self.id, "OK"))


NF_TYPES: Mapping[str, type[NFModel]] = {
    cls.kind: cls
    for cls in (Host, Server, Switch, Firewall, Nat, Proxy, LightIPS, HeavyIPS, Monitor,
                LoadBalancer, AuthServer, Stage)
}


def build_model(nf_id: str, kind: str, config: Mapping | None, ports: Mapping[str, str]) -> NFModel:
    try:
        cls = NF_TYPES[kind]
    except KeyError:
        raise ConfigError(f"unknown NF type {kind!r} for {nf_id}") from None
    return cls(nf_id, config, ports)


# used by scope computation when no explicit domain is declared
DEFAULT_PROTO = TCP
