"""Abstract data units: the single traffic record every model consumes and emits.

All header values are small abstract integers (host ids, object ids). ``-1`` is
the don't-care / unset value throughout.
"""
from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping

DONT_CARE = -1

# python attribute -> JSON name
JSON_NAMES = {
    "src_ip": "srcIP",
    "dst_ip": "dstIP",
    "proto": "proto",
    "src_port": "srcPort",
    "dst_port": "dstPort",
    "tcp_syn": "tcpSYN",
    "tcp_ack": "tcpACK",
    "tcp_fin": "tcpFIN",
    "tcp_rst": "tcpRST",
    "http_get_obj": "httpGetObj",
    "http_resp_obj": "httpRespObj",
    "payload_sig": "payloadSig",
    "dropped": "dropped",
    "network_port": "networkPort",
    "adu_id": "aduId",
    "is_time_tick": "isTimeTick",
    "tick": "tick",
    "is_test": "isTest",
}
FIELDS = tuple(JSON_NAMES)
PY_NAMES = {v: k for k, v in JSON_NAMES.items()}
FLAG_FIELDS = ("tcp_syn", "tcp_ack", "tcp_fin", "tcp_rst", "dropped", "is_time_tick", "is_test")

TCP, UDP = 6, 17

# Context tokens NFs may attach to an ADU. Effect labels are also accepted in
# policy paths (see nf.EFFECT_LABELS).
CONTEXT_TOKENS = frozenset({
    "HIT", "MISS", "ALARM", "SCAN", "NAT-MAPPED", "SOLICITED", "UNSOLICITED",
    "OUTBOUND", "DENIED", "AUTHED", "LOGIN-FAIL", "LOCKED", "PASS", "BALANCED",
    "CONTRACT-VIOLATION",
})


class MalformedADU(ValueError):
    pass


@dataclass(frozen=True)
class CTags:
    """Context tags: origin host plus per-NF processing history."""

    provenance: int = DONT_CARE
    per_nf: tuple[tuple[str, frozenset], ...] = ()

    def tokens(self, nf: str) -> frozenset:
        for name, toks in self.per_nf:
            if name == nf:
                return toks
        return frozenset()

    def with_token(self, nf: str, token: str) -> "CTags":
        current = self.tokens(nf)
        if token in current:
            return self
        entries = dict(self.per_nf)
        entries[nf] = current | {token}
        return CTags(self.provenance, tuple(sorted(entries.items())))

    def with_provenance(self, host: int) -> "CTags":
        # provenance is write-once
        if self.provenance != DONT_CARE:
            return self
        return CTags(host, self.per_nf)

    def size(self) -> int:
        return sum(len(t) for _, t in self.per_nf)

    def to_json(self) -> dict:
        return {
            "provenance": self.provenance,
            "perNF": {nf: sorted(toks) for nf, toks in self.per_nf},
        }

    @classmethod
    def from_json(cls, data: Mapping | None) -> "CTags":
        if not data:
            return cls()
        per_nf = tuple(sorted((nf, frozenset(toks)) for nf, toks in data.get("perNF", {}).items() if toks))
        return cls(int(data.get("provenance", DONT_CARE)), per_nf)


@dataclass(frozen=True)
class ADU:
    src_ip: int = DONT_CARE
    dst_ip: int = DONT_CARE
    proto: int = DONT_CARE
    src_port: int = DONT_CARE
    dst_port: int = DONT_CARE
    tcp_syn: int = DONT_CARE
    tcp_ack: int = DONT_CARE
    tcp_fin: int = DONT_CARE
    tcp_rst: int = DONT_CARE
    http_get_obj: int = DONT_CARE
    http_resp_obj: int = DONT_CARE
    payload_sig: int = DONT_CARE
    dropped: int = DONT_CARE
    network_port: int = DONT_CARE
    adu_id: int = DONT_CARE
    is_time_tick: int = DONT_CARE
    tick: int = DONT_CARE
    is_test: int = DONT_CARE
    ctags: CTags = field(default_factory=CTags)

    def __post_init__(self):
        for name in FIELDS:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise MalformedADU(f"{name} must be an int, got {value!r}")
            if value < DONT_CARE:
                raise MalformedADU(f"{name}={value} is below the don't-care value")
        for name in FLAG_FIELDS:
            if getattr(self, name) not in (-1, 0, 1):
                raise MalformedADU(f"flag {name} must be in {{-1, 0, 1}}")

    def replace(self, **changes) -> "ADU":
        return dataclasses.replace(self, **changes)

    def set_fields(self) -> dict[str, int]:
        return {n: getattr(self, n) for n in FIELDS if getattr(self, n) != DONT_CARE}

    @property
    def is_dropped(self) -> bool:
        return self.dropped == 1

    def to_json(self) -> dict:
        out = {JSON_NAMES[n]: getattr(self, n) for n in FIELDS}
        out["cTags"] = self.ctags.to_json()
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> "ADU":
        kwargs = {}
        for key, value in data.items():
            if key == "cTags":
                kwargs["ctags"] = CTags.from_json(value)
            elif key in PY_NAMES:
                kwargs[PY_NAMES[key]] = int(value)
            elif key in JSON_NAMES:
                kwargs[key] = int(value)
            else:
                raise MalformedADU(f"unknown ADU field {key!r}")
        return cls(**kwargs)


def matches(adu: ADU, pattern: ADU) -> bool:
    """Wildcard match: every field the pattern sets must equal the ADU's."""
    for name in FIELDS:
        want = getattr(pattern, name)
        if want != DONT_CARE and getattr(adu, name) != want:
            return False
    if pattern.ctags.provenance != DONT_CARE and adu.ctags.provenance != pattern.ctags.provenance:
        return False
    return all(toks <= adu.ctags.tokens(nf) for nf, toks in pattern.ctags.per_nf)


def specificity(pattern: ADU) -> int:
    return len(pattern.set_fields()) + (pattern.ctags.provenance != DONT_CARE) + pattern.ctags.size()


_time_ids = itertools.count(1_000_000)


def make_time_adu(tick: int, adu_id: int | None = None) -> ADU:
    if tick < 0:
        raise ValueError("tick must be non-negative")
    return ADU(is_time_tick=1, tick=tick, adu_id=next(_time_ids) if adu_id is None else adu_id)


def set_context(adu: ADU, nf: str, token: str) -> ADU:
    return adu.replace(ctags=adu.ctags.with_token(nf, token))


def make_domain(values: Mapping[str, Iterable[int]]) -> dict[str, tuple[int, ...]]:
    """Validate and normalise a field -> permitted values map."""
    domain = {}
    for name, vals in values.items():
        if name not in JSON_NAMES:
            raise KeyError(f"unknown field {name!r}")
        vals = tuple(sorted(set(int(v) for v in vals)))
        if not vals:
            raise ValueError(f"empty domain for {name}")
        if name in FLAG_FIELDS and not set(vals) <= {-1, 0, 1}:
            raise ValueError(f"flag domain for {name} must be within {{0, 1}}")
        domain[name] = vals
    return domain
