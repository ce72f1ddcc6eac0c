"""Generic network-function contract.

A model maps (StateStore, ADU) to (StateStore, ADU, output port, Effect). Its
state lives in a store of small FSM instances keyed by (nf, task, unit) that
are created lazily on first touch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping, NamedTuple

from .adu import ADU, MalformedADU

EFFECT_LABELS = frozenset({"OK", "DROP", "ALARM", "HIT", "MISS", "FORWARD", "MAPPED", "RESPOND"})


class ContractViolation(Exception):
    """Raised when an NF receives input outside its contract."""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Effect:
    nf: str
    label: str
    annotations: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if self.label not in EFFECT_LABELS:
            raise ValueError(f"unknown effect label {self.label!r}")

    @classmethod
    def of(cls, nf: str, label: str, **annotations: int) -> "Effect":
        return cls(nf, label, tuple(sorted(annotations.items())))

    def annotation(self, key: str, default: Any = None) -> Any:
        return dict(self.annotations).get(key, default)

    def to_json(self) -> dict:
        return {"nf": self.nf, "label": self.label, "annotations": dict(self.annotations)}


class EnsembleKey(NamedTuple):
    nf: str
    task: str
    unit: Any


class StateStore(Mapping):
    """Immutable map EnsembleKey -> FSM state. Updates return new stores."""

    __slots__ = ("_d", "_key")

    def __init__(self, entries: Mapping | None = None):
        self._d = dict(entries or {})
        self._key = None

    def __getitem__(self, key):
        return self._d[key]

    def __iter__(self) -> Iterator:
        return iter(self._d)

    def __len__(self) -> int:
        return len(self._d)

    def set(self, key: EnsembleKey, value) -> "StateStore":
        if self._d.get(key, _MISSING) == value:
            return self
        d = dict(self._d)
        d[key] = value
        return StateStore(d)

    def delete(self, key: EnsembleKey) -> "StateStore":
        if key not in self._d:
            return self
        d = dict(self._d)
        del d[key]
        return StateStore(d)

    def without_nf(self, nf: str) -> "StateStore":
        return StateStore({k: v for k, v in self._d.items() if k.nf != nf})

    def keys_for(self, nf: str, task: str | None = None) -> list[EnsembleKey]:
        return [k for k in self._d if k.nf == nf and (task is None or k.task == task)]

    def key(self) -> tuple:
        if self._key is None:
            self._key = tuple(sorted(self._d.items(), key=lambda kv: repr(kv[0])))
        return self._key

    def __hash__(self):
        return hash(self.key())

    def __eq__(self, other):
        return isinstance(other, StateStore) and self._d == other._d

    def snapshot(self) -> list:
        return [[list(k[:2]) + [_jsonable(k.unit)], _jsonable(v)] for k, v in self.key()]

    def dumps(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True)

    def __repr__(self):
        return f"StateStore({self._d!r})"


_MISSING = object()


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    return value


class Step(NamedTuple):
    store: StateStore
    adu: ADU
    port: str | None  # None: the ADU terminates at this node
    effect: Effect


class NFModel:
    """Base class for network-function models.

    Subclasses implement :meth:`_process`. ``ports`` maps output port names to
    the neighbour node each port leads to; models use it to tell which side an
    ADU arrived from.
    """

    kind = "nf"
    stateful = True
    tagging = True  # writes provenance (controller-driven tagging)
    counters_key: str | None = None  # config key for a tunable threshold

    def __init__(self, nf_id: str, config: Mapping | None = None, ports: Mapping[str, str] | None = None):
        self.id = nf_id
        self.config = dict(config or {})
        self.ports = dict(ports or {})
        self.validate_config()

    def validate_config(self) -> None:
        pass

    def key(self, task: str, unit) -> EnsembleKey:
        return EnsembleKey(self.id, task, unit)

    def side(self, ingress: str | None, inside_port: str = "inside") -> str:
        """'inside' when the ADU came from the neighbour behind ``inside_port``."""
        return "inside" if ingress is not None and ingress == self.ports.get(inside_port) else "outside"

    def process(self, store: StateStore, adu: ADU, ingress: str | None = None) -> Step:
        if not isinstance(adu, ADU):
            raise MalformedADU(f"expected ADU, got {type(adu).__name__}")
        if adu.is_time_tick == 1:
            return Step(self.tick(store, adu.tick), adu, None, Effect.of(self.id, "OK"))
        return self._process(store, adu, ingress)

    def _process(self, store: StateStore, adu: ADU, ingress: str | None) -> Step:
        raise NotImplementedError

    def tick(self, store: StateStore, now: int) -> StateStore:
        return store

    def reset(self, store: StateStore) -> StateStore:
        return store.without_nf(self.id)

    def reachable_state_count(self, store: StateStore) -> int:
        return len(store.keys_for(self.id))

    def drop(self, store: StateStore, adu: ADU, token: str | None = None, **annotations) -> Step:
        out = adu.replace(dropped=1)
        if token:
            out = out.replace(ctags=out.ctags.with_token(self.id, token))
        return Step(store, out, None, Effect.of(self.id, "DROP", **annotations))

    def tag(self, adu: ADU, *tokens: str) -> ADU:
        ctags = adu.ctags
        for t in tokens:
            ctags = ctags.with_token(self.id, t)
        return adu.replace(ctags=ctags)

    def __repr__(self):
        return f"{type(self).__name__}({self.id!r})"


def process(model: NFModel, store: StateStore, adu: ADU, ingress: str | None = None) -> Step:
    return model.process(store, adu, ingress)


def reset(model: NFModel, store: StateStore) -> StateStore:
    return model.reset(store)


def reachable_state_count(model: NFModel, store: StateStore) -> int:
    return model.reachable_state_count(store)
