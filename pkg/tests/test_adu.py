import pytest
from hypothesis import given, strategies as st

from stateprobe.adu import (
    ADU, CTags, DONT_CARE, FIELDS, JSON_NAMES, MalformedADU, make_domain, make_time_adu, matches,
    set_context, specificity,
)

ints = st.integers(min_value=-1, max_value=500)
flags = st.sampled_from([-1, 0, 1])


@st.composite
def adus(draw):
    values = {}
    for f in FIELDS:
        if f in ("tcp_syn", "tcp_ack", "tcp_fin", "tcp_rst", "dropped", "is_time_tick", "is_test"):
            values[f] = draw(flags)
        else:
            values[f] = draw(ints)
    ctags = CTags()
    if draw(st.booleans()):
        ctags = ctags.with_provenance(draw(st.integers(1, 9)))
    for nf, tok in draw(st.lists(st.tuples(st.sampled_from(["fw", "lips"]), st.sampled_from(["HIT", "ALARM"])),
                                 max_size=3)):
        ctags = ctags.with_token(nf, tok)
    return ADU(ctags=ctags, **values)


def test_defaults_are_dont_care():
    a = ADU()
    assert all(getattr(a, f) == DONT_CARE for f in FIELDS)
    assert a.set_fields() == {}


@pytest.mark.parametrize("bad", [dict(src_ip=-2), dict(tcp_syn=2), dict(dropped=5)])
def test_rejects_out_of_domain(bad):
    with pytest.raises(MalformedADU):
        ADU(**bad)


def test_rejects_non_int():
    with pytest.raises(MalformedADU):
        ADU(src_ip="1")


@given(adus())
def test_json_round_trip(a):
    assert ADU.from_json(a.to_json()) == a


def test_json_uses_wire_names():
    data = ADU(src_ip=1, tcp_syn=1).to_json()
    assert data["srcIP"] == 1 and data["tcpSYN"] == 1
    assert set(data) == set(JSON_NAMES.values()) | {"cTags"}


def test_from_json_accepts_python_names():
    assert ADU.from_json({"src_ip": 3}).src_ip == 3


def test_provenance_is_write_once():
    tags = CTags().with_provenance(1).with_provenance(2)
    assert tags.provenance == 1


def test_tokens_accumulate_per_nf():
    tags = CTags().with_token("fw", "OUTBOUND").with_token("fw", "SOLICITED").with_token("p", "HIT")
    assert tags.tokens("fw") == {"OUTBOUND", "SOLICITED"}
    assert tags.tokens("nobody") == frozenset()
    assert tags.size() == 3


def test_set_context_helper():
    a = set_context(ADU(), "lips", "ALARM")
    assert "ALARM" in a.ctags.tokens("lips")


def test_matches_treats_dont_care_as_wildcard():
    pattern = ADU(dst_ip=5)
    assert matches(ADU(src_ip=1, dst_ip=5), pattern)
    assert not matches(ADU(dst_ip=6), pattern)
    assert matches(ADU(), ADU())


@given(adus())
def test_specificity_counts_set_fields_and_tags(a):
    expected = len(a.set_fields()) + (a.ctags.provenance != DONT_CARE) + a.ctags.size()
    assert specificity(a) == expected


def test_time_adu():
    t = make_time_adu(4)
    assert t.is_time_tick == 1 and t.tick == 4
    assert make_time_adu(4).adu_id != make_time_adu(4).adu_id
    with pytest.raises(ValueError):
        make_time_adu(-1)


def test_make_domain_sorts_and_dedups():
    assert make_domain({"src_ip": [3, 1, 3]}) == {"src_ip": (1, 3)}
