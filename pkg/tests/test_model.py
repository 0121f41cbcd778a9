import ipaddress

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbgp.model import (AddressFamily, BorderLink, DelaySample, Hop, MBGPCase,
                        PercentileBand, Reply, RouteEntry, TraceroutePath, case_key,
                        decode, encode)

v4 = st.integers(0, 2**32 - 1).map(ipaddress.IPv4Address)
v6 = st.integers(0, 2**128 - 1).map(ipaddress.IPv6Address)
asns = st.integers(1, 2**32 - 1)
routers = st.text(st.characters(whitelist_categories=("Ll", "Nd"), whitelist_characters=".-"),
                  min_size=1, max_size=12)


@st.composite
def prefixes(draw):
    if draw(st.booleans()):
        length = draw(st.integers(0, 32))
        return ipaddress.ip_network((int(draw(v4)), length), strict=False)
    length = draw(st.integers(0, 128))
    return ipaddress.ip_network((int(draw(v6)), length), strict=False)


@st.composite
def border_links(draw, near=None, far=None):
    near_asn = near if near is not None else draw(asns)
    far_asn = far if far is not None else draw(asns.filter(lambda a: a != near_asn))
    a = draw(v4)
    b = draw(v4.filter(lambda x: x != a))
    return BorderLink(a, b, near_asn, far_asn, draw(st.booleans()),
                      draw(st.none() | st.integers(1, 10**12)))


@st.composite
def cases(draw):
    near = draw(asns)
    far = draw(asns.filter(lambda a: a != near))
    links = draw(st.lists(border_links(near, far), max_size=3))
    return MBGPCase(near, draw(routers), far, draw(prefixes()), frozenset(links))


@st.composite
def hops(draw, index):
    replies = draw(st.lists(st.one_of(
        st.builds(Reply),
        st.builds(Reply, v4, st.floats(0, 500, allow_nan=False)),
        st.builds(Reply, v4)), max_size=3))
    return Hop.from_replies(index, replies)


@st.composite
def paths(draw):
    n = draw(st.integers(0, 5))
    hop_list = [draw(hops(i + 1)) for i in range(n)]
    return TraceroutePath(draw(v4), draw(v4), draw(st.integers(0, 2**31)), tuple(hop_list),
                          draw(st.integers(0, 64)))


@st.composite
def route_entries(draw):
    flags = draw(st.sets(st.sampled_from("BMAbmCDHLSFs"))) | {draw(st.sampled_from("EI"))}
    return RouteEntry(draw(prefixes()), frozenset(flags), draw(st.none() | v4),
                      draw(st.none() | st.integers(0, 1000)), draw(st.none() | st.integers(0, 9)),
                      tuple(draw(st.lists(asns, max_size=4))),
                      draw(st.none() | st.sampled_from(["IGP", "EGP", "INCOMPLETE"])),
                      draw(st.none() | st.integers(0, 100)), draw(st.none() | st.integers(0, 50)),
                      draw(st.none() | st.sampled_from(["EBGP", "IBGP"])))


@st.composite
def samples(draw):
    return DelaySample(draw(routers), draw(border_links()), draw(v4), draw(st.integers(0, 95)),
                       draw(st.floats(-50, 500, allow_nan=False)))


@st.composite
def bands(draw):
    values = sorted(draw(st.lists(st.floats(-50, 500, allow_nan=False), min_size=3,
                                  max_size=3)))
    return PercentileBand(draw(st.integers(0, 95)), *values, draw(st.integers(1, 100)))


any_value = st.one_of(border_links(), cases(), route_entries(), hops(1), paths(), samples(),
                      bands())


@settings(max_examples=300)
@given(any_value)
def test_encode_decode_identity(obj):
    assert decode(encode(obj)) == obj


@given(cases(), cases())
def test_case_key_injective(a, b):
    same_fields = (a.nearside_asn, a.nearside_router, a.farside_asn, a.destination_prefix) == \
        (b.nearside_asn, b.nearside_router, b.farside_asn, b.destination_prefix)
    assert (case_key(a) == case_key(b)) == same_fields


def test_case_key_format():
    case = MBGPCase(6939, "core1.tor1.he.net", 19752, "198.51.100.0/24")
    assert case.key == "6939|core1.tor1.he.net|19752|198.51.100.0/24"
    assert case.address_family is AddressFamily.V4
    assert MBGPCase(6939, "r", 1, "2001:db8::/32").address_family is AddressFamily.V6


@pytest.mark.parametrize("kwargs", [
    dict(nearside_asn=1, farside_asn=1),
    dict(nearside_router="a|b"),
    dict(nearside_router=""),
    dict(destination_prefix="198.51.100.1/24"),
    dict(address_family=AddressFamily.V6),
])
def test_case_rejects_bad_fields(kwargs):
    base = dict(nearside_asn=6939, nearside_router="r1", farside_asn=19752,
                destination_prefix="198.51.100.0/24")
    base.update(kwargs)
    with pytest.raises(ValueError):
        MBGPCase(**base)


def test_case_rejects_foreign_link():
    link = BorderLink("10.0.0.1", "10.1.0.1", 6939, 1)
    with pytest.raises(ValueError):
        MBGPCase(6939, "r1", 19752, "198.51.100.0/24", frozenset([link]))


def test_border_link_validation():
    with pytest.raises(ValueError):
        BorderLink("10.0.0.1", "10.0.0.1", 1, 2)
    with pytest.raises(ValueError):
        BorderLink("10.0.0.1", "10.0.0.2", 1, 1)
    with pytest.raises(ValueError):
        BorderLink("10.0.0.1", "10.0.0.2", 1, 2, bandwidth_bps=0)
    assert BorderLink("10.0.0.1", "10.0.0.2", 1, 2).label == "10.0.0.1-10.0.0.2"


def test_route_entry_flags():
    with pytest.raises(ValueError):
        RouteEntry("10.0.0.0/8", {"E", "I"}, None, None, None, (1,), None, None, None, None)
    r = RouteEntry("10.0.0.0/8", {"B", "M", "E"}, "10.0.0.1", 100, 0, (64500, 1), "IGP",
                   0, 0, "EBGP")
    assert r.multipath and r.ebgp and r.neighbor_asn == 64500


def test_hop_aggregation_and_responder():
    hop = Hop.from_replies(1, [Reply("10.0.0.2", 3.0), Reply("10.0.0.1", 1.0),
                               Reply("10.0.0.1", 2.0), Reply()])
    assert hop.aggregated_rtt_ms == 2.0
    assert hop.responder == ipaddress.ip_address("10.0.0.1")
    tie = Hop.from_replies(2, [Reply("10.0.0.9", 1.0), Reply("10.0.0.3", 1.0)])
    assert tie.responder == ipaddress.ip_address("10.0.0.3")
    silent = Hop.from_replies(3, [Reply(), Reply("10.0.0.1")])
    assert not silent.responsive and silent.responder is None
    with pytest.raises(ValueError):
        Hop(1, (Reply("10.0.0.1", 1.0),), None)
    with pytest.raises(ValueError):
        Hop(1, (), 1.0)
    with pytest.raises(ValueError):
        Reply("10.0.0.1", -1.0)


def test_path_hop_order():
    h1, h2 = Hop.from_replies(1, []), Hop.from_replies(2, [])
    with pytest.raises(ValueError):
        TraceroutePath("10.0.0.1", "10.0.0.2", 0, (h2, h1))
    with pytest.raises(ValueError):
        TraceroutePath("10.0.0.1", "10.0.0.2", 0, (h2,))
    TraceroutePath("10.0.0.1", "10.0.0.2", 0, (h1, Hop.from_replies(4, [])))


def test_band_ordering_enforced():
    with pytest.raises(ValueError):
        PercentileBand(0, 3.0, 2.0, 4.0, 10)
    PercentileBand(0, None, None, None, 0)


def test_decode_unknown_type():
    with pytest.raises(ValueError):
        decode({"type": "Nope", "value": {}})
