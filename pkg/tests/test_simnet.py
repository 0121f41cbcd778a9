import ipaddress
import json
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbgp import lgparse, report, simnet
from mbgp.model import Origin, Session
from mbgp.tracemap import annotate, build_prefix_table

from conftest import SCENARIOS


def _pipeline(scenario):
    """generate -> annotate -> analyse, as the CLI does, without the store.

    The observed link set must equal the configured one for ``result.case`` to
    match the ground truth, so passing the configured links only adds bandwidth.
    """
    paths, truth = simnet.generate(scenario)
    table = build_prefix_table(truth.prefix_records, truth.ixp_prefixes)

    def rounds(items):
        return [((p.timestamp - scenario.start_time) // scenario.interval_s, annotate(p, table))
                for p in items]

    control = simnet.generate_control(scenario)
    result = report.analyze_case(truth.case, rounds(paths), scenario.rounds,
                                 control_paths=rounds(control),
                                 control_prefix=scenario.control.prefix
                                 if scenario.control else None)
    return truth, result


REHASH = simnet.SimScenario(
    6939, 64500, "core1.ams1.he.net", "203.0.113.0/25",
    (simnet.LinkModel(10.0, 1.0), simnet.LinkModel(10.0, 1.0), simnet.LinkModel(14.0, 1.0)),
    ip_count=60, rounds=24, seed=11,
    events=(simnet.SimEvent(2, "REHASH", 9, 9, 0.0, 0.1),))


@pytest.mark.parametrize("scenario", [
    *(simnet.load_scenario(SCENARIOS / n) for n in ("case1.toml", "case2.toml",
                                                     "case3.toml", "calm.toml")),
    REHASH,
], ids=["case1", "case2", "case3", "calm", "rehash"])
def test_pipeline_recovers_ground_truth(scenario):
    truth, result = _pipeline(scenario)
    assert result.case == truth.case
    topo = simnet.Topology(scenario)

    unstable = {ip for ip, v in result.stability.items() if not v.stable}
    assert unstable == set(truth.unstable)
    stable = {ip: v.link for ip, v in result.stability.items() if v.stable}
    assert set(stable) | unstable == set(truth.assignment)
    for ip, link in stable.items():
        assert link == topo.links[truth.assignment[ip]]

    found = sorted((topo.links.index(la.series.link) + 1, e.kind.value, e.time_point)
                   for la in result.links for e in la.events)
    expected = sorted(truth.expected_detection())
    assert len(found) == len(expected)
    for (fl, fk, ft), (el, ek, et) in zip(found, expected):
        assert (fl, fk) == (el, ek) and abs(ft - et) <= 1


def test_control_prefix_follows_its_link():
    scenario = simnet.load_scenario(SCENARIOS / "case1.toml")
    _, result = _pipeline(scenario)
    (control,) = result.control
    assert control.series.link == simnet.Topology(scenario).links[0]
    assert [(e.kind.value, e.time_point) for e in control.events] == [("LEVEL_SHIFT", 57)]


def test_event_fraction_counts_whole_prefix():
    scenario = simnet.load_scenario(SCENARIOS / "case2.toml")
    _, truth = simnet.generate(scenario)
    (event,) = truth.events
    on_link1 = {str(ip) for ip, n in truth.assignment.items() if n == 0}
    assert len(event["affected_ips"]) == 23
    assert set(event["affected_ips"]) <= on_link1


def test_generate_is_deterministic():
    scenario = replace(simnet.load_scenario(SCENARIOS / "case2.toml"), rounds=14)
    a, ta = simnet.generate(scenario)
    b, tb = simnet.generate(scenario)
    assert a == b and ta.to_dict() == tb.to_dict()
    c, _ = simnet.generate(replace(scenario, seed=99))
    assert c != a


def test_ground_truth_roundtrip():
    _, truth = simnet.generate(replace(REHASH, rounds=10))
    again = simnet.GroundTruth.from_dict(json.loads(json.dumps(truth.to_dict())))
    assert again.to_dict() == truth.to_dict()


def test_single_link_and_no_multipath():
    base = simnet.load_scenario(SCENARIOS / "calm.toml")
    _, truth = simnet.generate(replace(base, rounds=2, multipath=False))
    assert set(truth.assignment.values()) == {0}
    assert len(truth.case.border_links) == 1


@pytest.mark.parametrize("change", [
    dict(farside_asn=6939), dict(links=()), dict(prefix="10.0.0.0/8"),
    dict(ip_count=0), dict(ip_count=10_000), dict(rounds=0), dict(interval_s=10),
    dict(events=(simnet.SimEvent(3, "SURGE", 1, 1),)),
    dict(events=(simnet.SimEvent(1, "BURST", 1, 1),)),
    dict(events=(simnet.SimEvent(1, "SURGE", 5, 2),)),
    dict(events=(simnet.SimEvent(1, "SURGE", 1, 1, 5.0, 0.0),)),
    dict(links=(simnet.LinkModel(1.0, 9.0),)),
    dict(control=simnet.ControlSpec("203.0.113.0/24")),
])
def test_invalid_scenarios(change):
    base = simnet.load_scenario(SCENARIOS / "calm.toml")
    with pytest.raises(simnet.InvalidScenario):
        replace(base, **change).validate()


def test_load_scenario_formats(tmp_path):
    base = simnet.load_scenario(SCENARIOS / "case1.toml")
    p = tmp_path / "s.json"
    p.write_text(json.dumps(base.to_dict()))
    assert simnet.load_scenario(p) == base
    bad = tmp_path / "bad.toml"
    bad.write_text("nearside_asn = [")
    with pytest.raises(simnet.InvalidScenario):
        simnet.load_scenario(bad)
    bad.write_text('nearside_asn = 1\nfarside_asn = 2\nrouter = "r"\nprefix = "192.0.2.0/24"\n'
                   'surprise = 1\n[[links]]\nbase_ms = 1.0\n')
    with pytest.raises(simnet.InvalidScenario):
        simnet.load_scenario(bad)


def test_lg_fixture_round_trips_through_inference(tmp_path):
    scenario = replace(simnet.load_scenario(SCENARIOS / "case2.toml"),
                       extra_neighbors=(("10.1.9.1", 64999),))
    fixture = simnet.emit_lg_fixture(scenario)
    lgparse.write_fixture(tmp_path, fixture.responses)
    run = lgparse.run_inference(fixture.router, lgparse.FixtureQuery(tmp_path),
                                fixture.peer_prefixes)
    assert run.nearside_asn == 6939 and run.peer_asns == {20940, 64999}
    (case,) = run.cases
    assert (case.farside_asn, str(case.destination_prefix)) == (20940, "203.0.113.0/24")

    # without multipath the same router shows no deployment
    fixture = simnet.emit_lg_fixture(replace(scenario, multipath=False))
    lgparse.write_fixture(tmp_path / "off", fixture.responses)
    assert lgparse.infer_cases(fixture.router, lgparse.FixtureQuery(tmp_path / "off"),
                               fixture.peer_prefixes) == []


def _routes(n):
    return [simnet.SimRoute("203.0.113.0/24", 100, (64500,), Origin.IGP, 0, Session.EBGP, 0,
                            f"10.1.0.{1 + 16 * k}", f"10.1.0.{1 + 16 * k}", k) for k in range(n)]


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_assign_link_pure(ip, k):
    installed = _routes(k)
    first = simnet.assign_link(ipaddress.IPv4Address(ip), installed)
    assert 0 <= first < k
    assert all(simnet.assign_link(ipaddress.IPv4Address(ip), installed) == first
               for _ in range(3))


@given(st.integers(0, 2**128 - 1))
def test_ip_hash_v6(ip):
    assert simnet.ip_hash(ipaddress.IPv6Address(ip)) == simnet.ip_hash(ipaddress.IPv6Address(ip))
    assert 0 <= simnet.ip_hash(ipaddress.IPv6Address(ip)) < 2**64


def test_mix64_known_values():
    # SplitMix64 outputs for seed 0: the generator state advances by the golden gamma
    gamma = 0x9E3779B97F4A7C15
    assert simnet.mix64(0) == 0xE220A8397B1DCDAF
    assert simnet.mix64(gamma) == 0x6E789E6AA1B965F4
    with pytest.raises(simnet.EmptyInput):
        simnet.assign_link("10.0.0.1", [])


def test_decide_permutation_invariant_exhaustive():
    import itertools

    routes = _routes(3) + [simnet.SimRoute("203.0.113.0/24", 100, (64501,), Origin.IGP, 0,
                                           Session.EBGP, 0, "10.1.0.99", "10.1.0.99", 0)]
    expected = simnet.decide(routes, True)
    for perm in itertools.permutations(routes):
        assert simnet.decide(list(perm), True) == expected
