"""Ground-truth simulator for M-BGP deployments.

Runs the BGP decision process with multipath installation, spreads a
destination prefix over the installed border links with a fixed hash, and
emits traceroute results and Looking Glass responses in the same formats the
measurement side consumes.  Everything is reproducible from the scenario seed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .model import (BorderLink, Hop, MBGPCase, Origin, Reply, Session, TraceroutePath,
                    as_ip, as_prefix, ip_sort_key)
from . import lgparse


class EmptyInput(ValueError):
    pass


class InvalidScenario(ValueError):
    pass


@dataclass(frozen=True)
class SimRoute:
    prefix: object
    local_pref: int
    as_path: tuple
    origin: Origin
    med: int
    learned_from: Session
    igp_metric: int
    neighbor_ip: object
    router_id: object
    received_order: int
    neighbor_asn: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "as_path", tuple(self.as_path))
        if not self.as_path:
            raise ValueError("as_path must be non-empty")
        object.__setattr__(self, "prefix", as_prefix(self.prefix))
        object.__setattr__(self, "origin", Origin(self.origin))
        object.__setattr__(self, "learned_from", Session(self.learned_from))
        object.__setattr__(self, "neighbor_ip", as_ip(self.neighbor_ip))
        object.__setattr__(self, "router_id", as_ip(self.router_id))
        if self.neighbor_asn is None:
            object.__setattr__(self, "neighbor_asn", self.as_path[0])


def _tie_break(route: SimRoute):
    return (route.received_order, ip_sort_key(route.router_id), ip_sort_key(route.neighbor_ip))


def decide(routes, multipath_enabled: bool = False) -> list:
    """Return the installed route set for one prefix.

    Filters, in order: highest local-pref, shortest AS path, lowest origin,
    lowest MED among routes from the same neighbor AS, eBGP over iBGP, lowest
    IGP metric.  The best path is the survivor received first, then lowest
    router ID.  With multipath on and the best path learned over eBGP, every
    survivor from the best path's neighbor AS is installed.
    """
    candidates = list(routes)
    if not candidates:
        raise EmptyInput("no routes to decide between")

    top = max(r.local_pref for r in candidates)
    candidates = [r for r in candidates if r.local_pref == top]
    shortest = min(len(r.as_path) for r in candidates)
    candidates = [r for r in candidates if len(r.as_path) == shortest]
    origin = min(r.origin.rank for r in candidates)
    candidates = [r for r in candidates if r.origin.rank == origin]
    lowest_med: dict = {}
    for r in candidates:
        lowest_med[r.neighbor_asn] = min(r.med, lowest_med.get(r.neighbor_asn, r.med))
    candidates = [r for r in candidates if r.med == lowest_med[r.neighbor_asn]]
    if any(r.learned_from is Session.EBGP for r in candidates):
        candidates = [r for r in candidates if r.learned_from is Session.EBGP]
    metric = min(r.igp_metric for r in candidates)
    candidates = [r for r in candidates if r.igp_metric == metric]

    best = min(candidates, key=_tie_break)
    if multipath_enabled and best.learned_from is Session.EBGP:
        tied = [r for r in candidates if r.neighbor_asn == best.neighbor_asn]
        if len(tied) >= 2:
            return sorted(tied, key=_tie_break)
    return [best]


_MASK64 = (1 << 64) - 1


def mix64(x: int) -> int:
    """SplitMix64 finalizer."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def ip_hash(address) -> int:
    value = int(as_ip(address))
    folded = 0
    while True:
        folded ^= value & _MASK64
        value >>= 64
        if not value:
            break
    return mix64(folded)


def assign_link(destination_ip, installed) -> int:
    if not installed:
        raise EmptyInput("no installed routes")
    return ip_hash(destination_ip) % len(installed)


@dataclass(frozen=True)
class LinkModel:
    base_ms: float
    jitter_ms: float = 0.0
    seed: Optional[int] = None
    farside_hops: int = 1
    crosses_ixp: bool = False
    bandwidth_bps: Optional[int] = None
    farside_ip: Optional[str] = None


@dataclass(frozen=True)
class SimEvent:
    link: int  # 1-based, as links are numbered in reports
    kind: str
    start_round: int
    end_round: int
    delta_ms: float = 0.0
    affected_ip_fraction: float = 1.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


EVENT_KINDS = ("SURGE", "SHIFT", "REHASH")


@dataclass(frozen=True)
class ControlSpec:
    prefix: str
    link: int = 1
    ip_count: int = 10


@dataclass(frozen=True)
class SimScenario:
    nearside_asn: int
    farside_asn: int
    router: str
    prefix: str
    links: tuple
    ip_count: int = 100
    rounds: int = 96
    interval_s: int = 900
    start_time: int = 1_600_000_000
    seed: int = 0
    events: tuple = ()
    multipath: bool = True
    nearside_space: str = "10.0.0.0/16"
    farside_space: str = "10.1.0.0/16"
    ixp_space: str = "10.255.0.0/24"
    nearside_hops: int = 3
    nearside_hop_ms: float = 1.0
    farside_hop_ms: float = 0.5
    hop_jitter_ms: float = 0.0
    replies: int = 3
    control: Optional[ControlSpec] = None
    extra_neighbors: tuple = ()

    def validate(self) -> "SimScenario":
        def bad(msg):
            raise InvalidScenario(msg)

        if self.nearside_asn == self.farside_asn:
            bad("nearside_asn equals farside_asn")
        if len(self.links) < 1:
            bad("k >= 1 border links required")
        try:
            prefix = as_prefix(self.prefix)
            spaces = [as_prefix(s) for s in (self.nearside_space, self.farside_space,
                                             self.ixp_space)]
        except ValueError as exc:
            bad(f"bad prefix: {exc}")
        if self.ip_count < 1 or self.ip_count > max(1, prefix.num_addresses - 2):
            bad(f"ip_count {self.ip_count} does not fit {prefix}")
        if self.rounds < 1 or self.interval_s < 60:
            bad("rounds >= 1 and interval_s >= 60 required")
        if self.nearside_hops < 1 or self.replies < 1:
            bad("nearside_hops >= 1 and replies >= 1 required")
        if any(s.overlaps(prefix) for s in spaces):
            bad("infrastructure space overlaps the destination prefix")
        for n, link in enumerate(self.links, 1):
            if link.base_ms < 0 or link.jitter_ms < 0 or link.farside_hops < 0:
                bad(f"link {n}: base_ms, jitter_ms and farside_hops must be >= 0")
            if link.jitter_ms > link.base_ms + self.nearside_hops * self.nearside_hop_ms:
                bad(f"link {n}: jitter could push RTTs negative")
        for ev in self.events:
            if ev.kind not in EVENT_KINDS:
                bad(f"event kind {ev.kind!r} not in {EVENT_KINDS}")
            if not 1 <= ev.link <= len(self.links):
                bad(f"event link {ev.link} out of range 1..{len(self.links)}")
            if not 0 < ev.affected_ip_fraction <= 1:
                bad("affected_ip_fraction must be in (0, 1]")
            if not 0 <= ev.start_round <= ev.end_round < self.rounds:
                bad(f"need start_round <= end_round < rounds, got "
                    f"{ev.start_round}..{ev.end_round}")
        if self.control is not None:
            cp = as_prefix(self.control.prefix)
            if cp.overlaps(prefix) or not 1 <= self.control.link <= len(self.links):
                bad("control prefix overlaps the destination or names a bad link")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "SimScenario":
        d = dict(d)
        try:
            d["links"] = tuple(LinkModel(**l) for l in d.get("links", ()))
            d["events"] = tuple(SimEvent(**e) for e in d.get("events", ()))
            if d.get("control") is not None:
                d["control"] = ControlSpec(**d["control"])
            d["extra_neighbors"] = tuple(tuple(n) for n in d.get("extra_neighbors", ()))
            return cls(**d).validate()
        except TypeError as exc:
            raise InvalidScenario(str(exc)) from None

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["links"] = [dict(l.__dict__) for l in self.links]
        d["events"] = [e.to_dict() for e in self.events]
        d["control"] = None if self.control is None else dict(self.control.__dict__)
        d["extra_neighbors"] = [list(n) for n in self.extra_neighbors]
        return d


def load_scenario(path) -> SimScenario:
    """Read a scenario from TOML (``.toml``/``.cfg``) or JSON (``.json``)."""
    path = Path(path)
    raw = path.read_bytes()
    try:
        data = json.loads(raw) if path.suffix == ".json" else tomllib.loads(raw.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise InvalidScenario(f"{path}: {exc}") from None
    return SimScenario.from_dict(data)


class Topology:
    """Addresses derived from a scenario."""

    def __init__(self, s: SimScenario):
        near = as_prefix(s.nearside_space).network_address
        far = as_prefix(s.farside_space).network_address
        ixp = as_prefix(s.ixp_space).network_address
        self.source_ip = near + 254
        self.nearside_hops = [near + h for h in range(1, s.nearside_hops + 1)]
        self.router_ip = self.nearside_hops[-1]
        self.farside_ips, self.farside_tails, self.ixp_ips = [], [], []
        for n, link in enumerate(s.links):
            fip = as_ip(link.farside_ip) if link.farside_ip else far + 1 + 16 * n
            self.farside_ips.append(fip)
            self.farside_tails.append([fip + h for h in range(1, link.farside_hops + 1)])
            self.ixp_ips.append(ixp + 1 + n if link.crosses_ixp else None)
        self.links = [BorderLink(self.router_ip, self.farside_ips[n], s.nearside_asn,
                                 s.farside_asn, l.crosses_ixp, l.bandwidth_bps)
                      for n, l in enumerate(s.links)]
        prefix = as_prefix(s.prefix)
        self.destinations = [prefix.network_address + 1 + i for i in range(s.ip_count)] \
            if prefix.num_addresses > 1 else [prefix.network_address]
        self.routes = [
            SimRoute(prefix, 100, (s.farside_asn,), Origin.IGP, 0, Session.EBGP, 0,
                     self.farside_ips[n], self.farside_ips[n], n)
            for n in range(len(s.links))
        ]


@dataclass
class GroundTruth:
    case: MBGPCase
    assignment: dict
    events: list
    unstable: list = field(default_factory=list)
    prefix_records: list = field(default_factory=list)
    ixp_prefixes: list = field(default_factory=list)

    def expected_detection(self) -> list:
        """(link number, kind, time point) that analysis should report."""
        out = []
        for ev in self.events:
            if ev["kind"] == "SURGE" and ev["start_round"] == ev["end_round"]:
                out.append((ev["link"], "SPIKE", ev["start_round"]))
            elif ev["kind"] == "SHIFT":
                out.append((ev["link"], "LEVEL_SHIFT", ev["start_round"]))
        return out

    def to_dict(self) -> dict:
        return {
            "case": self.case.to_dict(),
            "assignment": {str(ip): n for ip, n in self.assignment.items()},
            "events": self.events,
            "unstable": [str(ip) for ip in self.unstable],
            "prefix_records": self.prefix_records,
            "ixp_prefixes": self.ixp_prefixes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(MBGPCase.from_dict(d["case"]),
                   {as_ip(ip): n for ip, n in d["assignment"].items()},
                   d["events"], [as_ip(ip) for ip in d["unstable"]],
                   [tuple(r) for r in d["prefix_records"]], d["ixp_prefixes"])


def _affected(scenario: SimScenario, event: SimEvent, members: list, n: int) -> list:
    # count is a fraction of the whole prefix, drawn from the event link's members
    count = min(len(members), max(1, round(event.affected_ip_fraction * scenario.ip_count)))
    rng = random.Random(f"{scenario.seed}:event:{n}")
    return sorted(rng.sample(sorted(members, key=ip_sort_key), count), key=ip_sort_key)


def _probe(rng_hops, topo, scenario, link_no, dst, extra_ms, link_noise, timestamp):
    link = scenario.links[link_no]
    hops, rtt, index = [], 0.0, 0

    def add(ip, base):
        nonlocal index
        index += 1
        replies = []
        for _ in range(scenario.replies):
            j = rng_hops.uniform(-scenario.hop_jitter_ms, scenario.hop_jitter_ms) \
                if scenario.hop_jitter_ms else 0.0
            replies.append(Reply(ip, max(0.0, base + j)))
        hops.append(Hop.from_replies(index, replies))

    for ip in topo.nearside_hops:
        rtt += scenario.nearside_hop_ms
        add(ip, rtt)
    far_rtt = rtt + link.base_ms + link_noise + extra_ms
    if topo.ixp_ips[link_no] is not None:
        add(topo.ixp_ips[link_no], rtt + link.base_ms + link_noise)
    add(topo.farside_ips[link_no], far_rtt)
    for ip in topo.farside_tails[link_no]:
        far_rtt += scenario.farside_hop_ms
        add(ip, far_rtt)
    add(dst, far_rtt + scenario.farside_hop_ms)
    return TraceroutePath(topo.source_ip, dst, timestamp, tuple(hops), 16)


def generate(scenario: SimScenario):
    """Simulate the whole campaign: one path per round and destination, in that order.

    Returns ``(paths, truth)``.
    """
    scenario.validate()
    topo = Topology(scenario)
    installed = decide(topo.routes, scenario.multipath)
    link_of_route = {r.neighbor_ip: n for n, r in enumerate(topo.routes)}
    assignment = {dst: link_of_route[installed[assign_link(dst, installed)].neighbor_ip]
                  for dst in topo.destinations}

    members = {n: [d for d in topo.destinations if assignment[d] == n]
               for n in range(len(scenario.links))}
    events, deltas, moves, unstable = [], {}, {}, set()
    for n, ev in enumerate(scenario.events):
        ips = _affected(scenario, ev, members[ev.link - 1], n)
        for ip in ips:
            for r in range(ev.start_round, ev.end_round + 1):
                if ev.kind == "REHASH":
                    moves[(r, ip)] = (assignment[ip] + 1) % len(scenario.links)
                else:
                    deltas[(r, ip)] = deltas.get((r, ip), 0.0) + ev.delta_ms
        if ev.kind == "REHASH" and len(scenario.links) > 1:
            unstable.update(ips)
        events.append(dict(ev.to_dict(), affected_ips=[str(ip) for ip in ips]))

    link_rngs = [random.Random(l.seed if l.seed is not None else f"{scenario.seed}:link:{n}")
                 for n, l in enumerate(scenario.links)]
    rng_hops = random.Random(f"{scenario.seed}:hops")
    paths = []
    for r in range(scenario.rounds):
        for i, dst in enumerate(topo.destinations):
            n = moves.get((r, dst), assignment[dst])
            jitter = scenario.links[n].jitter_ms
            noise = link_rngs[n].uniform(-jitter, jitter) if jitter else 0.0
            ts = scenario.start_time + r * scenario.interval_s + i % scenario.interval_s
            paths.append(_probe(rng_hops, topo, scenario, n, dst,
                                deltas.get((r, dst), 0.0), noise, ts))

    used = sorted(set(assignment.values()) | {m for m in moves.values()})
    case = MBGPCase(scenario.nearside_asn, scenario.router, scenario.farside_asn,
                    scenario.prefix, frozenset(topo.links[n] for n in used))
    truth = GroundTruth(case, assignment, events, sorted(unstable, key=ip_sort_key),
                        prefix_records(scenario), [scenario.ixp_space])
    return paths, truth


def generate_control(scenario: SimScenario) -> list:
    """Paths to the non-destination control prefix, all over its one configured link."""
    scenario.validate()
    if scenario.control is None:
        return []
    topo = Topology(scenario)
    ctl = scenario.control
    net = as_prefix(ctl.prefix)
    dsts = [net.network_address + 1 + i
            for i in range(min(ctl.ip_count, max(1, net.num_addresses - 2)))]
    n = ctl.link - 1
    link = scenario.links[n]
    rng = random.Random(f"{scenario.seed}:control")
    paths = []
    for r in range(scenario.rounds):
        for i, dst in enumerate(dsts):
            noise = rng.uniform(-link.jitter_ms, link.jitter_ms) if link.jitter_ms else 0.0
            extra = sum(ev.delta_ms for ev in scenario.events
                        if ev.kind == "SHIFT" and ev.link == ctl.link
                        and ev.start_round <= r <= ev.end_round)
            ts = scenario.start_time + r * scenario.interval_s + i % scenario.interval_s
            paths.append(_probe(rng, topo, scenario, n, dst, extra, noise, ts))
    return paths


def prefix_records(scenario: SimScenario) -> list:
    records = [(scenario.nearside_space, scenario.nearside_asn),
               (scenario.farside_space, scenario.farside_asn),
               (str(as_prefix(scenario.prefix)), scenario.farside_asn)]
    if scenario.control is not None:
        records.append((str(as_prefix(scenario.control.prefix)), scenario.farside_asn))
    return [(str(p), a) for p, a in records]


def _summary_text(scenario: SimScenario, topo: Topology) -> str:
    rows = [(topo.farside_ips[n], scenario.farside_asn) for n in range(len(scenario.links))]
    rows += [(as_ip(ip), asn) for ip, asn in scenario.extra_neighbors]
    rows.sort(key=lambda r: ip_sort_key(r[0]))
    lines = [
        f"{scenario.router}>show ip bgp summary",
        "  BGP4 Summary",
        f"  Router ID: {topo.router_ip}   Local AS Number: {scenario.nearside_asn}",
        "  Confederation Identifier: not configured",
        f"  Number of Neighbors Configured: {len(rows)}, UP: {len(rows)}",
        "  Neighbor Address  AS#         State   Time          Rt:Accepted Filtered Sent     ToSend",
    ]
    for ip, asn in rows:
        lines.append(f"  {str(ip):<17} {asn:<11} ESTAB   12d 3h 4m     1          0        0        0")
    lines.append(f"{scenario.router}>")
    return "\n".join(lines) + "\n"


_ORIGIN_WORD = {Origin.IGP: "igp", Origin.EGP: "egp", Origin.INCOMPLETE: "incomplete"}


def route_detail_text(router: str, address, routes: list, installed: list) -> str:
    """Render route blocks in the Brocade layout that :mod:`lgparse` reads."""
    lines = [
        f"{router}>show ip bgp routes detail {address}",
        f"Number of BGP Routes matching display condition : {len(routes)}",
        "Status codes: A:AGGREGATE B:BEST b:NOT-INSTALLED-BEST C:CONFED_EBGP D:DAMPED",
        "       E:EBGP H:HISTORY I:IBGP L:LOCAL M:MULTIPATH m:NOT-INSTALLED-MULTIPATH",
    ]
    multipath = len(installed) >= 2
    for n, route in enumerate(routes, 1):
        status = ("B" if route is installed[0] else "") + \
                 ("M" if multipath and route in installed else "") + \
                 ("E" if route.learned_from is Session.EBGP else "I")
        lines += [
            f"{n:<7} Prefix: {route.prefix}, Rx path-id:0x00000000, Tx path-id:0x00{n:02d}0001,"
            f" Status: {status}, Age: 3d1h35m{50 + n}s",
            f"         NEXT_HOP: {route.neighbor_ip}, Metric: {route.igp_metric},"
            f"   Learned from Peer: {route.neighbor_ip} ({route.neighbor_asn})",
            f"          LOCAL_PREF: {route.local_pref},   MED: {route.med},"
            f"   ORIGIN: {_ORIGIN_WORD[route.origin]},   Weight: 0",
            f"         AS_PATH: {' '.join(str(a) for a in route.as_path)}",
            "            Adj_RIB_out count: 5,   Admin distance 20",
        ]
    lines.append(f"{router}>")
    return "\n".join(lines) + "\n"


@dataclass
class LGFixture:
    router: str
    responses: dict
    peer_prefixes: dict


def emit_lg_fixture(scenario: SimScenario) -> LGFixture:
    """LG responses a router configured as in ``scenario`` would give."""
    scenario.validate()
    topo = Topology(scenario)
    installed = decide(topo.routes, scenario.multipath)
    prefix = as_prefix(scenario.prefix)
    address = lgparse.representative_address(prefix)
    responses = {
        lgparse.SUMMARY_COMMAND: _summary_text(scenario, topo),
        lgparse.detail_command(address): route_detail_text(scenario.router, address,
                                                           topo.routes, installed),
    }
    return LGFixture(scenario.router, responses, {scenario.farside_asn: [str(prefix)]})
