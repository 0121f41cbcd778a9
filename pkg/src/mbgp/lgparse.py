"""Looking Glass output parsing and two-phase M-BGP inference.

Phase one reads ``show ip bgp summary`` from a border router and keeps the
peering ASes reached over two or more neighbor addresses.  Phase two walks
each candidate AS's announced prefixes with ``show ip bgp routes detail`` and
stops at the first prefix whose installed routes form an M-BGP tie.

Parsing is driven by a :class:`Dialect`, a table of line patterns.  Only the
Foundry/Brocade dialect served by Hurricane Electric's LG ships here.
"""

from __future__ import annotations

import hashlib
import ipaddress
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional

from .diagnostics import Diagnostics, sink
from .model import (IPAddress, MBGPCase, Origin, RouteEntry, Session, as_ip,
                    as_prefix, ip_sort_key)


class MalformedTable(ValueError):
    """The response matches no known dialect layout."""


class NoRoutesFound(LookupError):
    """The LG reports no route for the queried address."""


class QueryError(IOError):
    """Transport-level failure while querying an LG."""


@dataclass(frozen=True)
class Dialect:
    name: str
    summary_header: re.Pattern
    summary_row: re.Pattern
    local_asn: re.Pattern
    prompt: re.Pattern
    route_block: re.Pattern
    route_fields: Mapping[str, re.Pattern]
    no_route: re.Pattern
    route_count: Optional[re.Pattern] = None


BROCADE = Dialect(
    name="brocade",
    summary_header=re.compile(r"^\s*Neighbor Address\s+AS#\s+State\b", re.I),
    summary_row=re.compile(r"^\s*(?P<ip>[0-9A-Fa-f:.]+)\s+(?P<asn>\d+)\s+(?P<state>\S+)"),
    local_asn=re.compile(r"Local AS Number:\s*(\d+)", re.I),
    prompt=re.compile(r"^\S*[>#]\s*(show\b.*)?$"),
    route_block=re.compile(
        r"^\s*\d+\s+Prefix:\s*(?P<prefix>[0-9A-Fa-f:./]+),.*?Status:\s*(?P<status>[A-Za-z]+)",
        re.M),
    route_fields={
        "next_hop": re.compile(r"NEXT_HOP:\s*(?P<v>[0-9A-Fa-f:.]+)"),
        "igp_metric": re.compile(r"NEXT_HOP:[^,\n]*,\s*Metric:\s*(?P<v>\d+)"),
        "peer": re.compile(r"Learned from Peer:\s*(?P<ip>[0-9A-Fa-f:.]+)\s*\((?P<v>\d+)\)"),
        "local_pref": re.compile(r"LOCAL_PREF:\s*(?P<v>\d+)"),
        "med": re.compile(r"\bMED:\s*(?P<v>\d+)"),
        "origin": re.compile(r"ORIGIN:\s*(?P<v>[A-Za-z]+|\?)"),
        "weight": re.compile(r"Weight:\s*(?P<v>\d+)"),
        "as_path": re.compile(r"AS_PATH:[ \t]*(?P<v>[^\n]*)"),
    },
    no_route=re.compile(r"(no (bgp )?routes? (found|matching)|not found in bgp table"
                        r"|network not in table)", re.I),
    route_count=re.compile(r"Number of BGP Routes matching display condition\s*:\s*(\d+)", re.I),
)

DIALECTS = {BROCADE.name: BROCADE}

_ORIGINS = {"igp": Origin.IGP, "i": Origin.IGP, "egp": Origin.EGP, "e": Origin.EGP,
            "incomplete": Origin.INCOMPLETE, "?": Origin.INCOMPLETE}


@dataclass(frozen=True)
class NeighborEntry:
    neighbor_ip: IPAddress
    remote_asn: int
    session_state: str


class Reason(str, Enum):
    MULTIPATH_FLAGS = "MULTIPATH_FLAGS"
    ATTRIBUTES_EQUAL_AND_FLAGGED = "ATTRIBUTES_EQUAL_AND_FLAGGED"
    SINGLE_PATH = "SINGLE_PATH"
    ATTRIBUTE_MISMATCH = "ATTRIBUTE_MISMATCH"
    NO_ROUTES = "NO_ROUTES"


@dataclass(frozen=True)
class MBGPVerdict:
    deployed: bool
    tied_paths: tuple
    reason: Reason

    def __post_init__(self):
        if self.deployed and len(self.tied_paths) < 2:
            raise ValueError("a deployed verdict needs at least two tied paths")


def _is_prompt(line: str, dialect: Dialect) -> bool:
    return bool(dialect.prompt.match(line.strip())) and not dialect.summary_row.match(line)


def parse_local_asn(text: str, dialect: Dialect = BROCADE) -> Optional[int]:
    m = dialect.local_asn.search(text)
    return int(m.group(1)) if m else None


def parse_bgp_summary(text: str, dialect: Dialect = BROCADE,
                      diagnostics: Optional[Diagnostics] = None) -> list:
    """Return one :class:`NeighborEntry` per neighbor row, in table order."""
    diagnostics = sink(diagnostics)
    lines = text.splitlines()
    for start, line in enumerate(lines):
        if dialect.summary_header.match(line):
            break
    else:
        raise MalformedTable(f"no {dialect.name} summary header found")

    entries, seen = [], set()
    for lineno, line in enumerate(lines[start + 1:], start + 2):
        if not line.strip():
            continue
        if _is_prompt(line, dialect):
            break
        m = dialect.summary_row.match(line)
        try:
            if not m:
                raise ValueError("row layout not recognized")
            ip = ipaddress.ip_address(m["ip"])
        except ValueError as exc:
            diagnostics.emit("BAD_SUMMARY_ROW", f"line {lineno}: {exc}", line=line.strip())
            continue
        if ip in seen:
            diagnostics.emit("DUPLICATE_NEIGHBOR", f"line {lineno}: {ip} listed twice")
            continue
        seen.add(ip)
        entries.append(NeighborEntry(ip, int(m["asn"]), m["state"]))
    return entries


def multipath_candidates(entries: Iterable[NeighborEntry]) -> dict:
    """ASes reached over two or more distinct neighbor addresses, by AS number."""
    by_asn: dict = {}
    for entry in entries:
        ips = by_asn.setdefault(entry.remote_asn, [])
        if entry.neighbor_ip not in ips:
            ips.append(entry.neighbor_ip)
    return {asn: by_asn[asn] for asn in sorted(by_asn) if len(by_asn[asn]) >= 2}


def _int_field(block, dialect, name):
    m = dialect.route_fields[name].search(block)
    return int(m["v"]) if m else None


def parse_route_detail(text: str, dialect: Dialect = BROCADE,
                       diagnostics: Optional[Diagnostics] = None) -> list:
    """Parse a route-detail response into :class:`RouteEntry` values.

    Missing attributes become ``None`` with a ``MISSING_ATTRIBUTE`` diagnostic.
    """
    diagnostics = sink(diagnostics)
    starts = list(dialect.route_block.finditer(text))
    if not starts:
        count = dialect.route_count.search(text) if dialect.route_count else None
        if dialect.no_route.search(text) or (count and int(count.group(1)) == 0):
            raise NoRoutesFound("LG reports no matching route")
        raise MalformedTable(f"no {dialect.name} route blocks found")

    routes = []
    for n, m in enumerate(starts):
        end = starts[n + 1].start() if n + 1 < len(starts) else len(text)
        block = text[m.start():end]
        flags = frozenset(m["status"])
        if {"E", "I"} <= flags:
            diagnostics.emit("CONFLICTING_FLAGS", f"block {n + 1}: both E and I set; skipped")
            continue

        nh = dialect.route_fields["next_hop"].search(block)
        origin = dialect.route_fields["origin"].search(block)
        path = dialect.route_fields["as_path"].search(block)
        peer = dialect.route_fields["peer"].search(block)
        values = {
            "next_hop": as_ip(nh["v"]) if nh else None,
            "local_pref": _int_field(block, dialect, "local_pref"),
            "weight": _int_field(block, dialect, "weight"),
            "med": _int_field(block, dialect, "med"),
            "igp_metric": _int_field(block, dialect, "igp_metric"),
            "origin": _ORIGINS.get(origin["v"].lower()) if origin else None,
            "learned_from": (Session.EBGP if "E" in flags
                             else Session.IBGP if "I" in flags else None),
        }
        as_path = tuple(int(a) for a in re.findall(r"\d+", path["v"])) if path else ()
        for name, value in values.items():
            if value is None:
                diagnostics.emit("MISSING_ATTRIBUTE", f"block {n + 1}: no {name}", field=name)
        if path is None:
            diagnostics.emit("MISSING_ATTRIBUTE", f"block {n + 1}: no as_path", field="as_path")
        neighbor = as_path[0] if as_path else (int(peer["v"]) if peer else None)
        routes.append(RouteEntry(prefix=as_prefix(m["prefix"]), status_flags=flags,
                                 as_path=as_path, neighbor_asn=neighbor, **values))
    return routes


def _tie_key(route: RouteEntry, strict_six: bool):
    key = (route.local_pref, route.as_path, route.origin, route.med,
           route.learned_from, route.igp_metric, route.neighbor_asn)
    return key if strict_six else key + (route.weight,)


def _route_order(route: RouteEntry):
    nh = ip_sort_key(route.next_hop) if route.next_hop is not None else (0, -1)
    return (nh, "".join(sorted(route.status_flags)), repr(_tie_key(route, False)))


def detect_mbgp(routes: Iterable[RouteEntry], strict_six: bool = False) -> MBGPVerdict:
    """Decide whether a route-detail response shows an M-BGP deployment.

    Deployed when at least two routes carry both ``M`` and ``E`` and agree on
    local-pref, AS path, origin, MED, eBGP/iBGP, IGP metric and neighbor AS
    (plus weight unless ``strict_six``).  Reasons for a negative verdict:
    ``NO_ROUTES`` (empty), ``SINGLE_PATH`` (one route), ``MULTIPATH_FLAGS``
    (fewer than two M+E routes), ``ATTRIBUTE_MISMATCH`` (flagged routes differ).
    """
    routes = sorted(routes, key=_route_order)
    if not routes:
        return MBGPVerdict(False, (), Reason.NO_ROUTES)
    if len(routes) == 1:
        return MBGPVerdict(False, (), Reason.SINGLE_PATH)

    flagged = [r for r in routes if r.multipath and r.ebgp]
    if len(flagged) < 2:
        return MBGPVerdict(False, (), Reason.MULTIPATH_FLAGS)

    groups: dict = {}
    for route in flagged:
        key = _tie_key(route, strict_six)
        if None in key:
            continue
        groups.setdefault(key, []).append(route)
    tied = [g for g in groups.values() if len(g) >= 2]
    if not tied:
        return MBGPVerdict(False, (), Reason.ATTRIBUTE_MISMATCH)
    best = min(tied, key=lambda g: (-len(g), [_route_order(r) for r in g]))
    return MBGPVerdict(True, tuple(best), Reason.ATTRIBUTES_EQUAL_AND_FLAGGED)


def representative_address(prefix) -> IPAddress:
    """Network address + 1; the address itself for a host prefix."""
    prefix = as_prefix(prefix)
    if prefix.num_addresses == 1:
        return prefix.network_address
    return prefix.network_address + 1


SUMMARY_COMMAND = "show ip bgp summary"


def detail_command(address) -> str:
    return f"show ip bgp routes detail {address}"


@dataclass
class RouterInference:
    router: str
    nearside_asn: int
    neighbors: list
    candidates: dict
    cases: list
    queries: list = field(default_factory=list)
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    @property
    def peer_asns(self) -> set:
        return {n.remote_asn for n in self.neighbors}


def run_inference(router: str, query: Callable[[str], str], peer_prefixes: Mapping,
                  nearside_asn: Optional[int] = None, dialect: Dialect = BROCADE,
                  strict_six: bool = False,
                  diagnostics: Optional[Diagnostics] = None) -> RouterInference:
    """Two-phase inference on one router, keeping the query log and peer counts."""
    diagnostics = sink(diagnostics)
    queries: list = []

    def ask(command):
        queries.append(command)
        return query(command)

    summary = ask(SUMMARY_COMMAND)
    neighbors = parse_bgp_summary(summary, dialect, diagnostics)
    if nearside_asn is None:
        nearside_asn = parse_local_asn(summary, dialect)
        if nearside_asn is None:
            raise MalformedTable(f"{router}: local AS number not given and not in summary")
    candidates = multipath_candidates(neighbors)

    cases = []
    for asn in candidates:
        for prefix in peer_prefixes.get(asn, ()):
            prefix = as_prefix(prefix)
            try:
                text = ask(detail_command(representative_address(prefix)))
                routes = parse_route_detail(text, dialect, diagnostics)
            except NoRoutesFound:
                continue
            except MalformedTable as exc:
                diagnostics.emit("MALFORMED_DETAIL", f"{router} AS{asn} {prefix}: {exc}")
                continue
            except (QueryError, OSError) as exc:
                diagnostics.emit("QUERY_FAILED", f"{router} AS{asn}: {exc}; AS skipped")
                break
            verdict = detect_mbgp(routes, strict_six)
            if verdict.deployed and verdict.tied_paths[0].neighbor_asn == asn:
                cases.append(MBGPCase(nearside_asn, router, asn, prefix))
                break
    cases.sort(key=lambda c: (c.farside_asn, ip_sort_key(c.destination_prefix.network_address),
                              c.destination_prefix.prefixlen))
    return RouterInference(router, nearside_asn, neighbors, candidates, cases,
                           queries, diagnostics)


def infer_cases(router: str, query: Callable[[str], str], peer_prefixes: Mapping,
                **kwargs) -> list:
    """Run both inference phases on one router and return its M-BGP cases."""
    return run_inference(router, query, peer_prefixes, **kwargs).cases


def command_filename(command: str) -> str:
    return hashlib.sha1(command.encode()).hexdigest() + ".txt"


def write_fixture(directory, responses: Mapping[str, str]) -> Path:
    """Write a playback directory: one file per command plus ``manifest.tsv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for command in sorted(responses):
        name = command_filename(command)
        (directory / name).write_text(responses[command])
        rows.append(f"{command}\t{name}\n")
    (directory / "manifest.tsv").write_text("".join(rows))
    return directory


class FixtureQuery:
    """Replays recorded LG responses; unknown commands raise :class:`QueryError`."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.log: list = []
        self.manifest = {}
        for line in (self.directory / "manifest.tsv").read_text().splitlines():
            if line.strip():
                command, name = line.split("\t")
                self.manifest[command] = name

    def __call__(self, command: str) -> str:
        self.log.append(command)
        try:
            return (self.directory / self.manifest[command]).read_text()
        except KeyError:
            raise QueryError(f"no recorded response for {command!r}") from None


class HttpQuery:
    """Query a text-returning LG proxy at ``url?command=...``, rate limited."""

    def __init__(self, url: str, min_interval_s: float = 2.0, timeout_s: float = 30.0):
        self.url = url
        self.min_interval_s = min_interval_s
        self.timeout_s = timeout_s
        self._last = 0.0

    def __call__(self, command: str) -> str:
        import urllib.error
        import urllib.parse
        import urllib.request

        wait = self._last + self.min_interval_s - time.monotonic()
        if wait > 0:
            time.sleep(wait)
        self._last = time.monotonic()
        sep = "&" if "?" in self.url else "?"
        url = f"{self.url}{sep}{urllib.parse.urlencode({'command': command})}"
        try:
            with urllib.request.urlopen(url, timeout=self.timeout_s) as resp:
                return resp.read().decode("utf-8", "replace")
        except (urllib.error.URLError, TimeoutError) as exc:
            raise QueryError(str(exc)) from exc


@dataclass(frozen=True)
class CensusRow:
    asn: int
    cases: int
    peers_with_mbgp: int
    peers_total: int
    routers_with_mbgp: int
    routers_total: int

    def format(self) -> str:
        return (f"{self.asn} | {self.cases:,} | {self.peers_with_mbgp:,}/{self.peers_total:,}"
                f" | {self.routers_with_mbgp:,}/{self.routers_total:,}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def census(runs: Iterable[RouterInference]) -> list:
    """Aggregate router runs into deployment census rows, one per nearside AS.

    Rows are ranked by case count, then AS number.
    """
    per_as: dict = {}
    for run in runs:
        per_as.setdefault(run.nearside_asn, []).append(run)
    rows = []
    for asn, group in per_as.items():
        peers = set().union(*(r.peer_asns for r in group))
        peers_with = {c.farside_asn for r in group for c in r.cases}
        rows.append(CensusRow(asn, sum(len(r.cases) for r in group), len(peers_with),
                              len(peers), sum(1 for r in group if r.cases), len(group)))
    rows.sort(key=lambda r: (-r.cases, r.asn))
    return rows


CENSUS_HEADER = "AS | #cases | peering ASes (M-BGP/total) | border routers (M-BGP/total)"
