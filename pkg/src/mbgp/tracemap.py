"""Traceroute ingest, IP-to-AS mapping and border-link identification."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Union

from .diagnostics import Diagnostics, sink
from .model import (BorderLink, Hop, MBGPCase, Reply, TraceroutePath, as_ip,
                    ip_sort_key)


class SchemaError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class ParseError(ValueError):
    pass


class Resolution(str, Enum):
    IXP = "IXP"
    UNKNOWN = "UNKNOWN"


HopAS = Union[int, Resolution]


def _first(doc: dict, *names):
    for name in names:
        if name in doc:
            return doc[name]
    raise SchemaError(names[0], "missing")


def ingest(document: dict) -> TraceroutePath:
    """Convert one traceroute result record into a :class:`TraceroutePath`.

    Accepts both the short field names (``src``, ``dst``, ``replies``) and the
    RIPE Atlas ones (``src_addr``, ``dst_addr``, per-hop ``result``).  A reply
    of ``{"x": "*"}`` is a timeout.
    """
    if not isinstance(document, dict):
        raise SchemaError("document", "expected an object")
    try:
        src = as_ip(_first(document, "src", "src_addr", "from"))
    except ValueError as exc:
        raise SchemaError("src", str(exc)) from None
    try:
        dst = as_ip(_first(document, "dst", "dst_addr"))
    except ValueError as exc:
        raise SchemaError("dst", str(exc)) from None
    timestamp = _first(document, "timestamp")
    if not isinstance(timestamp, (int, float)) or isinstance(timestamp, bool):
        raise SchemaError("timestamp", f"not a number: {timestamp!r}")
    paris = document.get("paris_id", 0)
    if not isinstance(paris, int):
        raise SchemaError("paris_id", f"not an integer: {paris!r}")
    raw_hops = _first(document, "result")
    if not isinstance(raw_hops, list):
        raise SchemaError("result", "expected a list of hops")

    hops = []
    for n, raw in enumerate(raw_hops):
        where = f"result[{n}]"
        if not isinstance(raw, dict) or not isinstance(raw.get("hop"), int):
            raise SchemaError(f"{where}.hop", "missing or not an integer")
        raw_replies = raw.get("replies", raw.get("result", []))
        if "error" in raw:
            raw_replies = []
        if not isinstance(raw_replies, list):
            raise SchemaError(f"{where}.replies", "expected a list")
        replies = []
        for k, rep in enumerate(raw_replies):
            if not isinstance(rep, dict):
                raise SchemaError(f"{where}.replies[{k}]", "expected an object")
            if "x" in rep or ("err" in rep and "rtt" not in rep):
                replies.append(Reply())
                continue
            rtt = rep.get("rtt")
            if rtt is not None and (not isinstance(rtt, (int, float)) or rtt < 0):
                raise SchemaError(f"{where}.replies[{k}].rtt", f"bad value {rtt!r}")
            try:
                responder = as_ip(rep["from"]) if rep.get("from") else None
            except ValueError as exc:
                raise SchemaError(f"{where}.replies[{k}].from", str(exc)) from None
            replies.append(Reply(responder, rtt))
        hops.append(Hop.from_replies(raw["hop"], replies))
    hops.sort(key=lambda h: h.index)
    try:
        return TraceroutePath(src, dst, int(timestamp), tuple(hops), paris)
    except ValueError as exc:
        raise SchemaError("result", str(exc)) from None


def to_document(path: TraceroutePath) -> dict:
    """Inverse of :func:`ingest`, in the short-field layout."""
    hops = []
    for hop in path.hops:
        replies = [{"x": "*"} if r.responder is None and r.rtt_ms is None
                   else {"from": None if r.responder is None else str(r.responder),
                         "rtt": r.rtt_ms}
                   for r in hop.replies]
        hops.append({"hop": hop.index, "replies": replies})
    return {"src": str(path.source_ip), "dst": str(path.destination_ip),
            "timestamp": path.timestamp, "paris_id": path.paris_variation, "result": hops}


class _Node:
    __slots__ = ("children", "value")

    def __init__(self):
        self.children = [None, None]
        self.value = None


class _Trie:
    """Binary trie keyed on address bits; values sit on prefix-terminal nodes."""

    def __init__(self, bits: int):
        self.bits = bits
        self.root = _Node()

    def insert(self, network: int, length: int, value):
        node = self.root
        for depth in range(length):
            bit = (network >> (self.bits - 1 - depth)) & 1
            if node.children[bit] is None:
                node.children[bit] = _Node()
            node = node.children[bit]
        previous = node.value
        node.value = value
        return previous

    def longest_match(self, address: int):
        node, best = self.root, self.root.value
        for depth in range(self.bits):
            node = node.children[(address >> (self.bits - 1 - depth)) & 1]
            if node is None:
                break
            if node.value is not None:
                best = node.value
        return best


_MOAS = object()


def _parse_prefix(text) -> ipaddress._BaseNetwork:
    try:
        return ipaddress.ip_network(str(text).strip(), strict=True)
    except ValueError as exc:
        raise ParseError(f"malformed prefix {text!r}: {exc}") from None


def _parse_origin(text):
    # RouteViews pfx2as marks multi-origin prefixes as "a_b" and AS sets as "a,b"
    parts = [p for p in str(text).replace(",", "_").split("_") if p]
    try:
        asns = {int(p) for p in parts}
    except ValueError:
        raise ParseError(f"malformed origin AS {text!r}") from None
    if not asns:
        raise ParseError("empty origin AS")
    return asns.pop() if len(asns) == 1 else _MOAS


class PrefixTable:
    """Longest-prefix-match map from addresses to origin AS, with IXP space.

    Build with :func:`build_prefix_table`; immutable afterwards.
    """

    def __init__(self):
        self._origin = {4: _Trie(32), 6: _Trie(128)}
        self._ixp = {4: _Trie(32), 6: _Trie(128)}
        self.entries: dict = {}
        self.ixp_prefixes: frozenset = frozenset()

    def lookup(self, address, diagnostics: Optional[Diagnostics] = None) -> HopAS:
        address = as_ip(address)
        if self._ixp[address.version].longest_match(int(address)) is not None:
            return Resolution.IXP
        value = self._origin[address.version].longest_match(int(address))
        if value is None:
            return Resolution.UNKNOWN
        if value is _MOAS:
            if diagnostics is not None:
                diagnostics.emit("MULTI_ORIGIN", f"{address} is in a multi-origin prefix")
            return Resolution.UNKNOWN
        return value


def build_prefix_table(records: Iterable, ixp: Iterable = (),
                       diagnostics: Optional[Diagnostics] = None) -> PrefixTable:
    """Index ``(prefix, origin)`` records; a repeated prefix keeps its last origin."""
    diagnostics = sink(diagnostics)
    table = PrefixTable()
    for prefix_text, origin_text in records:
        prefix = _parse_prefix(prefix_text)
        origin = _parse_origin(origin_text)
        if prefix in table.entries:
            diagnostics.emit("DUPLICATE_PREFIX", f"{prefix} listed again; last origin wins")
        table.entries[prefix] = origin
        table._origin[prefix.version].insert(int(prefix.network_address), prefix.prefixlen,
                                             origin)
    ixp_set = set()
    for prefix_text in ixp:
        prefix = _parse_prefix(prefix_text)
        ixp_set.add(prefix)
        table._ixp[prefix.version].insert(int(prefix.network_address), prefix.prefixlen, True)
    table.ixp_prefixes = frozenset(ixp_set)
    return table


def read_prefix_records(lines: Iterable[str]) -> list:
    """Parse ``prefix<TAB>origin`` lines; blanks and ``#`` comments are skipped."""
    records = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"line {lineno}: expected 'prefix<TAB>origin_asn'")
        records.append((parts[0], parts[1]))
    return records


def read_ixp_list(lines: Iterable[str]) -> list:
    return [l.strip() for l in lines if l.strip() and not l.strip().startswith("#")]


@dataclass(frozen=True)
class AnnotatedPath:
    path: TraceroutePath
    hop_asns: tuple
    border_links: tuple = ()

    def __post_init__(self):
        if len(self.hop_asns) != len(self.path.hops):
            raise ValueError("hop_asns must align with hops")

    def hop(self, index: int) -> Optional[Hop]:
        for hop in self.path.hops:
            if hop.index == index:
                return hop
        return None


def annotate(path: TraceroutePath, table: PrefixTable,
             diagnostics: Optional[Diagnostics] = None) -> AnnotatedPath:
    """Resolve each hop to an AS and emit border links between adjacent hops.

    A single IXP hop between two ASes is stepped over (the link is marked
    ``crosses_ixp``).  Unresponsive or unmapped hops break adjacency: a
    possible border hidden behind them is reported as ``SKIPPED_GAP``.
    """
    diagnostics = sink(diagnostics)
    hops = path.hops
    asns = tuple(table.lookup(h.responder, diagnostics) if h.responsive else None
                 for h in hops)
    resolved = [isinstance(a, int) and not isinstance(a, bool) for a in asns]

    def adjacent(i, j):
        return hops[j].index == hops[i].index + (j - i)

    links = []
    for i in range(len(hops) - 1):
        if not resolved[i]:
            continue
        j = i + 1
        if not adjacent(i, j) or asns[j] is None or asns[j] is Resolution.UNKNOWN:
            # a gap follows hop i: report only if it may hide an AS change
            k = next((k for k in range(j, len(hops)) if resolved[k]), None)
            if k is not None and asns[k] != asns[i]:
                diagnostics.emit("SKIPPED_GAP", f"hops {hops[i].index}..{hops[k].index}: "
                                 "no border inferred across unresolved hops",
                                 destination=path.destination_ip)
            continue
        ixp = asns[j] is Resolution.IXP
        if ixp:
            j += 1
            if j >= len(hops) or not adjacent(i, j):
                continue
            if asns[j] is Resolution.IXP:
                diagnostics.emit("IXP_CHAIN", f"hops {hops[i].index + 1}..{hops[j].index} "
                                 "are consecutive IXP hops; no link",
                                 destination=path.destination_ip)
                continue
            if not resolved[j]:
                diagnostics.emit("SKIPPED_GAP", f"hop {hops[j].index} after IXP is unresolved",
                                 destination=path.destination_ip)
                continue
        if asns[j] != asns[i]:
            near, far = hops[i].responder, hops[j].responder
            if near == far:
                continue
            links.append((hops[i].index, BorderLink(near, far, asns[i], asns[j], ixp)))
    return AnnotatedPath(path, asns, tuple(links))


@dataclass
class LinkMatch:
    """Per-destination border links of one case.

    ``assignments`` holds destinations seen on exactly one link; destinations
    seen on more than one appear only in ``unstable`` with their link set.
    """

    assignments: dict = field(default_factory=dict)
    unstable: dict = field(default_factory=dict)
    excluded: dict = field(default_factory=dict)

    @property
    def links(self) -> list:
        found = set(self.assignments.values())
        for linkset in self.unstable.values():
            found |= linkset
        return sorted(found, key=BorderLink.sort_key)


def case_link(annotated: AnnotatedPath, case: MBGPCase):
    """The first ``(hop index, link)`` joining the case's two ASes, or ``None``."""
    for index, link in annotated.border_links:
        if (link.nearside_asn, link.farside_asn) == (case.nearside_asn, case.farside_asn):
            return index, link
    return None


def match_case_links(annotated: Iterable[AnnotatedPath], case: MBGPCase,
                     diagnostics: Optional[Diagnostics] = None) -> LinkMatch:
    diagnostics = sink(diagnostics)
    seen: dict = {}
    excluded: dict = {}
    for ap in annotated:
        dst = ap.path.destination_ip
        if dst not in case.destination_prefix:
            excluded.setdefault(dst, "OUT_OF_PREFIX")
            continue
        found = case_link(ap, case)
        if found is None:
            excluded.setdefault(dst, "NO_BORDER")
            continue
        seen.setdefault(dst, set()).add(found[1])

    result = LinkMatch()
    for dst in sorted(seen, key=ip_sort_key):
        links = seen[dst]
        if len(links) == 1:
            result.assignments[dst] = next(iter(links))
        else:
            result.unstable[dst] = frozenset(links)
            diagnostics.emit("UNSTABLE", f"{dst} crossed {len(links)} different links",
                             destination=dst)
    for dst in sorted(excluded, key=ip_sort_key):
        if dst in seen:
            continue
        result.excluded[dst] = excluded[dst]
        diagnostics.emit(excluded[dst], f"{dst} excluded", destination=dst)
    return result
