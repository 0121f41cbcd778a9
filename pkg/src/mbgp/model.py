"""Core domain types for M-BGP inference and performance analysis.

Every type is an immutable value object.  Addresses and prefixes are held as
:mod:`ipaddress` objects; constructors also accept their string forms.  Each
type converts to and from a plain JSON-compatible dict (``to_dict`` /
``from_dict``) which is the persistence encoding used by the store.
"""

from __future__ import annotations

import functools
import ipaddress
import statistics
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Optional, Union

IPAddress = Union[ipaddress.IPv4Address, ipaddress.IPv6Address]
IPNetwork = Union[ipaddress.IPv4Network, ipaddress.IPv6Network]


@functools.lru_cache(maxsize=1 << 16)
def _parse_ip(text: str) -> IPAddress:
    return ipaddress.ip_address(text)


def as_ip(value: Any) -> IPAddress:
    if isinstance(value, (ipaddress.IPv4Address, ipaddress.IPv6Address)):
        return value
    if isinstance(value, str):
        return _parse_ip(value)
    return ipaddress.ip_address(value)


def as_prefix(value: Any) -> IPNetwork:
    if isinstance(value, (ipaddress.IPv4Network, ipaddress.IPv6Network)):
        return value
    return ipaddress.ip_network(value, strict=True)


def ip_sort_key(ip: IPAddress) -> tuple[int, int]:
    return (ip.version, int(ip))


def _set(obj: Any, name: str, value: Any) -> None:
    object.__setattr__(obj, name, value)


class AddressFamily(str, Enum):
    V4 = "v4"
    V6 = "v6"

    @classmethod
    def of(cls, version: int) -> "AddressFamily":
        return cls.V4 if version == 4 else cls.V6


class Origin(str, Enum):
    IGP = "IGP"
    EGP = "EGP"
    INCOMPLETE = "INCOMPLETE"

    @property
    def rank(self) -> int:
        return _ORIGIN_RANK[self]


_ORIGIN_RANK = {Origin.IGP: 0, Origin.EGP: 1, Origin.INCOMPLETE: 2}


class Session(str, Enum):
    EBGP = "EBGP"
    IBGP = "IBGP"


@dataclass(frozen=True)
class BorderLink:
    """A layer-3 interconnection between a nearside and a farside border router."""

    nearside_ip: IPAddress
    farside_ip: IPAddress
    nearside_asn: int
    farside_asn: int
    crosses_ixp: bool = False
    bandwidth_bps: Optional[int] = None

    def __post_init__(self):
        _set(self, "nearside_ip", as_ip(self.nearside_ip))
        _set(self, "farside_ip", as_ip(self.farside_ip))
        if self.nearside_asn == self.farside_asn:
            raise ValueError(f"border link joins AS{self.nearside_asn} to itself")
        if self.nearside_ip == self.farside_ip:
            raise ValueError(f"border link endpoints are both {self.nearside_ip}")
        if self.bandwidth_bps is not None and self.bandwidth_bps <= 0:
            raise ValueError("bandwidth_bps must be positive")

    @property
    def label(self) -> str:
        return f"{self.nearside_ip}-{self.farside_ip}"

    def sort_key(self):
        return (ip_sort_key(self.nearside_ip), ip_sort_key(self.farside_ip),
                self.nearside_asn, self.farside_asn, self.crosses_ixp)

    def to_dict(self) -> dict:
        return {
            "nearside_ip": str(self.nearside_ip),
            "farside_ip": str(self.farside_ip),
            "nearside_asn": self.nearside_asn,
            "farside_asn": self.farside_asn,
            "crosses_ixp": self.crosses_ixp,
            "bandwidth_bps": self.bandwidth_bps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BorderLink":
        return cls(d["nearside_ip"], d["farside_ip"], d["nearside_asn"],
                   d["farside_asn"], d.get("crosses_ixp", False),
                   d.get("bandwidth_bps"))


@dataclass(frozen=True)
class MBGPCase:
    """One M-BGP deployment: (nearside AS, nearside router, farside AS, prefix)."""

    nearside_asn: int
    nearside_router: str
    farside_asn: int
    destination_prefix: IPNetwork
    border_links: frozenset = frozenset()
    address_family: Optional[AddressFamily] = None

    def __post_init__(self):
        prefix = as_prefix(self.destination_prefix)
        _set(self, "destination_prefix", prefix)
        _set(self, "border_links", frozenset(self.border_links))
        family = AddressFamily.of(prefix.version)
        if self.address_family is None:
            _set(self, "address_family", family)
        elif AddressFamily(self.address_family) is not family:
            raise ValueError(f"prefix {prefix} is not {self.address_family}")
        else:
            _set(self, "address_family", family)
        if self.nearside_asn == self.farside_asn:
            raise ValueError(f"nearside and farside are both AS{self.nearside_asn}")
        # '|' is the key separator; hostnames never contain it
        if not self.nearside_router or "|" in self.nearside_router:
            raise ValueError(f"invalid router identifier {self.nearside_router!r}")
        for link in self.border_links:
            if (link.nearside_asn, link.farside_asn) != (self.nearside_asn, self.farside_asn):
                raise ValueError(f"link {link.label} does not join AS{self.nearside_asn} "
                                 f"to AS{self.farside_asn}")

    @property
    def key(self) -> str:
        return case_key(self)

    def with_links(self, links: Iterable[BorderLink]) -> "MBGPCase":
        return MBGPCase(self.nearside_asn, self.nearside_router, self.farside_asn,
                        self.destination_prefix, frozenset(links), self.address_family)

    def to_dict(self) -> dict:
        return {
            "nearside_asn": self.nearside_asn,
            "nearside_router": self.nearside_router,
            "farside_asn": self.farside_asn,
            "destination_prefix": str(self.destination_prefix),
            "border_links": [l.to_dict() for l in sorted(self.border_links, key=BorderLink.sort_key)],
            "address_family": self.address_family.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MBGPCase":
        return cls(d["nearside_asn"], d["nearside_router"], d["farside_asn"],
                   d["destination_prefix"],
                   frozenset(BorderLink.from_dict(l) for l in d.get("border_links", [])),
                   AddressFamily(d["address_family"]) if d.get("address_family") else None)


def case_key(case: MBGPCase) -> str:
    """Canonical identifier ``nearside_asn|router|farside_asn|prefix/len``."""
    return (f"{case.nearside_asn}|{case.nearside_router}|{case.farside_asn}|"
            f"{case.destination_prefix.network_address}/{case.destination_prefix.prefixlen}")


@dataclass(frozen=True)
class RouteEntry:
    """One route block of a Looking Glass route-detail response.

    Attributes the response did not carry are ``None``.  ``status_flags`` holds
    the raw status characters, unrecognized ones included.
    """

    prefix: IPNetwork
    status_flags: frozenset
    next_hop: Optional[IPAddress]
    local_pref: Optional[int]
    weight: Optional[int]
    as_path: tuple
    origin: Optional[Origin]
    med: Optional[int]
    igp_metric: Optional[int]
    learned_from: Optional[Session]
    neighbor_asn: Optional[int] = None

    def __post_init__(self):
        _set(self, "prefix", as_prefix(self.prefix))
        _set(self, "status_flags", frozenset(self.status_flags))
        if self.next_hop is not None:
            _set(self, "next_hop", as_ip(self.next_hop))
        _set(self, "as_path", tuple(int(a) for a in self.as_path))
        if self.origin is not None:
            _set(self, "origin", Origin(self.origin))
        if self.learned_from is not None:
            _set(self, "learned_from", Session(self.learned_from))
        if {"E", "I"} <= self.status_flags:
            raise ValueError("route cannot be flagged both eBGP (E) and iBGP (I)")
        if self.as_path:
            if self.neighbor_asn is not None and self.neighbor_asn != self.as_path[0]:
                raise ValueError(f"neighbor AS{self.neighbor_asn} is not the first "
                                 f"AS of path {self.as_path}")
            _set(self, "neighbor_asn", self.as_path[0])

    @property
    def multipath(self) -> bool:
        return "M" in self.status_flags

    @property
    def ebgp(self) -> bool:
        return "E" in self.status_flags

    def to_dict(self) -> dict:
        return {
            "prefix": str(self.prefix),
            "status_flags": "".join(sorted(self.status_flags)),
            "next_hop": None if self.next_hop is None else str(self.next_hop),
            "local_pref": self.local_pref,
            "weight": self.weight,
            "as_path": list(self.as_path),
            "origin": None if self.origin is None else self.origin.value,
            "med": self.med,
            "igp_metric": self.igp_metric,
            "learned_from": None if self.learned_from is None else self.learned_from.value,
            "neighbor_asn": self.neighbor_asn,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RouteEntry":
        return cls(d["prefix"], frozenset(d["status_flags"]), d["next_hop"],
                   d["local_pref"], d["weight"], tuple(d["as_path"]), d["origin"],
                   d["med"], d["igp_metric"], d["learned_from"], d.get("neighbor_asn"))


@dataclass(frozen=True)
class Reply:
    responder: Optional[IPAddress] = None
    rtt_ms: Optional[float] = None

    def __post_init__(self):
        if self.responder is not None:
            _set(self, "responder", as_ip(self.responder))
        if self.rtt_ms is not None:
            if self.rtt_ms < 0:
                raise ValueError(f"negative RTT {self.rtt_ms}")
            _set(self, "rtt_ms", float(self.rtt_ms))

    @property
    def complete(self) -> bool:
        return self.responder is not None and self.rtt_ms is not None


@dataclass(frozen=True)
class Hop:
    index: int
    replies: tuple = ()
    aggregated_rtt_ms: Optional[float] = None

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"hop index must be positive, got {self.index}")
        _set(self, "replies", tuple(self.replies))
        has_complete = any(r.complete for r in self.replies)
        if (self.aggregated_rtt_ms is not None) != has_complete:
            raise ValueError(f"hop {self.index}: aggregated RTT must be present "
                             "iff some reply has both responder and RTT")

    @classmethod
    def from_replies(cls, index: int, replies: Iterable[Reply]) -> "Hop":
        """Build a hop with its RTT aggregated as the median of complete replies."""
        replies = tuple(replies)
        rtts = [r.rtt_ms for r in replies if r.complete]
        return cls(index, replies, statistics.median(rtts) if rtts else None)

    @property
    def responsive(self) -> bool:
        return self.aggregated_rtt_ms is not None

    @property
    def responder(self) -> Optional[IPAddress]:
        """Modal responder among complete replies; ties go to the lowest address."""
        counts = Counter(r.responder for r in self.replies if r.complete)
        if not counts:
            return None
        return min(counts, key=lambda ip: (-counts[ip], ip_sort_key(ip)))

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "replies": [[None if r.responder is None else str(r.responder), r.rtt_ms]
                        for r in self.replies],
            "aggregated_rtt_ms": self.aggregated_rtt_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hop":
        return cls(d["index"], tuple(Reply(ip, rtt) for ip, rtt in d["replies"]),
                   d["aggregated_rtt_ms"])


@dataclass(frozen=True)
class TraceroutePath:
    source_ip: IPAddress
    destination_ip: IPAddress
    timestamp: int
    hops: tuple = ()
    paris_variation: int = 0

    def __post_init__(self):
        _set(self, "source_ip", as_ip(self.source_ip))
        _set(self, "destination_ip", as_ip(self.destination_ip))
        _set(self, "hops", tuple(self.hops))
        last = 0
        for hop in self.hops:
            if hop.index <= last:
                raise ValueError(f"hop indices not strictly increasing at {hop.index}")
            last = hop.index
        if self.hops and self.hops[0].index != 1:
            raise ValueError("hop indices must start at 1")

    def to_dict(self) -> dict:
        return {
            "source_ip": str(self.source_ip),
            "destination_ip": str(self.destination_ip),
            "timestamp": self.timestamp,
            "hops": [h.to_dict() for h in self.hops],
            "paris_variation": self.paris_variation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraceroutePath":
        return cls(d["source_ip"], d["destination_ip"], d["timestamp"],
                   tuple(Hop.from_dict(h) for h in d["hops"]), d["paris_variation"])


@dataclass(frozen=True)
class DelaySample:
    case_id: str
    link: BorderLink
    destination_ip: IPAddress
    time_point: int
    delay_ms: float

    def __post_init__(self):
        _set(self, "destination_ip", as_ip(self.destination_ip))
        if self.time_point < 0:
            raise ValueError("time_point must be non-negative")

    @property
    def negative(self) -> bool:
        return self.delay_ms < 0

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "link": self.link.to_dict(),
            "destination_ip": str(self.destination_ip),
            "time_point": self.time_point,
            "delay_ms": self.delay_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DelaySample":
        return cls(d["case_id"], BorderLink.from_dict(d["link"]), d["destination_ip"],
                   d["time_point"], d["delay_ms"])


@dataclass(frozen=True)
class PercentileBand:
    time_point: int
    p25: Optional[float]
    p50: Optional[float]
    p75: Optional[float]
    sample_count: int = 0

    def __post_init__(self):
        if self.sample_count < 0:
            raise ValueError("sample_count must be non-negative")
        if self.sample_count and not (self.p25 <= self.p50 <= self.p75):
            raise ValueError(f"bands out of order at t={self.time_point}")

    def to_dict(self) -> dict:
        return {"time_point": self.time_point, "p25": self.p25, "p50": self.p50,
                "p75": self.p75, "sample_count": self.sample_count}

    @classmethod
    def from_dict(cls, d: dict) -> "PercentileBand":
        return cls(d["time_point"], d["p25"], d["p50"], d["p75"], d["sample_count"])


# type tag -> class, for the tagged record encoding used by the store
RECORD_TYPES = {cls.__name__: cls for cls in
                (BorderLink, MBGPCase, RouteEntry, Hop, TraceroutePath,
                 DelaySample, PercentileBand)}


def encode(obj) -> dict:
    return {"type": type(obj).__name__, "value": obj.to_dict()}


def decode(record: dict):
    try:
        cls = RECORD_TYPES[record["type"]]
    except KeyError:
        raise ValueError(f"unknown record type {record.get('type')!r}") from None
    return cls.from_dict(record["value"])
