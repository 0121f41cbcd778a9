"""Border-link delay series and their statistics.

A link delay is the farside hop RTT minus the nearside hop RTT of one probe.
Per time point the delays over all destinations on a link give percentile
bands and histograms; the band series feeds change detection, and events on
sibling links of one case are cross-checked for isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .diagnostics import Diagnostics, sink
from .model import BorderLink, DelaySample, MBGPCase, PercentileBand, ip_sort_key
from .tracemap import AnnotatedPath, LinkMatch, case_link


class MissingRTT(ValueError):
    pass


class InsufficientData(ValueError):
    pass


def link_delay(path: AnnotatedPath, link_hop_index: int,
               diagnostics: Optional[Diagnostics] = None) -> float:
    """Farside RTT minus nearside RTT for the link starting at ``link_hop_index``.

    Negative results are returned as-is and reported as ``NEGATIVE_DELAY``.
    """
    link = dict(path.border_links).get(link_hop_index)
    if link is None:
        raise MissingRTT(f"no border link at hop {link_hop_index}")
    near = path.hop(link_hop_index)
    far = path.hop(link_hop_index + (2 if link.crosses_ixp else 1))
    if near is None or near.aggregated_rtt_ms is None:
        raise MissingRTT(f"nearside hop {link_hop_index} has no RTT")
    if far is None or far.aggregated_rtt_ms is None:
        raise MissingRTT(f"farside hop of link at {link_hop_index} has no RTT")
    delay = far.aggregated_rtt_ms - near.aggregated_rtt_ms
    if delay < 0 and diagnostics is not None:
        diagnostics.emit("NEGATIVE_DELAY", f"{link.label}: {delay:.3f} ms",
                         destination=path.path.destination_ip)
    return delay


@dataclass(frozen=True)
class DelaySeries:
    case_id: str
    link: BorderLink
    samples: tuple
    rounds: int

    def __post_init__(self):
        seen = set()
        for s in self.samples:
            if s.time_point >= self.rounds:
                raise ValueError(f"time point {s.time_point} outside {self.rounds} rounds")
            key = (s.destination_ip, s.time_point)
            if key in seen:
                raise ValueError(f"two samples for {key[0]} at t={key[1]}")
            seen.add(key)

    def at(self, time_point: int) -> list:
        return [s.delay_ms for s in self.samples if s.time_point == time_point]

    def by_time_point(self) -> dict:
        grouped: dict = {}
        for s in self.samples:
            grouped.setdefault(s.time_point, []).append(s.delay_ms)
        return grouped

    @property
    def negative_fraction(self) -> float:
        if not self.samples:
            return 0.0
        return sum(1 for s in self.samples if s.delay_ms < 0) / len(self.samples)

    @property
    def destinations(self) -> set:
        return {s.destination_ip for s in self.samples}


def quantile(ordered: list, q: float) -> float:
    """Linear interpolation between closest ranks at ``h = q * (n - 1)``."""
    h = q * (len(ordered) - 1)
    lo = math.floor(h)
    hi = math.ceil(h)
    return ordered[lo] + (h - lo) * (ordered[hi] - ordered[lo])


def band(values: list, time_point: int) -> PercentileBand:
    if not values:
        return PercentileBand(time_point, None, None, None, 0)
    ordered = sorted(values)
    return PercentileBand(time_point, quantile(ordered, 0.25), quantile(ordered, 0.5),
                          quantile(ordered, 0.75), len(ordered))


def percentile_bands(series: DelaySeries) -> list:
    if not series.samples:
        raise ValueError("series is empty")
    grouped = series.by_time_point()
    return [band(grouped.get(t, []), t) for t in range(series.rounds)]


def delay_histogram(series: DelaySeries, time_point: int, bin_width_ms: float = 10.0) -> list:
    """Counts in half-open bins ``[k*w, (k+1)*w)``; only non-empty bins, ascending."""
    if not bin_width_ms > 0:
        raise ValueError("bin width must be positive")
    counts: dict = {}
    for d in series.at(time_point):
        k = math.floor(d / bin_width_ms)
        counts[k] = counts.get(k, 0) + 1
    return [(k * bin_width_ms, counts[k]) for k in sorted(counts)]


class EventKind(str, Enum):
    LEVEL_SHIFT = "LEVEL_SHIFT"
    SPIKE = "SPIKE"


@dataclass(frozen=True)
class ChangeEvent:
    kind: EventKind
    time_point: int
    magnitude_ms: float
    affected_ip_count: int
    persistent: bool

    def __post_init__(self):
        if self.persistent != (self.kind is EventKind.LEVEL_SHIFT):
            raise ValueError("level shifts are persistent, spikes are not")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "time_point": self.time_point,
                "magnitude_ms": self.magnitude_ms,
                "affected_ip_count": self.affected_ip_count, "persistent": self.persistent}


_STATISTICS = {"p25": 0.25, "p50": 0.5, "p75": 0.75}


@dataclass(frozen=True)
class ChangeParams:
    window: int = 8
    persist: int = 4
    abs_threshold_ms: float = 5.0
    iqr_factor: float = 3.0
    # upper quartile: a surge on under half of a link's destinations leaves p50 flat
    statistic: str = "p75"

    def __post_init__(self):
        if self.window < 2 or self.persist < 1:
            raise ValueError("window must be >= 2 and persist >= 1")
        if self.statistic not in _STATISTICS:
            raise ValueError(f"statistic must be one of {sorted(_STATISTICS)}")

    @classmethod
    def parse(cls, text: str) -> "ChangeParams":
        """Parse ``window=8,persist=4,abs=5,k=3,statistic=p75`` (any subset)."""
        aliases = {"abs": "abs_threshold_ms", "abs_threshold": "abs_threshold_ms",
                   "k": "iqr_factor"}
        kwargs = {}
        for item in filter(None, (p.strip() for p in text.split(","))):
            name, _, value = item.partition("=")
            name = aliases.get(name.strip(), name.strip())
            if name in ("window", "persist"):
                kwargs[name] = int(value)
            elif name in ("abs_threshold_ms", "iqr_factor"):
                kwargs[name] = float(value)
            elif name == "statistic":
                kwargs[name] = value.strip()
            else:
                raise ValueError(f"unknown change parameter {name!r}")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _median(values: list) -> float:
    return quantile(sorted(values), 0.5)


def level_series(series: DelaySeries, statistic: str = "p50") -> dict:
    """Per-time-point level (a percentile of that point's delays)."""
    q = _STATISTICS[statistic]
    return {t: quantile(sorted(v), q) for t, v in sorted(series.by_time_point().items())}


def detect_changes(series: DelaySeries, params: ChangeParams = ChangeParams()) -> list:
    """Find upward spikes and level shifts in a link's per-time-point level.

    The baseline at ``t`` is the median level over the trailing ``window``
    points (earlier spikes excluded).  A point more than
    ``max(abs_threshold, k * IQR)`` above it is a level shift if the next
    ``persist`` points all stay above, and a spike if the next point falls
    back within ``abs_threshold`` of the baseline.  After a level shift the
    baseline restarts: detection resumes once a full post-shift window exists.
    """
    levels = level_series(series, params.statistic)
    points = list(levels)
    if len(points) < 2 * params.window:
        raise InsufficientData(f"{len(points)} time points with data; "
                               f"need {2 * params.window}")
    grouped = series.by_time_point()
    history: list = []
    events = []
    resume = 0
    for idx, t in enumerate(points):
        if idx < resume or len(history) < params.window:
            history.append(t)
            continue
        trailing = sorted(levels[p] for p in history[-params.window:])
        baseline = _median(trailing)
        iqr = quantile(trailing, 0.75) - quantile(trailing, 0.25)
        threshold = max(params.abs_threshold_ms, params.iqr_factor * iqr)
        rise = levels[t] - baseline
        if rise <= threshold:
            history.append(t)
            continue
        affected = sum(1 for d in grouped[t] if d - baseline > threshold)
        ahead = points[idx:idx + params.persist]
        if len(ahead) == params.persist and all(levels[p] - baseline > threshold
                                                for p in ahead):
            events.append(ChangeEvent(EventKind.LEVEL_SHIFT, t, rise, affected, True))
            history = [t]
            resume = idx + params.window
            continue
        if idx + 1 < len(points) and abs(levels[points[idx + 1]] - baseline) <= params.abs_threshold_ms:
            events.append(ChangeEvent(EventKind.SPIKE, t, rise, affected, False))
            continue
        history.append(t)
    return events


@dataclass(frozen=True)
class StabilityVerdict:
    links: frozenset
    rounds_seen: int

    @property
    def stable(self) -> bool:
        return len(self.links) == 1

    @property
    def link(self) -> Optional[BorderLink]:
        return next(iter(self.links)) if self.stable else None

    def to_dict(self) -> dict:
        return {"stable": self.stable, "rounds_seen": self.rounds_seen,
                "links": [l.label for l in sorted(self.links, key=BorderLink.sort_key)]}


def stability_report(assignments: Iterable) -> dict:
    """Per destination: STABLE if it used one link in every round it appeared."""
    links: dict = {}
    rounds: dict = {}
    any_round = False
    for _round, mapping in assignments:
        any_round = True
        for ip, link in mapping.items():
            links.setdefault(ip, set()).add(link)
            rounds[ip] = rounds.get(ip, 0) + 1
    if not any_round:
        raise ValueError("at least one round is required")
    return {ip: StabilityVerdict(frozenset(links[ip]), rounds[ip])
            for ip in sorted(links, key=ip_sort_key)}


class Verdict(str, Enum):
    CORRELATED = "CORRELATED"
    ISOLATED = "ISOLATED"


@dataclass(frozen=True)
class IsolationEntry:
    link: BorderLink
    event: ChangeEvent
    other: BorderLink
    verdict: Verdict

    def to_dict(self) -> dict:
        return {"link": self.link.label, "other": self.other.label,
                "event": self.event.to_dict(), "verdict": self.verdict.value}


def compare_links(series_a: DelaySeries, series_b: DelaySeries,
                  events_a: list, events_b: list) -> list:
    """For every event on one link: did the other link change within one time point?"""
    if series_a.case_id != series_b.case_id:
        raise ValueError("series belong to different cases")
    report = []
    for link, other, mine, theirs in ((series_a.link, series_b.link, events_a, events_b),
                                      (series_b.link, series_a.link, events_b, events_a)):
        for event in mine:
            near = any(abs(e.time_point - event.time_point) <= 1 for e in theirs)
            report.append(IsolationEntry(link, event, other,
                                         Verdict.CORRELATED if near else Verdict.ISOLATED))
    return report


def path_rounds(round_paths: Iterable, case: MBGPCase) -> list:
    """Group ``(round, AnnotatedPath)`` pairs into per-round ``ip -> link`` maps."""
    per_round: dict = {}
    for rnd, ap in round_paths:
        found = case_link(ap, case)
        if found is not None and ap.path.destination_ip in case.destination_prefix:
            per_round.setdefault(rnd, {})[ap.path.destination_ip] = found[1]
    return sorted(per_round.items())


def extract_series(round_paths: Iterable, case: MBGPCase, rounds: int,
                   diagnostics: Optional[Diagnostics] = None) -> dict:
    """Build one :class:`DelaySeries` per border link of ``case``.

    Samples are attributed to the link each probe actually crossed.
    """
    diagnostics = sink(diagnostics)
    key = case.key
    samples: dict = {}
    seen = set()
    for rnd, ap in round_paths:
        dst = ap.path.destination_ip
        if dst not in case.destination_prefix:
            continue
        found = case_link(ap, case)
        if found is None:
            continue
        index, link = found
        if (dst, rnd) in seen:
            diagnostics.emit("DUPLICATE_SAMPLE", f"{dst} probed twice in round {rnd}")
            continue
        try:
            delay = link_delay(ap, index, diagnostics)
        except MissingRTT as exc:
            diagnostics.emit("MISSING_RTT", f"{dst} round {rnd}: {exc}")
            continue
        seen.add((dst, rnd))
        samples.setdefault(link, []).append(DelaySample(key, link, dst, rnd, delay))
    out = {}
    for link in sorted(samples, key=BorderLink.sort_key):
        ordered = sorted(samples[link], key=lambda s: (s.time_point, ip_sort_key(s.destination_ip)))
        out[link] = DelaySeries(key, link, tuple(ordered), rounds)
    return out
