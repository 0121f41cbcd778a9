"""Per-case analysis pipeline and its line-delimited output records."""

from __future__ import annotations

import csv
import datetime as _dt
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Optional

from . import __version__
from .delaylab import (ChangeParams, InsufficientData, compare_links, delay_histogram,
                       detect_changes, extract_series, path_rounds, percentile_bands,
                       stability_report)
from .diagnostics import Diagnostics, sink
from .model import BorderLink, MBGPCase
from .orchestrate import ProbePlan
from .store import RecordLog, Store, dumps
from .tracemap import (AnnotatedPath, PrefixTable, SchemaError, annotate,
                       build_prefix_table, ingest, match_case_links, read_ixp_list,
                       read_prefix_records)


@dataclass
class LinkAnalysis:
    number: int
    series: object
    bands: list
    events: list
    histograms: dict
    destinations: int
    stable: int


@dataclass
class CaseAnalysis:
    case: MBGPCase
    rounds: int
    links: list
    stability: dict
    isolation: list
    control: list = field(default_factory=list)
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def link(self, number: int) -> LinkAnalysis:
        return self.links[number - 1]

    @property
    def stable_fraction(self) -> float:
        if not self.stability:
            return 0.0
        return sum(v.stable for v in self.stability.values()) / len(self.stability)


def load_round_paths(log: RecordLog, table: PrefixTable, diagnostics: Diagnostics) -> list:
    out = []
    for n, rec in enumerate(log.read(diagnostics)):
        if rec.get("kind") != "result":
            continue
        try:
            path = ingest(rec["result"])
        except SchemaError as exc:
            diagnostics.emit("SCHEMA_ERROR", f"record {n}: {exc}")
            continue
        out.append((rec["round"], annotate(path, table, diagnostics)))
    return out


def _analyze_links(case, round_paths, rounds, params, bin_width, diagnostics):
    series = extract_series(round_paths, case, rounds, diagnostics)
    stability = stability_report(path_rounds(round_paths, case) or [(0, {})])
    links = []
    for number, (link, s) in enumerate(series.items(), 1):
        try:
            events = detect_changes(s, params)
        except InsufficientData as exc:
            diagnostics.emit("INSUFFICIENT_DATA", f"link {number}: {exc}")
            events = []
        hist = {t: delay_histogram(s, t, bin_width) for t in sorted(s.by_time_point())}
        mine = [v for v in stability.values() if link in v.links]
        links.append(LinkAnalysis(number, s, percentile_bands(s), events, hist,
                                  len(mine), sum(v.stable for v in mine)))
    return links, stability


def _link_identity(link: BorderLink):
    return (link.nearside_ip, link.farside_ip, link.nearside_asn, link.farside_asn,
            link.crosses_ixp)


def adopt_known_links(round_paths: list, known) -> list:
    """Swap observed links for the matching configured ones, which carry bandwidth."""
    by_id = {_link_identity(l): l for l in known}
    if not by_id:
        return round_paths
    out = []
    for rnd, ap in round_paths:
        links = tuple((i, by_id.get(_link_identity(l), l)) for i, l in ap.border_links)
        if links != ap.border_links:
            ap = AnnotatedPath(ap.path, ap.hop_asns, links)
        out.append((rnd, ap))
    return out


def analyze_case(case: MBGPCase, round_paths: list, rounds: int,
                 params: ChangeParams = ChangeParams(), bin_width: float = 10.0,
                 control_paths: Optional[list] = None, control_prefix: Optional[str] = None,
                 diagnostics: Optional[Diagnostics] = None) -> CaseAnalysis:
    diagnostics = sink(diagnostics)
    round_paths = adopt_known_links(round_paths, case.border_links)
    match = match_case_links([ap for _, ap in round_paths], case, diagnostics)
    links, stability = _analyze_links(case, round_paths, rounds, params, bin_width,
                                      diagnostics)
    isolation = []
    for a, b in combinations(links, 2):
        isolation += compare_links(a.series, b.series, a.events, b.events)
    control = []
    if control_paths and control_prefix:
        ctl_case = MBGPCase(case.nearside_asn, case.nearside_router, case.farside_asn,
                            control_prefix)
        control_paths = adopt_known_links(control_paths, case.border_links)
        control, _ = _analyze_links(ctl_case, control_paths, rounds, params, bin_width,
                                    diagnostics)
    result = CaseAnalysis(case.with_links(match.links), rounds, links, stability,
                          isolation, control, diagnostics)
    return result


def analyze_store(store: Store, key: str, table: Optional[PrefixTable] = None,
                  params: ChangeParams = ChangeParams(), bin_width: float = 10.0,
                  diagnostics: Optional[Diagnostics] = None) -> CaseAnalysis:
    """Analyse a persisted campaign; the prefix table defaults to the stored one."""
    diagnostics = sink(diagnostics)
    case = store.read_case(key)
    plan = ProbePlan.from_dict(store.read_json(key, "plan"))
    if table is None:
        table = load_prefix_table(store.case_dir(key) / "prefixes.tsv",
                                  store.case_dir(key) / "ixp.txt", diagnostics)
    round_paths = load_round_paths(store.results(key), table, diagnostics)
    control_log = RecordLog(store.case_dir(key) / "control.log")
    control = load_round_paths(control_log, table, diagnostics) if plan.control_prefix else []
    return analyze_case(case, round_paths, plan.rounds, params, bin_width, control,
                        plan.control_prefix, diagnostics)


def load_prefix_table(prefixes, ixp=None, diagnostics=None) -> PrefixTable:
    prefixes = Path(prefixes)
    if not prefixes.exists():
        raise FileNotFoundError(f"prefix table {prefixes} not found")
    records = read_prefix_records(prefixes.read_text().splitlines())
    ixp_list = read_ixp_list(Path(ixp).read_text().splitlines()) \
        if ixp is not None and Path(ixp).exists() else []
    return build_prefix_table(records, ixp_list, diagnostics)


def _link_record(kind, key, la: LinkAnalysis, params, bin_width) -> dict:
    link: BorderLink = la.series.link
    return {
        "type": kind,
        "case": key,
        "link_number": la.number,
        "link": link.to_dict(),
        "bands": [b.to_dict() for b in la.bands],
        "events": [e.to_dict() for e in la.events],
        "histograms": {str(t): [[edge, count] for edge, count in bins]
                       for t, bins in la.histograms.items()},
        "bin_width_ms": bin_width,
        "stability": {"destinations": la.destinations, "stable": la.stable},
        "negative_fraction": la.series.negative_fraction,
        "samples": len(la.series.samples),
        "change_params": params.to_dict(),
    }


def analysis_records(result: CaseAnalysis, params: ChangeParams, bin_width: float) -> list:
    key = result.case.key
    records = [_link_record("link", key, la, params, bin_width) for la in result.links]
    records.append({
        "type": "stability",
        "case": key,
        "destinations": len(result.stability),
        "stable": sum(v.stable for v in result.stability.values()),
        "unstable": {str(ip): v.to_dict() for ip, v in result.stability.items()
                     if not v.stable},
    })
    records.append({"type": "isolation", "case": key,
                    "entries": [e.to_dict() for e in result.isolation]})
    records += [_link_record("control_link", key, la, params, bin_width)
                for la in result.control]
    return records


def header_record() -> dict:
    now = _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0)
    return {"type": "header", "tool": "mbgp", "version": __version__,
            "generated_at": now.isoformat()}


def write_analysis(result: CaseAnalysis, out_dir, params: ChangeParams, bin_width: float,
                   csv_tables: bool = True) -> Path:
    """Write ``records.jsonl`` (header line first) and per-link band CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "records.jsonl"
    lines = [dumps(header_record())] + [dumps(r) for r in
                                       analysis_records(result, params, bin_width)]
    path.write_text("\n".join(lines) + "\n")
    if csv_tables:
        for prefix, group in (("link", result.links), ("control_link", result.control)):
            for la in group:
                write_band_csv(out_dir / f"{prefix}{la.number}_bands.csv", la.bands)
    return path


def write_band_csv(path, bands) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_point", "p25", "p50", "p75", "sample_count"])
        for b in bands:
            w.writerow([b.time_point, "" if b.p25 is None else repr(b.p25),
                        "" if b.p50 is None else repr(b.p50),
                        "" if b.p75 is None else repr(b.p75), b.sample_count])


def summary_lines(result: CaseAnalysis) -> list:
    lines = []
    for la in result.links:
        events = ", ".join(f"{e.kind.value}@{e.time_point}(+{e.magnitude_ms:.1f}ms)"
                           for e in la.events) or "no events"
        lines.append(f"link {la.number} {la.series.link.label}: "
                     f"{la.destinations} destinations, {la.stable} stable, {events}")
    for e in result.isolation:
        lines.append(f"{e.event.kind.value}@{e.event.time_point} on {e.link.label}: "
                     f"{e.verdict.value}")
    lines.append(f"stability: {sum(v.stable for v in result.stability.values())}/"
                 f"{len(result.stability)} destinations stable")
    return lines
