"""Command line entry point: ``mbgp <command> ...``.

Exit status is 0 on success, 1 on a fatal input error and 2 when a run
finished with gaps.  ``--config FILE`` (TOML) supplies per-command defaults
from a ``[command]`` table; explicit flags override it.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import lgparse, orchestrate, report, simnet
from .delaylab import ChangeParams
from .diagnostics import Diagnostics
from .model import MBGPCase, as_prefix
from .store import MissingCampaign, RecordLog, Store, dumps, result_record
from .tracemap import SchemaError, ingest as ingest_result, to_document

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2

DEFAULTS = {
    "analyze": {"bin_width": 10.0, "change_params": ""},
    "plan": {"targets": 100, "interval": 900, "rounds": 96},
    "run": {"max_in_flight": None},
}


class Fatal(Exception):
    pass


def _pick_case(store: Store, key):
    if key:
        return key
    cases = store.cases()
    if len(cases) != 1:
        raise Fatal(f"--case is required: store holds {len(cases)} cases")
    return cases[0]


def cmd_simulate(args) -> int:
    scenario = simnet.load_scenario(args.scenario)
    paths, truth = simnet.generate(scenario)
    store = Store(args.store)
    key = truth.case.key
    d = store.write_case(truth.case)
    config = orchestrate.PlanConfig(max_targets=scenario.ip_count,
                                    interval_s=scenario.interval_s, rounds=scenario.rounds,
                                    control_prefix=scenario.control.prefix
                                    if scenario.control else None,
                                    platform_limit=max(100, scenario.ip_count))
    plan = orchestrate.plan(truth.case, config)
    store.write_json(key, "plan", plan.to_dict())
    store.write_json(key, "ground_truth.json", truth.to_dict())
    (d / "prefixes.tsv").write_text("".join(f"{p}\t{a}\n" for p, a in truth.prefix_records))
    (d / "ixp.txt").write_text("".join(f"{p}\n" for p in truth.ixp_prefixes))
    for name, items in (("results.log", paths), ("control.log", simnet.generate_control(scenario))):
        (d / name).unlink(missing_ok=True)
        rounds = [(p.timestamp - scenario.start_time) // scenario.interval_s for p in items]
        RecordLog(d / name).extend(result_record(r, p.destination_ip, to_document(p))
                                   for r, p in zip(rounds, items))
    fixture = simnet.emit_lg_fixture(scenario)
    lg_root = Path(args.lg_out) if args.lg_out else d / "lg"
    lg_dir = lg_root / scenario.router
    if lg_dir.exists():
        shutil.rmtree(lg_dir)
    lgparse.write_fixture(lg_dir, fixture.responses)
    (lg_dir / "peer_prefixes.tsv").write_text(
        "".join(f"{asn}\t{p}\n" for asn, ps in fixture.peer_prefixes.items() for p in ps))
    print(f"simulated {len(paths)} results for {key} "
          f"({len(scenario.links)} links, {scenario.rounds} rounds)")
    return EXIT_OK


def _case_from_args(args) -> MBGPCase:
    if args.case_file:
        return MBGPCase.from_dict(json.loads(Path(args.case_file).read_text()))
    missing = [f for f in ("nearside_asn", "router", "farside_asn", "prefix")
               if getattr(args, f) is None]
    if missing:
        raise Fatal("plan needs --case-file or all of --nearside-asn --router "
                    "--farside-asn --prefix")
    return MBGPCase(args.nearside_asn, args.router, args.farside_asn, args.prefix)


def cmd_plan(args) -> int:
    case = _case_from_args(args)
    config = orchestrate.PlanConfig(max_targets=args.targets, interval_s=args.interval,
                                    rounds=args.rounds, control_prefix=args.control_prefix,
                                    platform_limit=max(100, args.targets))
    plan = orchestrate.plan(case, config)
    store = Store(args.store)
    store.write_case(case)
    store.write_json(case.key, "plan", plan.to_dict())
    print(f"plan {case.key}: {len(plan.targets)} targets x {plan.rounds} rounds = "
          f"{plan.probe_count} probes every {plan.interval_s} s")
    return EXIT_OK


def cmd_run(args) -> int:
    store = Store(args.store)
    key = _pick_case(store, args.case)
    plan = orchestrate.ProbePlan.from_dict(store.read_json(key, "plan"))
    if args.live:
        client = orchestrate.AtlasClient(args.live, probe_asn=args.probe_asn)
    else:
        source = Path(args.offline) if args.offline else None
        if source is not None and not source.exists():
            raise Fatal(f"fixture source {source} not found")
        client = orchestrate.FixtureClient(source)
    store.results(key).path.unlink(missing_ok=True)
    campaign = orchestrate.execute(plan, client, store, max_in_flight=args.max_in_flight)
    print(f"run {key}: coverage {campaign.results}/{campaign.expected}, "
          f"gaps {len(campaign.gaps)}")
    return EXIT_PARTIAL if campaign.gaps else EXIT_OK


def _read_documents(path: Path) -> list:
    text = path.read_text().strip()
    if not text:
        return []
    if text.startswith("["):
        return json.loads(text)
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def cmd_ingest(args) -> int:
    store = Store(args.store)
    key = _pick_case(store, args.case)
    plan = orchestrate.ProbePlan.from_dict(store.read_json(key, "plan"))
    docs = _read_documents(Path(args.input))
    good, bad = [], 0
    for n, doc in enumerate(docs):
        try:
            good.append((ingest_result(doc), doc))
        except SchemaError as exc:
            print(f"record {n}: {exc}", file=sys.stderr)
            bad += 1
    start = args.start if args.start is not None else min(
        (p.timestamp for p, _ in good), default=0)
    records = []
    for path, doc in good:
        rnd = (path.timestamp - start) // plan.interval_s
        if 0 <= rnd < plan.rounds:
            records.append(result_record(rnd, path.destination_ip, doc))
        else:
            bad += 1
    RecordLog(store.results(key).path).extend(records)
    print(f"ingest {key}: {len(records)} results stored, {bad} rejected")
    return EXIT_PARTIAL if bad else EXIT_OK


def cmd_analyze(args) -> int:
    store = Store(args.store)
    key = _pick_case(store, args.case)
    params = ChangeParams.parse(args.change_params or "")
    table = None
    if args.prefix_table:
        table = report.load_prefix_table(args.prefix_table, args.ixp)
    diagnostics = Diagnostics()
    result = report.analyze_store(store, key, table, params, args.bin_width, diagnostics)
    out = store.analysis_dir(key)
    report.write_analysis(result, out, params, args.bin_width, csv_tables=args.csv)
    if args.plot:
        from . import plots
        plots.render(result, out / "figures", args.bin_width)
    for line in report.summary_lines(result):
        print(line)
    return EXIT_OK


def _read_peer_prefixes(path: Path) -> dict:
    out: dict = {}
    for line in path.read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            asn, prefix = line.split()
            out.setdefault(int(asn), []).append(prefix)
    return out


def cmd_infer(args) -> int:
    peer_prefixes = _read_peer_prefixes(Path(args.prefixes)) if args.prefixes else None
    routers = []
    if args.live:
        if not args.router:
            raise Fatal("--live needs --router")
        routers.append((args.router, lgparse.HttpQuery(args.live), peer_prefixes or {}))
    elif args.fixtures:
        root = Path(args.fixtures)
        if not root.is_dir():
            raise Fatal(f"fixture directory {root} not found")
        if (root / "manifest.tsv").exists():
            if not args.router:
                raise Fatal("a single-router fixture directory needs --router")
            dirs = [(args.router, root)]
        else:
            dirs = [(p.name, p) for p in sorted(root.iterdir())
                    if (p / "manifest.tsv").exists()
                    and (args.router is None or p.name == args.router)]
        for name, d in dirs:
            prefixes = peer_prefixes
            if prefixes is None:
                own = d / "peer_prefixes.tsv"
                prefixes = _read_peer_prefixes(own) if own.exists() else {}
            routers.append((name, lgparse.FixtureQuery(d), prefixes))
    else:
        raise Fatal("one of --fixtures or --live is required")

    runs = []
    for name, query, prefixes in routers:
        runs.append(lgparse.run_inference(name, query, prefixes,
                                          nearside_asn=args.nearside_asn,
                                          strict_six=args.strict_six))
    rows = lgparse.census(runs)
    cases = [c for r in runs for c in r.cases]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "cases.jsonl").write_text("".join(dumps(c.to_dict()) + "\n" for c in cases))
        (out / "census.jsonl").write_text("".join(dumps(r.to_dict()) + "\n" for r in rows))
        (out / "census.txt").write_text(
            "\n".join([lgparse.CENSUS_HEADER] + [r.format() for r in rows]) + "\n")
    print(lgparse.CENSUS_HEADER)
    for row in rows:
        print(row.format())
    print(f"{len(cases)} cases on {len(runs)} routers")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbgp", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="TOML file with per-command defaults")
    parser.add_argument("-v", "--verbose", action="store_true", help="log diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="infer M-BGP cases from Looking Glass output")
    p.add_argument("--router")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--fixtures", help="playback directory (one router, or one per subdir)")
    src.add_argument("--live", metavar="URL", help="LG proxy URL taking ?command=")
    p.add_argument("--prefixes", help="peer prefix list: 'asn<TAB>prefix' per line")
    p.add_argument("--nearside-asn", type=int)
    p.add_argument("--strict-six", action="store_true", default=None,
                   help="ignore weight when comparing tied routes")
    p.add_argument("--out")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("simulate", help="generate a ground-truth campaign from a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--store", default="store")
    p.add_argument("--lg-out", help="write the LG fixture under DIR/<router>/")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plan", help="plan a probing campaign for one case")
    p.add_argument("--store", default="store")
    p.add_argument("--case-file")
    p.add_argument("--nearside-asn", type=int)
    p.add_argument("--router")
    p.add_argument("--farside-asn", type=int)
    p.add_argument("--prefix")
    p.add_argument("--targets", type=int)
    p.add_argument("--interval", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--control-prefix")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="execute a planned campaign")
    p.add_argument("--store", default="store")
    p.add_argument("--case")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--offline", nargs="?", const="", metavar="FIXTURES",
                     help="replay recorded results (file or directory)")
    src.add_argument("--live", metavar="URL", help="Atlas-compatible API base URL")
    p.add_argument("--probe-asn", type=int)
    p.add_argument("--max-in-flight", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ingest", help="import traceroute results into a campaign")
    p.add_argument("--store", default="store")
    p.add_argument("--case")
    p.add_argument("--input", required=True, help="JSON array or JSON lines of results")
    p.add_argument("--start", type=int, help="timestamp of round 0 (default: earliest)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("analyze", help="delay bands, change events, stability, isolation")
    p.add_argument("--store", default="store")
    p.add_argument("--case")
    p.add_argument("--prefix-table")
    p.add_argument("--ixp")
    p.add_argument("--bin-width", type=float)
    p.add_argument("--change-params", help="e.g. window=8,persist=4,abs=5,k=3,statistic=p75")
    p.add_argument("--csv", action="store_true", default=None)
    p.add_argument("--plot", action="store_true", default=None,
                   help="also render figures under analysis/figures/")
    p.set_defaults(func=cmd_analyze)
    return parser


def _apply_config(args) -> None:
    config = {}
    if args.config:
        with open(args.config, "rb") as fh:
            config = tomllib.load(fh).get(args.command, {})
    merged = dict(DEFAULTS.get(args.command, {}))
    merged.update({k.replace("-", "_"): v for k, v in config.items()})
    for name, value in vars(args).items():
        if value is None and name in merged:
            setattr(args, name, merged[name])
    for flag in ("csv", "plot", "strict_six"):
        if getattr(args, flag, False) is None:
            setattr(args, flag, bool(merged.get(flag, False)))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(message)s")
    try:
        _apply_config(args)
        return args.func(args)
    except (Fatal, MissingCampaign, FileNotFoundError, ValueError, KeyError,
            orchestrate.AuthError, orchestrate.QuotaExceeded) as exc:
        print(f"mbgp {args.command}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
