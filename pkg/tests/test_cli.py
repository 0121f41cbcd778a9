import json
import shutil

import pytest

from mbgp import lgparse
from mbgp.cli import EXIT_FATAL, EXIT_OK, EXIT_PARTIAL, main
from mbgp.store import Store

from conftest import SCENARIOS


def test_infer_fixture_tree(fixtures_dir, tmp_path, capsys):
    assert main(["infer", "--fixtures", str(fixtures_dir / "lg"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == lgparse.CENSUS_HEADER
    assert out[1] == "6939 | 2 | 2/5 | 1/1"
    assert out[-1] == "2 cases on 1 routers"
    cases = [json.loads(l) for l in (tmp_path / "cases.jsonl").read_text().splitlines()]
    assert sorted((c["farside_asn"], c["destination_prefix"]) for c in cases) == [
        (64500, "203.0.113.0/24"), (64510, "100.64.1.0/24")]
    assert (tmp_path / "census.txt").read_text().splitlines()[1] == out[1]


def test_infer_single_router_dir(fixtures_dir, capsys):
    d = fixtures_dir / "lg" / "core2.fra1.he.net"
    assert main(["infer", "--fixtures", str(d)]) == EXIT_FATAL
    assert main(["infer", "--fixtures", str(d), "--router", "core2.fra1.he.net"]) == EXIT_OK
    assert "2 cases on 1 routers" in capsys.readouterr().out


def test_infer_simulated_routers(tmp_path, capsys):
    lg = tmp_path / "lg"
    for name in ("case2.toml", "case3.toml", "calm.toml"):
        assert main(["simulate", "--scenario", str(SCENARIOS / name),
                     "--store", str(tmp_path / "store"), "--lg-out", str(lg)]) == 0
    capsys.readouterr()
    assert main(["infer", "--fixtures", str(lg)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[-1] == "3 cases on 3 routers"


def test_infer_empty_and_missing(tmp_path, capsys):
    assert main(["infer", "--fixtures", str(tmp_path)]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[-1] == "0 cases on 0 routers"
    assert main(["infer", "--fixtures", str(tmp_path / "nope")]) == EXIT_FATAL
    assert main(["infer"]) == EXIT_FATAL


def _plan(store, *extra):
    return main(["plan", "--store", str(store), "--nearside-asn", "6939", "--router", "r1",
                 "--farside-asn", "64500", "--prefix", "203.0.113.0/24", *extra])


def test_plan_and_offline_run_without_fixtures(tmp_path, capsys):
    store = tmp_path / "store"
    assert _plan(store) == 0
    assert "100 targets x 96 rounds = 9600 probes every 900 s" in capsys.readouterr().out
    assert main(["run", "--store", str(store), "--offline"]) == EXIT_PARTIAL
    assert "coverage 0/9600, gaps 9600" in capsys.readouterr().out
    key = Store(store).cases()[0]
    assert len(Store(store).results(key).read()) == 9600


def test_run_replays_recorded_results(case2_run, tmp_path, capsys):
    src, _ = case2_run
    store = tmp_path / "store"
    shutil.copytree(src, store)
    key = Store(store).cases()[0]
    recorded = Store(store).results(key).path
    replay = tmp_path / "replay.log"
    shutil.copy(recorded, replay)
    assert main(["run", "--store", str(store), "--offline", str(replay)]) == EXIT_OK
    assert "coverage 9600/9600, gaps 0" in capsys.readouterr().out
    assert main(["run", "--store", str(store), "--offline", str(tmp_path / "none")]) \
        == EXIT_FATAL


def test_plan_errors(tmp_path):
    assert main(["plan", "--store", str(tmp_path)]) == EXIT_FATAL
    assert _plan(tmp_path, "--interval", "30") == EXIT_FATAL
    assert main(["run", "--store", str(tmp_path / "empty"), "--offline"]) == EXIT_FATAL


def test_ingest_counts_rejects(fixtures_dir, tmp_path, capsys):
    store = tmp_path / "store"
    assert main(["plan", "--store", str(store), "--nearside-asn", "1", "--router", "r",
                 "--farside-asn", "2", "--prefix", "203.0.113.0/24", "--rounds", "4"]) == 0
    doc = json.loads((fixtures_dir / "atlas_result_1.json").read_text())
    late = dict(doc, timestamp=doc["timestamp"] + 10 * 900)
    broken = {k: v for k, v in doc.items() if k != "dst_addr"}
    (tmp_path / "in.jsonl").write_text("".join(json.dumps(d) + "\n" for d in (doc, late, broken)))
    assert main(["ingest", "--store", str(store), "--input", str(tmp_path / "in.jsonl")]) \
        == EXIT_PARTIAL
    assert "1 results stored, 2 rejected" in capsys.readouterr().out
    (tmp_path / "ok.json").write_text(json.dumps([doc]))
    assert main(["ingest", "--store", str(store), "--input", str(tmp_path / "ok.json")]) == 0


def test_analyze_csv_and_plot(case2_run, tmp_path, capsys):
    src, _ = case2_run
    store = tmp_path / "store"
    shutil.copytree(src, store)
    assert main(["analyze", "--store", str(store), "--csv", "--plot"]) == 0
    out = capsys.readouterr().out
    assert "SPIKE@12" in out and "ISOLATED" in out
    analysis = Store(store).analysis_dir(Store(store).cases()[0])
    header = (analysis / "link1_bands.csv").read_text().splitlines()[0]
    assert header == "time_point,p25,p50,p75,sample_count"
    for name in ("bands.png", "histograms.png"):
        data = (analysis / "figures" / name).read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"


def test_analyze_missing_case(tmp_path):
    assert main(["analyze", "--store", str(tmp_path)]) == EXIT_FATAL
    assert main(["analyze", "--store", str(tmp_path), "--case", "1|r|2|10.0.0.0/8"]) \
        == EXIT_FATAL


def test_config_file_then_flags(tmp_path, capsys):
    cfg = tmp_path / "mbgp.toml"
    cfg.write_text("[plan]\nrounds = 5\ntargets = 10\n")
    store = tmp_path / "store"
    assert _plan(store, "--targets", "20") == 0 and "x 96 rounds" in capsys.readouterr().out
    assert main(["--config", str(cfg), "plan", "--store", str(store), "--nearside-asn", "6939",
                 "--router", "r1", "--farside-asn", "64500", "--prefix", "203.0.113.0/24",
                 "--targets", "20"]) == 0
    assert "20 targets x 5 rounds = 100 probes" in capsys.readouterr().out


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as err:
        main(["nope"])
    assert err.value.code == 2
