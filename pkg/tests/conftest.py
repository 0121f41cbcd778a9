import time
from pathlib import Path

import pytest

from mbgp import simnet
from mbgp.cli import main

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = Path(__file__).resolve().parent / "fixtures"
SCENARIOS = ROOT / "scenarios"

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "ran": False})
    if rep.when == "call":
        entry["ran"] = True
    if rep.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {entry['title']}")


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


def _simulate_and_analyze(tmp_root: Path, scenario: str):
    store = tmp_root / "store"
    t0 = time.perf_counter()
    assert main(["simulate", "--scenario", str(SCENARIOS / scenario),
                 "--store", str(store)]) == 0
    assert main(["analyze", "--store", str(store)]) == 0
    elapsed = time.perf_counter() - t0
    return store, elapsed


@pytest.fixture(scope="session")
def case2_run(tmp_path_factory):
    """Simulated and analysed spike scenario: (store dir, seconds taken)."""
    return _simulate_and_analyze(tmp_path_factory.mktemp("case2"), "case2.toml")


@pytest.fixture(scope="session")
def case1_run(tmp_path_factory):
    return _simulate_and_analyze(tmp_path_factory.mktemp("case1"), "case1.toml")


@pytest.fixture(scope="session")
def case2_scenario():
    return simnet.load_scenario(SCENARIOS / "case2.toml")
