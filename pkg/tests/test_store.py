import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbgp.diagnostics import Diagnostics
from mbgp.model import MBGPCase
from mbgp.store import (CorruptStore, MissingCampaign, RecordLog, Store, case_dirname,
                        load_objects, save_objects)

from test_model import any_value


def test_every_type_roundtrips_through_a_file(tmp_path):
    @settings(max_examples=60, deadline=None)
    @given(st.lists(any_value, max_size=5))
    def check(values):
        path = tmp_path / "objects.log"
        path.unlink(missing_ok=True)
        assert save_objects(path, values) == len(values)
        assert load_objects(path) == values

    check()


def test_truncation_drops_only_the_tail(tmp_path):
    log = RecordLog(tmp_path / "r.log")
    log.extend({"n": n} for n in range(5))
    with open(log.path, "a") as fh:
        fh.write('{"n": 5, "partial')
    diag = Diagnostics()
    assert log.read(diag) == [{"n": n} for n in range(5)]
    assert diag.codes() == ["TRUNCATED_RECORD"]
    # appending after a crash keeps earlier records readable
    assert RecordLog(tmp_path / "missing.log").read() == []


def test_corrupt_middle_record_raises(tmp_path):
    log = RecordLog(tmp_path / "r.log")
    log.append({"n": 0})
    with open(log.path, "a") as fh:
        fh.write("not json\n")
    log.append({"n": 2})
    with pytest.raises(CorruptStore) as err:
        log.read()
    assert err.value.offset == len('{"n":0}\n')


def test_load_objects_rejects_foreign_records(tmp_path):
    RecordLog(tmp_path / "r.log").append({"type": "Nope", "value": {}})
    with pytest.raises(CorruptStore):
        load_objects(tmp_path / "r.log")


def test_store_layout(tmp_path):
    store = Store(tmp_path)
    case = MBGPCase(6939, "core1.tor1.he.net", 19752, "198.51.100.0/24")
    d = store.write_case(case)
    assert d.name == "6939|core1.tor1.he.net|19752|198.51.100.0%2F24"
    assert case_dirname(MBGPCase(1, "r", 2, "2001:db8::/32").key) == "1|r|2|2001:db8::%2F32"
    assert store.cases() == [case.key]
    assert store.read_case(case.key) == case
    store.write_json(case.key, "plan", {"rounds": 3})
    assert store.read_json(case.key, "plan") == {"rounds": 3}
    with pytest.raises(MissingCampaign):
        store.read_case("1|x|2|10.0.0.0/8")
    with pytest.raises(MissingCampaign):
        store.read_json(case.key, "nothing")
    assert store.analysis_dir(case.key).is_dir()
    assert Store(tmp_path / "absent").cases() == []


def test_records_are_compact_and_sorted(tmp_path):
    log = RecordLog(tmp_path / "r.log")
    log.append({"b": 1, "a": [1, 2]})
    assert log.path.read_text() == '{"a":[1,2],"b":1}\n'
