"""Append-only campaign store.

Layout under the store root::

    <case dir>/case.json        the MBGPCase
    <case dir>/plan             the ProbePlan (JSON)
    <case dir>/results.log      one JSON record per probe result or gap
    <case dir>/analysis/...     analysis output

The case directory name is the case key with ``/`` percent-encoded.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Optional
from urllib.parse import quote, unquote

from .diagnostics import Diagnostics, sink
from .model import MBGPCase, decode, encode


class CorruptStore(ValueError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: bad record at byte {offset}: {message}")
        self.path = path
        self.offset = offset


class MissingCampaign(LookupError):
    pass


def dumps(record) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class RecordLog:
    """Line-delimited JSON records, appended and flushed one at a time."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, record: dict) -> None:
        with self.writer() as w:
            w.write(record)

    def extend(self, records: Iterable[dict]) -> int:
        n = 0
        with self.writer() as w:
            for record in records:
                w.write(record)
                n += 1
        return n

    def writer(self) -> "_Writer":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        return _Writer(open(self.path, "a", encoding="utf-8"))

    def read(self, diagnostics: Optional[Diagnostics] = None) -> list:
        """All complete records.

        Bytes after the final newline are a partially written record: they are
        dropped with a ``TRUNCATED_RECORD`` warning.  Any other undecodable
        line raises :class:`CorruptStore`.
        """
        diagnostics = sink(diagnostics)
        if not self.path.exists():
            return []
        lines = self.path.read_bytes().split(b"\n")
        tail = lines.pop()
        records, offset = [], 0
        for line in lines:
            if line.strip():
                try:
                    records.append(json.loads(line))
                except ValueError as exc:
                    raise CorruptStore(self.path, offset, str(exc)) from None
            offset += len(line) + 1
        if tail:
            diagnostics.emit("TRUNCATED_RECORD", f"{self.path}: dropped {len(tail)} bytes "
                             "of a partially written record", offset=offset)
        return records


class _Writer:
    """Single-writer handle; every record is flushed as soon as it is written."""

    def __init__(self, fh):
        self.fh = fh

    def write(self, record: dict) -> None:
        self.fh.write(dumps(record) + "\n")
        self.fh.flush()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        os.fsync(self.fh.fileno())
        self.fh.close()


def save_objects(path, objects: Iterable) -> int:
    return RecordLog(path).extend(encode(o) for o in objects)


def load_objects(path, diagnostics: Optional[Diagnostics] = None) -> list:
    log = RecordLog(path)
    out = []
    for n, record in enumerate(log.read(diagnostics)):
        try:
            out.append(decode(record))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptStore(log.path, n, f"record {n}: {exc}") from None
    return out


def case_dirname(key: str) -> str:
    return quote(key, safe="|.:")


class Store:
    def __init__(self, root):
        self.root = Path(root)

    def case_dir(self, key: str) -> Path:
        return self.root / case_dirname(key)

    def cases(self) -> list:
        if not self.root.is_dir():
            return []
        return sorted(unquote(p.name) for p in self.root.iterdir()
                      if (p / "case.json").exists())

    def write_case(self, case: MBGPCase) -> Path:
        d = self.case_dir(case.key)
        d.mkdir(parents=True, exist_ok=True)
        (d / "case.json").write_text(dumps(case.to_dict()) + "\n")
        return d

    def read_case(self, key: str) -> MBGPCase:
        path = self.case_dir(key) / "case.json"
        if not path.exists():
            raise MissingCampaign(f"no case {key!r} under {self.root}")
        return MBGPCase.from_dict(json.loads(path.read_text()))

    def write_json(self, key: str, name: str, value) -> Path:
        path = self.case_dir(key) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(value) + "\n")
        return path

    def read_json(self, key: str, name: str):
        path = self.case_dir(key) / name
        if not path.exists():
            raise MissingCampaign(f"{path} not found")
        return json.loads(path.read_text())

    def results(self, key: str) -> RecordLog:
        return RecordLog(self.case_dir(key) / "results.log")

    def analysis_dir(self, key: str) -> Path:
        d = self.case_dir(key) / "analysis"
        d.mkdir(parents=True, exist_ok=True)
        return d


def result_record(round_no: int, target, document: dict) -> dict:
    return {"kind": "result", "round": round_no, "target": str(target), "result": document}


def gap_record(round_no: int, target, error: str) -> dict:
    return {"kind": "gap", "round": round_no, "target": str(target), "error": error}
