"""Measurement campaign planning and execution.

A campaign probes the first host addresses of a destination prefix once per
round.  Probes go through a client object exposing ``traceroute(target,
round_no) -> result document``; :class:`FixtureClient` replays recorded
results, :class:`AtlasClient` talks to an Atlas-compatible REST service.
"""

from __future__ import annotations

import json
import os
import threading
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .diagnostics import Diagnostics, sink
from .model import MBGPCase, as_ip, as_prefix
from .store import Store, gap_record, result_record


class PrefixTooSmall(ValueError):
    pass


class PlanError(ValueError):
    pass


class AuthError(RuntimeError):
    pass


class QuotaExceeded(RuntimeError):
    pass


class ProbeFailed(RuntimeError):
    """A single probe produced no result; recorded as a gap."""


class ProbeTimeout(ProbeFailed):
    pass


@dataclass(frozen=True)
class PlanConfig:
    max_targets: int = 100
    interval_s: int = 900
    rounds: int = 96
    control_prefix: Optional[str] = None
    platform_limit: int = 100


@dataclass(frozen=True)
class ProbePlan:
    case_id: str
    targets: tuple
    interval_s: int = 900
    rounds: int = 96
    control_prefix: Optional[str] = None
    platform_limit: int = 100

    def validate(self) -> "ProbePlan":
        if self.rounds < 1:
            raise PlanError(f"plan has {self.rounds} rounds")
        if self.interval_s < 60:
            raise PlanError(f"interval {self.interval_s}s is below 60s")
        if not self.targets:
            raise PlanError("plan has no targets")
        if len(self.targets) > self.platform_limit:
            raise PlanError(f"{len(self.targets)} targets exceed the platform limit "
                            f"of {self.platform_limit}")
        return self

    @property
    def probe_count(self) -> int:
        return self.rounds * len(self.targets)

    def to_dict(self) -> dict:
        return {"case_id": self.case_id, "targets": [str(t) for t in self.targets],
                "interval_s": self.interval_s, "rounds": self.rounds,
                "control_prefix": self.control_prefix,
                "platform_limit": self.platform_limit}

    @classmethod
    def from_dict(cls, d: dict) -> "ProbePlan":
        return cls(d["case_id"], tuple(as_ip(t) for t in d["targets"]), d["interval_s"],
                   d["rounds"], d.get("control_prefix"), d.get("platform_limit", 100))


def plan(case: MBGPCase, config: PlanConfig = PlanConfig()) -> ProbePlan:
    """Probe the first ``max_targets`` host addresses from network + 1, every round."""
    prefix = as_prefix(case.destination_prefix)
    if prefix.num_addresses == 1:
        targets = (prefix.network_address,)
    else:
        usable = prefix.num_addresses - 2
        if usable < 1:
            raise PrefixTooSmall(f"{prefix} has no usable host addresses")
        targets = tuple(prefix.network_address + 1 + i
                        for i in range(min(config.max_targets, usable)))
    return ProbePlan(case.key, targets, config.interval_s, config.rounds,
                     config.control_prefix, config.platform_limit).validate()


class FixtureClient:
    """Offline client replaying ``{"round", "target", "result"}`` JSON lines."""

    realtime = False
    max_in_flight = 8
    min_interval_s = 0.0

    def __init__(self, source=None):
        self.results: dict = {}
        paths = []
        if source is not None:
            source = Path(source)
            paths = sorted(source.glob("*.jsonl")) + sorted(source.glob("*.log")) \
                if source.is_dir() else [source]
        for path in paths:
            for line in path.read_text().splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec.get("kind", "result") == "result":
                    self.results[(str(as_ip(rec["target"])), rec["round"])] = rec["result"]

    def traceroute(self, target, round_no: int) -> dict:
        try:
            return self.results[(str(target), round_no)]
        except KeyError:
            raise ProbeFailed(f"no recorded result for {target} round {round_no}") from None


class AtlasClient:
    """Client for an Atlas-compatible REST API.

    ``POST {base}/measurements`` creates a one-off traceroute and
    ``GET {base}/measurements/{id}/results`` is polled until it returns a
    result.  The API key is read from the environment variable named by
    ``key_env`` and is only ever sent in the ``Authorization`` header.
    """

    realtime = True

    def __init__(self, base_url: str, probe_asn: Optional[int] = None,
                 key_env: str = "MBGP_ATLAS_KEY", max_in_flight: int = 4,
                 min_interval_s: float = 2.0, poll_interval_s: float = 10.0,
                 timeout_s: float = 600.0):
        self.base_url = base_url.rstrip("/")
        self.probe_asn = probe_asn
        self.key_env = key_env
        self.max_in_flight = max_in_flight
        self.min_interval_s = min_interval_s
        self.poll_interval_s = poll_interval_s
        self.timeout_s = timeout_s

    def _request(self, method: str, path: str, body=None):
        import urllib.error
        import urllib.request

        key = os.environ.get(self.key_env)
        if not key:
            raise AuthError(f"environment variable {self.key_env} is not set")
        data = None if body is None else json.dumps(body).encode()
        req = urllib.request.Request(self.base_url + path, data=data, method=method,
                                     headers={"Authorization": f"Key {key}",
                                              "Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=60) as resp:
                return json.loads(resp.read() or b"null")
        except urllib.error.HTTPError as exc:
            if exc.code in (401, 403):
                raise AuthError(f"{method} {path}: HTTP {exc.code}") from None
            if exc.code in (402, 429):
                raise QuotaExceeded(f"{method} {path}: HTTP {exc.code}") from None
            raise ProbeFailed(f"{method} {path}: HTTP {exc.code}") from None
        except (urllib.error.URLError, OSError) as exc:
            raise ProbeFailed(f"{method} {path}: {exc}") from None

    def traceroute(self, target, round_no: int) -> dict:
        target = as_ip(target)
        definition = {"type": "traceroute", "af": target.version, "target": str(target),
                      "protocol": "ICMP", "paris": 16,
                      "description": f"mbgp round {round_no}"}
        body = {"definitions": [definition], "is_oneoff": True}
        if self.probe_asn is not None:
            body["probes"] = [{"type": "asn", "value": self.probe_asn, "requested": 1}]
        created = self._request("POST", "/measurements", body)
        try:
            msm_id = created["measurements"][0]
        except (TypeError, KeyError, IndexError):
            raise ProbeFailed(f"unexpected create response {created!r}") from None
        deadline = time.monotonic() + self.timeout_s
        while True:
            results = self._request("GET", f"/measurements/{msm_id}/results")
            if results:
                return results[0]
            if time.monotonic() >= deadline:
                raise ProbeTimeout(f"measurement {msm_id} for {target} timed out")
            time.sleep(self.poll_interval_s)


class _RateLimiter:
    def __init__(self, min_interval_s: float, clock, sleep):
        self.min_interval_s = min_interval_s
        self.clock, self.sleep = clock, sleep
        self.lock = threading.Lock()
        self.next_at = 0.0

    def acquire(self):
        if self.min_interval_s <= 0:
            return
        with self.lock:
            now = self.clock()
            at = max(now, self.next_at)
            self.next_at = at + self.min_interval_s
        if at > now:
            self.sleep(at - now)


@dataclass
class Campaign:
    case_id: str
    expected: int
    results: int = 0
    gaps: list = field(default_factory=list)
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    @property
    def complete(self) -> bool:
        return self.results + len(self.gaps) == self.expected


def execute(plan: ProbePlan, client, store: Store, max_in_flight: Optional[int] = None,
            min_interval_s: Optional[float] = None, clock=time.monotonic, sleep=time.sleep,
            diagnostics: Optional[Diagnostics] = None) -> Campaign:
    """Run every (target, round) probe of ``plan`` and stream results to the store.

    Per-probe failures become gap records.  :class:`AuthError` and
    :class:`QuotaExceeded` abort the campaign.  Realtime clients are paced so
    round ``r`` starts ``r * interval_s`` seconds after the first.
    """
    plan.validate()
    diagnostics = sink(diagnostics)
    in_flight = max_in_flight or getattr(client, "max_in_flight", 4)
    interval = getattr(client, "min_interval_s", 2.0) if min_interval_s is None else min_interval_s
    limiter = _RateLimiter(interval, clock, sleep)
    log = store.results(plan.case_id)
    campaign = Campaign(plan.case_id, plan.probe_count, diagnostics=diagnostics)

    def probe(target, round_no):
        limiter.acquire()
        return client.traceroute(target, round_no)

    started = clock()
    with ThreadPoolExecutor(max_workers=in_flight) as pool, log.writer() as out:
        for round_no in range(plan.rounds):
            if getattr(client, "realtime", False):
                delay = started + round_no * plan.interval_s - clock()
                if delay > 0:
                    sleep(delay)
            pending = {pool.submit(probe, t, round_no): t for t in plan.targets}
            while pending:
                done, _ = wait(pending, return_when=FIRST_COMPLETED)
                for fut in done:
                    target = pending.pop(fut)
                    try:
                        doc = fut.result()
                    except (AuthError, QuotaExceeded):
                        for other in pending:
                            other.cancel()
                        raise
                    except ProbeFailed as exc:
                        campaign.gaps.append((target, round_no))
                        out.write(gap_record(round_no, target, str(exc)))
                        continue
                    campaign.results += 1
                    out.write(result_record(round_no, target, doc))
    if campaign.gaps:
        diagnostics.emit("GAPS", f"{len(campaign.gaps)} of {campaign.expected} probes "
                         "produced no result")
    return campaign
