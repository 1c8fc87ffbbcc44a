"""Discovery and the gateway-driven pull protocol.

Every pull request carries two numbers: how many samples the gateway wants and
how many samples of the previous response it has durably stored.  Sensors
delete only what is acknowledged, so a lost response, a crashed gateway or a
failed write just means the same samples are served again; the sink drops the
duplicates by key.

The scheduler walks the ring of discovered sensors round-robin, staying on a
sensor while it returns full batches, but never pulling more than
``round_cap`` samples from one sensor per cycle.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol

from .durable_queue import DataSample, DurableQueue
from .errors import AckOverrun, RequestTimeout, SinkFailure, StorageFailure

log = logging.getLogger(__name__)

DISCOVERY_GROUP = "224.0.1.187"
DISCOVERY_PATH = "/.well-known/core"
DATA_PATH = "/air_quality"

CrashHook = Callable[[str], None]


@dataclass(frozen=True)
class SensorDescriptor:
    sensor_id: str
    address: str
    resources: tuple[str, ...]

    def __post_init__(self):
        if not self.sensor_id:
            raise ValueError("sensor_id must not be empty")
        if not self.resources:
            raise ValueError(f"sensor {self.sensor_id} advertises no resources")

    def to_link_format(self) -> str:
        """Capabilities in CoAP link-format, e.g. ``</small_particles>;rt="metric";if="dev-1"``."""
        return ",".join(f'</{r}>;rt="metric";if="{self.sensor_id}"' for r in self.resources)

    @classmethod
    def from_link_format(cls, address: str, text: str) -> "SensorDescriptor":
        resources, owners = [], set()
        for link in filter(None, (part.strip() for part in text.split(","))):
            m = _LINK.fullmatch(link)
            if m is None:
                raise ValueError(f"malformed link: {link!r}")
            attrs = dict(_ATTR.findall(m.group("attrs")))
            if attrs.get("rt") != "metric" or "if" not in attrs:
                raise ValueError(f"link lacks rt/if attributes: {link!r}")
            resources.append(m.group("target"))
            owners.add(attrs["if"])
        if len(owners) != 1:
            raise ValueError("links must name exactly one sensor")
        return cls(owners.pop(), address, tuple(resources))


_LINK = re.compile(r"</(?P<target>[^>/]+)>(?P<attrs>(;[a-z]+=\"[^\"]*\")*)")
_ATTR = re.compile(r';([a-z]+)="([^"]*)"')


@dataclass(frozen=True)
class PullRequest:
    want: int
    ack: int

    def __post_init__(self):
        if self.want < 1:
            raise ValueError("want must be at least 1")
        if self.ack < 0:
            raise ValueError("ack must not be negative")


@dataclass(frozen=True)
class PullResponse:
    samples: tuple[DataSample, ...] = ()
    remaining: int = 0
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def sensor_handle_pull(queue: DurableQueue, req: PullRequest, crash_hook: CrashHook | None = None) -> PullResponse:
    """Apply the piggybacked ack, then serve (without deleting) the oldest samples."""
    try:
        queue.ack(req.ack)
    except AckOverrun as exc:
        log.warning("rejecting pull: %s", exc)
        return PullResponse(remaining=len(queue), status="ack_overrun")
    if crash_hook:
        crash_hook("after_ack_applied")
    if len(queue) == 0:
        return PullResponse()
    served = tuple(s for _, s in queue.peek(req.want))
    return PullResponse(served, remaining=len(queue) - len(served))


# -- sinks ---------------------------------------------------------------------

CSV_COLUMNS = ("home_id", "sensor_id", "metric", "measured_at", "value")


class DedupSink:
    """Key-value store of samples; re-inserting a key is a counted no-op.

    With ``path`` set every newly stored sample is appended (and fsynced) to a
    JSON-lines file before :meth:`write` returns, and reloaded on construction.
    """

    def __init__(self, home_id: str, path: str | os.PathLike | None = None):
        self.home_id = home_id
        self.path = Path(path) if path else None
        self.store: dict[tuple[str, str, str, int], float] = {}
        self.available = True
        if self.path and self.path.exists():
            for line in self.path.read_text().splitlines():
                if line.strip():
                    row = json.loads(line)
                    self.store[(row[0], row[1], row[2], row[3])] = row[4]

    def key(self, s: DataSample) -> tuple[str, str, str, int]:
        return (self.home_id, s.sensor_id, s.metric, s.measured_at)

    def write(self, samples: Iterable[DataSample]) -> tuple[int, int]:
        if not self.available:
            raise SinkFailure("sink unreachable")
        fresh: dict[tuple[str, str, str, int], float] = {}
        duplicates = 0
        for s in samples:
            k = self.key(s)
            if k in self.store or k in fresh:
                duplicates += 1
            else:
                fresh[k] = s.value
        if fresh and self.path:
            try:
                with open(self.path, "a") as f:
                    for k, v in fresh.items():
                        f.write(json.dumps([*k, v]) + "\n")
                    f.flush()
                    os.fsync(f.fileno())
            except OSError as exc:
                raise SinkFailure(str(exc)) from exc
        self.store.update(fresh)
        return len(fresh), duplicates

    def __len__(self) -> int:
        return len(self.store)

    def rows(self) -> list[tuple[str, str, str, int, float]]:
        return sorted(((*k, v) for k, v in self.store.items()), key=lambda r: (r[1], r[2], r[3]))

    def export_csv(self) -> str:
        return rows_to_csv(self.rows())


def rows_to_csv(rows: Iterable[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for home, sensor, metric, ts, value in rows:
        w.writerow((home, sensor, metric, ts, repr(float(value))))
    return buf.getvalue()


def sink_write(sink: DedupSink, samples: Iterable[DataSample]) -> tuple[int, int]:
    return sink.write(samples)


class Store(Protocol):
    def write(self, samples: Iterable[DataSample]) -> object: ...


class QueueStore:
    """Gateway-side store: pulled samples go into the gateway's own durable queue."""

    def __init__(self, queue: DurableQueue):
        self.queue = queue

    def write(self, samples: Iterable[DataSample]) -> int:
        n = 0
        for s in samples:
            self.queue.push(s)
            n += 1
        return n


# -- scheduler -------------------------------------------------------------------


@dataclass
class PollOutcome:
    sensor_id: str
    request: PullRequest
    received: int = 0
    stored: bool = False
    advanced: bool = False
    cycle_done: bool = False
    error: str | None = None
    full: bool = False


@dataclass
class SchedulerState:
    want_per_request: int = 10
    round_cap: int = 120
    retries: int = 2
    ring: list[SensorDescriptor] = field(default_factory=list)
    position: int = 0
    session: dict[str, int] = field(default_factory=dict)
    pending_ack: dict[str, int] = field(default_factory=dict)
    attempts: int = 0
    crash_hook: CrashHook | None = None

    def __post_init__(self):
        if self.want_per_request < 1 or self.round_cap < 1:
            raise ValueError("want_per_request and round_cap must be positive")

    # ring management

    def merge(self, descriptors: Iterable[SensorDescriptor]) -> list[SensorDescriptor]:
        """Append unseen sensors in arrival order; returns the newly added ones."""
        known = {d.sensor_id for d in self.ring}
        added = []
        for d in descriptors:
            if d.sensor_id not in known:
                self.ring.append(d)
                known.add(d.sensor_id)
                added.append(d)
        return added

    @property
    def current(self) -> SensorDescriptor:
        if not self.ring:
            raise LookupError("no sensors discovered")
        return self.ring[self.position]

    def next_request(self) -> tuple[SensorDescriptor, PullRequest]:
        d = self.current
        budget = self.round_cap - self.session.get(d.sensor_id, 0)
        return d, PullRequest(want=min(self.want_per_request, budget), ack=self.pending_ack.get(d.sensor_id, 0))

    def _advance(self) -> bool:
        self.attempts = 0
        self.position += 1
        if self.position >= len(self.ring):
            self.position = 0
            self.session.clear()
            return True
        return False

    # protocol events

    def on_response(self, req: PullRequest, resp: PullResponse, store: Store) -> PollOutcome:
        sid = self.current.sensor_id
        out = PollOutcome(sid, req)
        if not resp.ok:
            # the sensor refused our ack; reissue without one
            self.pending_ack[sid] = 0
            out.error = resp.status
            self.attempts += 1
            if self.attempts > self.retries:
                out.advanced = True
                out.cycle_done = self._advance()
            return out
        out.received = len(resp.samples)
        try:
            if resp.samples:
                store.write(resp.samples)
        except (SinkFailure, StorageFailure) as exc:
            self.pending_ack[sid] = 0
            out.error = f"store_failed: {exc}"
            out.advanced = True
            out.cycle_done = self._advance()
            return out
        out.stored = True
        if self.crash_hook:
            self.crash_hook("after_store")
        self.pending_ack[sid] = len(resp.samples)
        self.attempts = 0
        self.session[sid] = self.session.get(sid, 0) + len(resp.samples)
        out.full = len(resp.samples) >= req.want
        if not out.full or self.session[sid] >= self.round_cap:
            out.advanced = True
            out.cycle_done = self._advance()
        return out

    def on_timeout(self, req: PullRequest) -> PollOutcome:
        sid = self.current.sensor_id
        # the ack may or may not have landed; asking again without one is always safe
        self.pending_ack[sid] = 0
        self.attempts += 1
        out = PollOutcome(sid, req, error="timeout")
        if self.attempts > self.retries:
            out.advanced = True
            out.cycle_done = self._advance()
        return out


Transport = Callable[[SensorDescriptor, PullRequest], PullResponse]


def gateway_poll_step(sched: SchedulerState, transport: Transport, store: Store, now: float = 0.0) -> PollOutcome:
    """One synchronous request/response exchange with the current ring member.

    ``transport`` raises :class:`RequestTimeout` when no response arrives.
    """
    desc, req = sched.next_request()
    if sched.crash_hook:
        sched.crash_hook("before_request")
    try:
        resp = transport(desc, req)
    except RequestTimeout:
        return sched.on_timeout(req)
    return sched.on_response(req, resp, store)


# -- discovery -------------------------------------------------------------------


def parse_discovery_responses(
    responses: Iterable[tuple[str, str]], expected: Iterable[str] | None = None
) -> list[SensorDescriptor]:
    """Turn ``(address, link-format)`` replies into descriptors, dropping junk and strangers."""
    allowed = set(expected) if expected is not None else None
    found: dict[str, SensorDescriptor] = {}
    for address, text in responses:
        try:
            d = SensorDescriptor.from_link_format(address, text)
        except ValueError as exc:
            log.warning("ignoring discovery reply from %s: %s", address, exc)
            continue
        if allowed is not None and d.sensor_id not in allowed:
            log.warning("ignoring unexpected sensor %s at %s", d.sensor_id, address)
            continue
        found.setdefault(d.sensor_id, d)
    return list(found.values())


MulticastTransport = Callable[[str, str], Iterable[tuple[str, str]]]


def discover(
    multicast: MulticastTransport, sched: SchedulerState, expected: Iterable[str] | None = None
) -> list[SensorDescriptor]:
    """Probe the discovery group and merge replies into the ring; returns all sensors heard."""
    found = parse_discovery_responses(multicast(DISCOVERY_GROUP, DISCOVERY_PATH), expected)
    sched.merge(found)
    return found
