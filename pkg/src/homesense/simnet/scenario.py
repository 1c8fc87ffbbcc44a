"""Whole-deployment simulation: provisioning, discovery, pulling and uploading.

The home network is a single lossy channel between the gateway and the
sensors (plus the 2.4 GHz channels the provisioning frames travel on); the
gateway reaches the sink over a separate internet link.  Fault windows cut
power to a node, take it off the home network, or sever the internet link.

Every random draw comes from a stream named after the scenario seed and the
draw's purpose, so a run is a pure function of the config.
"""

from __future__ import annotations

import json
import logging
import random
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

from ..collect_proto import (
    DedupSink,
    PullRequest,
    PullResponse,
    QueueStore,
    SchedulerState,
    SensorDescriptor,
    parse_discovery_responses,
    rows_to_csv,
    sensor_handle_pull,
)
from ..cred_envelope import LossTable
from ..durable_queue import DataSample, DurableQueue, encode_record
from ..errors import ConservationError, SinkFailure, UnknownNode
from ..provisioner import EventKind, GatewayProvisionState, SensorProvisionState
from .core import Channel, Delivery, FaultKind, FaultWindow, VirtualClock

if TYPE_CHECKING:
    from ..config import ScenarioConfig, SensorConfig

log = logging.getLogger(__name__)

GATEWAY = "gateway"
LATENCY = 0.01
DISCOVERY_WINDOW = 1.0
NOTIFY_RETRY = 2.0
UPLOAD_BATCH = 100
SAMPLE_PHASE = 1.0


def _fmt(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else f"{t:.3f}"


@dataclass
class MetricsReport:
    columns: list[str]
    rows: list[list]
    events: list[str]
    generated: list[tuple[str, str, str, int, float]]
    sink_rows: list[tuple[str, str, str, int, float]]
    summary: dict
    depth_log: list[tuple[float, str, int]] = field(default_factory=list, repr=False)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]

    def timeseries_csv(self) -> str:
        lines = [",".join(self.columns)]
        lines += [",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) for row in self.rows]
        return "\n".join(lines) + "\n"

    def events_log(self) -> str:
        return "".join(line + "\n" for line in self.events)

    def generated_csv(self) -> str:
        return rows_to_csv(sorted(self.generated, key=lambda r: (r[1], r[2], r[3])))

    def sink_csv(self) -> str:
        return rows_to_csv(self.sink_rows)

    def summary_json(self) -> str:
        return json.dumps(self.summary, indent=2, sort_keys=True) + "\n"

    def write(self, outdir: str | Path, sink_name: str = "sink.csv") -> Path:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "timeseries.csv").write_text(self.timeseries_csv())
        (out / "events.log").write_text(self.events_log())
        (out / "generated.csv").write_text(self.generated_csv())
        (out / sink_name).write_text(self.sink_csv())
        (out / "summary.json").write_text(self.summary_json())
        return out


# -- nodes -----------------------------------------------------------------------


class SensorNode:
    def __init__(self, sim: "Simulation", cfg: SensorConfig):
        self.sim = sim
        self.cfg = cfg
        self.name = cfg.sensor_id
        self.log_path = sim.workdir / f"{self.name}.log"
        self.queue: DurableQueue | None = None
        self.offline_records: list[DataSample] = []
        self.powered = False
        self.joined = False
        self.values = random.Random(f"{sim.cfg.seed}/values/{self.name}")
        self.listener: SensorProvisionState | None = None
        self.recovered_round: int | None = None
        self.recovered_at: float | None = None
        self.notified = False

    def notify_acked(self) -> None:
        self.notified = True

    def descriptor_text(self) -> str:
        return SensorDescriptor(self.name, self.name, self.cfg.metrics).to_link_format()

    def power_on(self) -> None:
        self.powered = True
        self.queue = DurableQueue.recover(self.log_path, fsync=False)
        self.sim.note_depth(self.name, len(self.queue))

    def power_off(self) -> None:
        if self.queue is not None:
            self.offline_records = self.queue.records()
            self.queue.close()
            self.queue = None
            # a push that was in flight when power went away
            with open(self.log_path, "ab") as f:
                f.write(encode_record(b"torn")[:6])
        self.powered = False

    def depth(self) -> int:
        return len(self.queue) if self.queue is not None else len(self.offline_records)

    def contents(self) -> list[DataSample]:
        return self.queue.records() if self.queue is not None else self.offline_records

    def sample(self) -> None:
        if not self.powered:
            return
        at = self.sim.epoch(self.sim.clock.now)
        for metric in self.cfg.metrics:
            s = DataSample(self.name, metric, round(self.values.lognormvariate(6.0, 0.5), 2), at)
            self.queue.push(s)
            self.sim.record_generated(s)
        self.sim.note_depth(self.name, len(self.queue))

    def handle_pull(self, req: PullRequest) -> PullResponse:
        resp = sensor_handle_pull(self.queue, req)
        self.sim.note_depth(self.name, len(self.queue))
        return resp


class GatewayNode:
    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.log_path = sim.workdir / "gateway.log"
        self.powered = False
        self.incarnation = 0
        self.queue: DurableQueue | None = None
        self.offline_records: list[DataSample] = []
        self.sched: SchedulerState | None = None
        self.busy = False
        self.outstanding: int | None = None
        self.pending_req: PullRequest | None = None
        self.token = 0
        self.replies: list[tuple[str, str]] | None = None

    def power_on(self) -> None:
        g = self.sim.cfg.deployment.gateway
        self.powered = True
        self.incarnation += 1
        self.queue = DurableQueue.recover(self.log_path, fsync=False)
        self.sched = SchedulerState(want_per_request=g.want_per_request, round_cap=g.round_cap, retries=g.retries)
        self.busy = False
        self.outstanding = None
        self.sim.note_depth(GATEWAY, len(self.queue))
        self.discover()

    def power_off(self) -> None:
        self.powered = False
        self.incarnation += 1
        self.outstanding = None
        self.replies = None
        if self.queue is not None:
            self.offline_records = self.queue.records()
            self.queue.close()
            self.queue = None
        self.sched = None

    def depth(self) -> int:
        return len(self.queue) if self.queue is not None else len(self.offline_records)

    def contents(self) -> list[DataSample]:
        return self.queue.records() if self.queue is not None else self.offline_records

    # discovery

    def discover(self) -> None:
        if not self.powered or self.replies is not None:
            return
        self.replies = []
        inc = self.incarnation
        self.sim.event(GATEWAY, "discovery_probe")
        for node in self.sim.sensors.values():
            self.sim.send(GATEWAY, node.name, lambda n=node: self._probe_arrived(n, inc))
        self.sim.clock.call_later(DISCOVERY_WINDOW, self._close_discovery, inc)

    def _probe_arrived(self, node: SensorNode, inc: int) -> None:
        text = node.descriptor_text()
        self.sim.send(node.name, GATEWAY, lambda: self._reply(inc, node.name, text))

    def _reply(self, inc: int, address: str, text: str) -> None:
        if inc == self.incarnation and self.replies is not None:
            self.replies.append((address, text))

    def _close_discovery(self, inc: int) -> None:
        if inc != self.incarnation or self.replies is None:
            return
        expected = [s.sensor_id for s in self.sim.cfg.deployment.sensors]
        found = parse_discovery_responses(self.replies, expected)
        self.replies = None
        for d in self.sched.merge(found):
            self.sim.event(GATEWAY, "sensor_discovered", sensor=d.sensor_id)

    # pulling

    def tick(self) -> None:
        if not self.powered:
            return
        self.upload()
        if not self.busy and self.sched.ring:
            self.busy = True
            self.issue()

    def issue(self) -> None:
        if not self.powered:
            return
        desc, req = self.sched.next_request()
        self.token += 1
        token, inc = self.token, self.incarnation
        self.outstanding = token
        self.pending_req = req
        target = self.sim.sensors[desc.address]
        self.sim.send(GATEWAY, target.name, lambda: self._request_arrived(target, req, token, inc))
        self.sim.clock.call_later(self.sim.cfg.deployment.gateway.request_timeout, self._timeout, token, inc)

    def _request_arrived(self, node: SensorNode, req: PullRequest, token: int, inc: int) -> None:
        resp = node.handle_pull(req)
        self.sim.send(node.name, GATEWAY, lambda: self._response(resp, token, inc))

    def _response(self, resp: PullResponse, token: int, inc: int) -> None:
        if inc != self.incarnation or token != self.outstanding:
            return
        self.outstanding = None
        outcome = self.sched.on_response(self.pending_req, resp, QueueStore(self.queue))
        self.sim.note_depth(GATEWAY, len(self.queue))
        if outcome.received:
            self.sim.event(GATEWAY, "pulled", sensor=outcome.sensor_id, n=outcome.received, ack=outcome.request.ack)
        self.upload()
        self._follow_up(outcome)

    def _timeout(self, token: int, inc: int) -> None:
        if inc != self.incarnation or token != self.outstanding:
            return
        self.outstanding = None
        outcome = self.sched.on_timeout(self.pending_req)
        self.sim.event(GATEWAY, "timeout", sensor=outcome.sensor_id)
        self._follow_up(outcome)

    def _follow_up(self, outcome) -> None:
        if outcome.cycle_done:
            self.busy = False
        elif outcome.advanced or outcome.error:
            self.issue()
        else:
            self.sim.clock.call_later(self.sim.cfg.deployment.gateway.backlog_interval, self._resume, self.incarnation)

    def _resume(self, inc: int) -> None:
        if inc == self.incarnation:
            self.issue()

    # uploading

    def upload(self) -> None:
        if not self.powered or len(self.queue) == 0:
            return
        sink = self.sim.sink
        sink.available = self.sim.internet_up()
        total = 0
        try:
            while len(self.queue):
                batch = [s for _, s in self.queue.peek(UPLOAD_BATCH)]
                sink.write(batch)
                self.queue.ack(len(batch))
                total += len(batch)
        except SinkFailure:
            pass
        finally:
            self.sim.note_depth(GATEWAY, len(self.queue))
        if total:
            self.sim.event(GATEWAY, "uploaded", n=total)

    # provisioning

    def note_connected(self, sensor: str) -> None:
        if not self.powered or self.sim.prov is None:
            return
        status = self.sim.prov.note_connected(sensor)
        self.sim.event(GATEWAY, "sensor_connected", sensor=sensor)
        self.sim.send(GATEWAY, sensor, self.sim.sensors[sensor].notify_acked)
        if status.done and not self.sim.prov_done:
            self.sim.prov_done = True
            self.sim.event(GATEWAY, "provisioning_complete", rounds=self.sim.prov.rounds_sent)
        self.sim.clock.call_later(DISCOVERY_WINDOW / 2, self.discover)


# -- simulation --------------------------------------------------------------------


class Simulation:
    def __init__(self, cfg: ScenarioConfig, workdir: str | Path, *, collect: bool = True):
        self.cfg = cfg
        self.workdir = Path(workdir)
        self.collect = collect
        self.clock = VirtualClock()
        self.home = Channel("home", cfg.link_loss)
        self.radio = {ch: Channel(f"wifi-{ch}", cfg.loss) for ch in range(1, 12)}
        self.faults: list[FaultWindow] = []
        self.events: list[str] = []
        self.depth_log: list[tuple[float, str, int]] = []
        self._last_depth: dict[str, int] = {}
        self.generated: dict[tuple, DataSample] = {}
        self.sink = DedupSink(cfg.deployment.home_id)
        self.gateway = GatewayNode(self)
        self.sensors = {s.sensor_id: SensorNode(self, s) for s in cfg.deployment.sensors}
        self.rows: list[list] = []
        p = cfg.deployment.provisioning
        self.prov: GatewayProvisionState | None = None
        self.prov_done = False
        if p.enabled:
            keys = p.keys(cfg.deployment.home_id)
            self.prov = GatewayProvisionState(
                keys=keys,
                id=p.id,
                loss_table=LossTable(p.loss_table),
                escalation_period=p.escalation_period,
                expected_sensors=set(self.sensors),
            )
            for node in self.sensors.values():
                node.listener = SensorProvisionState(keys=keys, id=p.id, loss_table=LossTable(p.loss_table), dwell=p.dwell)
        for w in cfg.faults:
            self.inject_fault(w)

    # environment

    def epoch(self, t: float) -> int:
        return self.cfg.epoch_base + int(t)

    def event(self, node: str, kind: str, **detail) -> None:
        extra = "".join(f" {k}={v}" for k, v in detail.items())
        self.events.append(f"ts={self.clock.now:.3f} node={node} event={kind}{extra}")

    def note_depth(self, node: str, depth: int) -> None:
        if self._last_depth.get(node) != depth:
            self.depth_log.append((self.clock.now, node, depth))
            self._last_depth[node] = depth

    def inject_fault(self, w: FaultWindow) -> None:
        if w.target != GATEWAY and w.target not in self.sensors:
            raise UnknownNode(w.target)
        self.faults.append(w)
        if w.kind is FaultKind.POWER_LOSS:
            self.clock.schedule(max(w.start, self.clock.now), self._power, w.target, False)
            self.clock.schedule(w.end, self._power, w.target, True)

    def _active(self, node: str, kind: FaultKind, t: float | None = None) -> bool:
        t = self.clock.now if t is None else t
        return any(w.target == node and w.kind is kind and w.active(t) for w in self.faults)

    def powered(self, node: str) -> bool:
        n = self.gateway if node == GATEWAY else self.sensors[node]
        return n.powered

    def on_home(self, node: str) -> bool:
        if not self.powered(node) or self._active(node, FaultKind.NET_DISCONNECT):
            return False
        return node == GATEWAY or self.sensors[node].joined

    def internet_up(self) -> bool:
        return self.gateway.powered and not self._active(GATEWAY, FaultKind.INTERNET_DISCONNECT)

    def send(self, src: str, dst: str, on_arrival) -> None:
        """Point-to-point home-network message; lost on faults or a loss draw."""
        if not self.on_home(src):
            return
        if self.home.deliver(None, f"{src}->{dst}") is Delivery.DROPPED:
            return

        def arrive():
            if self.on_home(dst):
                on_arrival()

        self.clock.call_later(LATENCY, arrive)

    def _power(self, node: str, on: bool) -> None:
        n = self.gateway if node == GATEWAY else self.sensors[node]
        if on and not n.powered:
            self.event(node, "power_restored")
            n.power_on()
        elif not on and n.powered:
            self.event(node, "power_lost")
            n.power_off()

    def record_generated(self, s: DataSample) -> None:
        self.generated[s.key] = s

    # provisioning

    def _emit_round(self) -> None:
        p = self.cfg.deployment.provisioning
        if self.prov_done or self.clock.now > p.timeout:
            return
        self.clock.call_later(p.round_interval, self._emit_round)
        if not self.on_home(GATEWAY):
            return
        rng = random.Random(f"{self.cfg.seed}/iv/{self.prov.rounds_sent}")
        round_no = self.prov.rounds_sent + 1
        index_before = self.prov.loss_index
        frames = self.prov.emit_round(p.credentials(), self.epoch(self.clock.now), rng)
        self.event(GATEWAY, "round_emitted", round=round_no, loss_index=index_before, total=len(frames))
        for i, frame in enumerate(frames):
            self.clock.call_later(i * p.frame_interval, self._broadcast, frame, round_no)

    def _broadcast(self, frame, round_no: int) -> None:
        ch = self.cfg.deployment.provisioning.channel
        for node in self.sensors.values():
            lst = node.listener
            if not node.powered or node.recovered_round is not None:
                continue
            if lst.scan_step(self.clock.now) != ch:
                continue
            if self.radio[ch].deliver(frame, node.name) is Delivery.DROPPED:
                continue
            ev = lst.ingest(frame, self.clock.now)
            if ev.kind in (EventKind.IGNORED, EventKind.BUFFERED):
                continue
            self.events.append(ev.log_line(self.clock.now, node.name))
            if ev.kind is EventKind.CREDENTIALS_RECOVERED:
                node.recovered_round = round_no
                node.recovered_at = self.clock.now
                self.clock.call_later(self.cfg.deployment.provisioning.join_delay, self._join, node.name)

    def _join(self, name: str) -> None:
        node = self.sensors[name]
        node.joined = True
        self.event(name, "joined_network")
        self._notify(name)

    def _notify(self, name: str) -> None:
        node = self.sensors[name]
        if node.notified or self.prov_done:
            return
        self.send(name, GATEWAY, lambda: self.gateway.note_connected(name))
        self.clock.call_later(NOTIFY_RETRY, self._notify, name)

    # collection timers

    def _tick(self) -> None:
        self.gateway.tick()
        self.clock.call_later(self.cfg.deployment.gateway.pull_interval, self._tick)

    def _discovery(self) -> None:
        self.gateway.discover()
        self.clock.call_later(self.cfg.deployment.gateway.discovery_interval, self._discovery)

    def _sampler(self, name: str) -> None:
        node = self.sensors[name]
        node.sample()
        nxt = self.clock.now + node.cfg.sample_period_seconds
        if nxt < self.cfg.duration:
            self.clock.schedule(nxt, self._sampler, name)

    def _snapshot(self) -> None:
        t = self.clock.now
        held = set(self.sink.store)
        home = self.cfg.deployment.home_id
        accounted = {(home, *s.key) for s in self.gateway.contents()}
        for node in self.sensors.values():
            accounted.update((home, *s.key) for s in node.contents())
        accounted |= held
        generated = {(home, *k) for k in self.generated}
        if accounted != generated:
            missing = sorted(generated - accounted)[:3]
            extra = sorted(accounted - generated)[:3]
            raise ConservationError(f"t={t}: missing {missing} extra {extra}")
        row = [t] + [node.depth() for node in self.sensors.values()]
        row += [self.gateway.depth(), len(self.sink), len(generated), len(accounted)]
        self.rows.append(row)
        nxt = t + self.cfg.report_interval
        if nxt <= self.cfg.duration + self.cfg.drain + 1e-9:
            self.clock.schedule(nxt, self._snapshot)

    # driver

    def start(self) -> None:
        g = self.cfg.deployment.gateway
        self.clock.schedule(0.0, self._snapshot)
        if not self._active(GATEWAY, FaultKind.POWER_LOSS, 0.0):
            self.gateway.power_on()
        for node in self.sensors.values():
            self.clock.schedule(node.cfg.start_at, self._boot_sensor, node.name)
        if self.prov is not None:
            self.clock.schedule(0.0, self._emit_round)
        if self.collect:
            self.clock.schedule(g.discovery_interval, self._discovery)
            self.clock.schedule(g.pull_phase, self._tick)

    def _boot_sensor(self, name: str) -> None:
        node = self.sensors[name]
        if self._active(name, FaultKind.POWER_LOSS):
            return
        node.power_on()
        self.event(name, "boot")
        if self.prov is None:
            node.joined = True
            if self.collect:
                # a freshly joined sensor announces itself, which triggers a probe
                self.clock.call_later(DISCOVERY_WINDOW, self.gateway.discover)
        first = self.clock.now + SAMPLE_PHASE
        if first < self.cfg.duration:
            self.clock.schedule(first, self._sampler, name)

    def run(self) -> MetricsReport:
        self.start()
        self.clock.run(until=self.cfg.duration + self.cfg.drain)
        return self.report()

    def report(self) -> MetricsReport:
        columns = ["t"] + [f"q_{n}" for n in self.sensors] + ["gateway_queue", "sink_count", "generated", "accounted"]
        home = self.cfg.deployment.home_id
        generated = [(home, s.sensor_id, s.metric, s.measured_at, s.value) for s in self.generated.values()]
        return MetricsReport(
            columns=columns,
            rows=self.rows,
            events=self.events,
            generated=generated,
            sink_rows=self.sink.rows(),
            summary=self.summary(),
            depth_log=self.depth_log,
        )

    def summary(self) -> dict:
        per_sensor = {}
        for name, node in self.sensors.items():
            per_sensor[name] = {
                "peak_depth": max((d for _, n, d in self.depth_log if n == name), default=0),
                "recovered_round": node.recovered_round,
                "recovered_at": node.recovered_at,
            }
        faults = []
        for w in self.faults:
            faults.append(
                {
                    "target": w.target,
                    "kind": w.kind.value,
                    "start": w.start,
                    "end": w.end,
                    "sensor_drain_s": _slowest(drain_time(self.depth_log, n, w.end) for n in self.sensors),
                    "gateway_drain_s": drain_time(self.depth_log, GATEWAY, w.end),
                }
            )
        return {
            "home_id": self.cfg.deployment.home_id,
            "seed": self.cfg.seed,
            "duration": self.cfg.duration,
            "drain": self.cfg.drain,
            "sink_file": self.cfg.deployment.sink.output,
            "generated": len(self.generated),
            "sink_count": len(self.sink),
            "gateway_peak_depth": max((d for _, n, d in self.depth_log if n == GATEWAY), default=0),
            "sensors": per_sensor,
            "faults": faults,
            "provisioning_rounds": self.prov.rounds_sent if self.prov else 0,
        }


def drain_time(depth_log: list[tuple[float, str, int]], node: str, after: float) -> float | None:
    """Seconds from ``after`` until ``node``'s queue is next empty (None if never)."""
    depth = 0
    for t, n, d in depth_log:
        if n != node:
            continue
        if t <= after:
            depth = d
        elif depth == 0:
            break
        elif d == 0:
            return t - after
    return 0.0 if depth == 0 else None


def _slowest(times) -> float | None:
    times = list(times)
    if any(t is None for t in times):
        return None
    return max(times, default=0.0)


def run_scenario(cfg: ScenarioConfig, workdir: str | Path | None = None) -> MetricsReport:
    if workdir is not None:
        return Simulation(cfg, workdir).run()
    with tempfile.TemporaryDirectory(prefix="homesense-") as tmp:
        return Simulation(cfg, tmp).run()


def inject_fault(sim: Simulation, w: FaultWindow) -> None:
    sim.inject_fault(w)


@dataclass
class ProvisioningResult:
    recovered_round: dict[str, int | None]
    recovered_at: dict[str, float | None]
    rounds_sent: int
    complete: bool
    events: list[str]


def run_provisioning(cfg: ScenarioConfig, workdir: str | Path | None = None) -> ProvisioningResult:
    """Run only the provisioning phase, until every sensor has joined or the timeout passes."""
    if not cfg.deployment.provisioning.enabled:
        raise ValueError("provisioning is disabled in this config")

    def go(tmp) -> ProvisioningResult:
        sim = Simulation(cfg, tmp, collect=False)
        sim.start()
        limit = cfg.deployment.provisioning.timeout + 10 * NOTIFY_RETRY
        while len(sim.clock) and sim.clock.now <= limit and not sim.prov_done:
            sim.clock.step()
        return ProvisioningResult(
            recovered_round={n: s.recovered_round for n, s in sim.sensors.items()},
            recovered_at={n: s.recovered_at for n, s in sim.sensors.items()},
            rounds_sent=sim.prov.rounds_sent,
            complete=sim.prov_done,
            events=[e for e in sim.events if "event=round_emitted" not in e],
        )

    if workdir is not None:
        return go(workdir)
    with tempfile.TemporaryDirectory(prefix="homesense-") as tmp:
        return go(tmp)
