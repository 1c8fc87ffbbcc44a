"""One YAML file describes a whole deployment (and, for simulation, a scenario).

Minimal file::

    home_id: home-17
    sensors:
      - sensor_id: dylos-1

Everything else has a default.  See ``scenarios/*.yaml`` for complete files.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .cred_envelope import Credentials, KeyPair, LossTable
from .errors import ConfigError
from .simnet.core import FaultWindow, LossModel

log = logging.getLogger(__name__)

SEED_ENV = "EPIFI_SEED"
IGNORED_DEVICE_KEYS = ("hostname", "password")


@dataclass
class GatewayConfig:
    pull_interval: float = 15.0
    discovery_interval: float = 300.0
    want_per_request: int = 10
    round_cap: int = 120
    backlog_interval: float = 60.0
    request_timeout: float = 2.0
    retries: int = 2
    pull_phase: float = 5.0


@dataclass
class ProvisioningConfig:
    enabled: bool = False
    id: int = 1
    loss_table: tuple[float, ...] = (0.6, 0.7, 0.8, 0.9)
    escalation_period: int = 5
    enc_key: str | None = None
    mac_key: str | None = None
    ssid: str = "home-network"
    password: str = "correct horse battery"
    channel: int = 6
    round_interval: float = 1.0
    frame_interval: float = 0.002
    dwell: float = 5.0
    join_delay: float = 2.0
    timeout: float = 600.0

    def keys(self, home_id: str) -> KeyPair:
        if self.enc_key and self.mac_key:
            return KeyPair.from_hex(self.enc_key, self.mac_key)
        return KeyPair.derive(home_id.encode())

    def credentials(self) -> Credentials:
        return Credentials(self.ssid, self.password)


@dataclass
class SensorConfig:
    sensor_id: str
    metrics: tuple[str, ...] = ("small_particles",)
    sample_period_seconds: float = 60.0
    start_at: float = 0.0


@dataclass
class SinkConfig:
    output: str = "sink.csv"


@dataclass
class DeploymentConfig:
    home_id: str
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    provisioning: ProvisioningConfig = field(default_factory=ProvisioningConfig)
    sensors: list[SensorConfig] = field(default_factory=list)
    sink: SinkConfig = field(default_factory=SinkConfig)


@dataclass
class ScenarioConfig:
    deployment: DeploymentConfig
    duration: float = 3600.0
    drain: float = 600.0
    loss: LossModel = field(default_factory=LossModel)  # provisioning radio
    link_loss: LossModel = field(default_factory=LossModel)  # home network, per message
    faults: list[FaultWindow] = field(default_factory=list)
    seed: int = 0
    report_interval: float = 60.0
    epoch_base: int = 1_600_000_000


# -- parsing -------------------------------------------------------------------


def _line_index(node: yaml.Node, path: tuple = (), out: dict | None = None) -> dict[tuple, int]:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[path + (k.value,)] = k.start_mark.line + 1
            _line_index(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


class _Reader:
    def __init__(self, lines: dict[tuple, int]):
        self.lines = lines

    def fail(self, path: tuple, message: str):
        name = ".".join(str(p) for p in path) or "<root>"
        line = None
        for cut in range(len(path), -1, -1):
            if path[:cut] in self.lines:
                line = self.lines[path[:cut]]
                break
        raise ConfigError(name, message, line)

    def mapping(self, raw: Any, path: tuple, known: set[str]) -> dict:
        if raw is None:
            return {}
        if not isinstance(raw, dict):
            self.fail(path, "expected a mapping")
        for key in raw:
            if key not in known:
                self.fail(path + (key,), "unknown key")
        return raw

    def number(self, raw: dict, path: tuple, key: str, default, *, positive=True, integer=False, minimum=None):
        if key not in raw:
            return default
        v = raw[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
            self.fail(path + (key,), f"expected {'an integer' if integer else 'a number'}, got {v!r}")
        if positive and v <= 0:
            self.fail(path + (key,), f"must be positive, got {v!r}")
        if minimum is not None and v < minimum:
            self.fail(path + (key,), f"must be >= {minimum}, got {v!r}")
        return v if integer else float(v)

    def string(self, raw: dict, path: tuple, key: str, default):
        if key not in raw:
            return default
        v = raw[key]
        if not isinstance(v, (str, int)) or isinstance(v, bool) or v == "":
            self.fail(path + (key,), f"expected a non-empty string, got {v!r}")
        return str(v)


def _gateway(r: _Reader, raw: Any) -> GatewayConfig:
    p = ("gateway",)
    d = GatewayConfig()
    raw = r.mapping(raw, p, set(vars(d)))
    return GatewayConfig(
        pull_interval=r.number(raw, p, "pull_interval", d.pull_interval),
        discovery_interval=r.number(raw, p, "discovery_interval", d.discovery_interval),
        want_per_request=r.number(raw, p, "want_per_request", d.want_per_request, integer=True),
        round_cap=r.number(raw, p, "round_cap", d.round_cap, integer=True),
        backlog_interval=r.number(raw, p, "backlog_interval", d.backlog_interval),
        request_timeout=r.number(raw, p, "request_timeout", d.request_timeout),
        retries=r.number(raw, p, "retries", d.retries, integer=True, positive=False, minimum=0),
        pull_phase=r.number(raw, p, "pull_phase", d.pull_phase, positive=False, minimum=0),
    )


def _provisioning(r: _Reader, raw: Any) -> ProvisioningConfig:
    p = ("provisioning",)
    d = ProvisioningConfig()
    raw = r.mapping(raw, p, (set(vars(d)) - {"enc_key", "mac_key"}) | {"keys"})
    keys = r.mapping(raw.get("keys"), p + ("keys",), {"enc", "mac"})
    for name, value in keys.items():
        if not isinstance(value, str):
            # an unquoted all-digit key would already have lost its leading zeros
            r.fail(p + ("keys", name), "hex keys must be quoted strings")
    enabled = raw.get("enabled", d.enabled)
    if not isinstance(enabled, bool):
        r.fail(p + ("enabled",), "expected true or false")
    table = raw.get("loss_table", list(d.loss_table))
    if not isinstance(table, list):
        r.fail(p + ("loss_table",), "expected a list of 4 fractions")
    try:
        LossTable(tuple(table))
    except (ValueError, TypeError) as exc:
        r.fail(p + ("loss_table",), str(exc))
    cfg = ProvisioningConfig(
        enabled=enabled,
        id=r.number(raw, p, "id", d.id, integer=True, positive=False, minimum=0),
        loss_table=tuple(float(v) for v in table),
        escalation_period=r.number(raw, p, "escalation_period", d.escalation_period, integer=True),
        enc_key=r.string(keys, p + ("keys",), "enc", None),
        mac_key=r.string(keys, p + ("keys",), "mac", None),
        ssid=r.string(raw, p, "ssid", d.ssid),
        password=str(raw.get("password", d.password)),
        channel=r.number(raw, p, "channel", d.channel, integer=True),
        round_interval=r.number(raw, p, "round_interval", d.round_interval),
        frame_interval=r.number(raw, p, "frame_interval", d.frame_interval),
        dwell=r.number(raw, p, "dwell", d.dwell),
        join_delay=r.number(raw, p, "join_delay", d.join_delay, positive=False, minimum=0),
        timeout=r.number(raw, p, "timeout", d.timeout),
    )
    if cfg.id > 63:
        r.fail(p + ("id",), "must fit in 6 bits (0..63)")
    if not 1 <= cfg.channel <= 11:
        r.fail(p + ("channel",), "must be a 2.4 GHz channel 1..11")
    if (cfg.enc_key is None) != (cfg.mac_key is None):
        r.fail(p + ("keys",), "give both enc and mac, or neither")
    if cfg.enc_key is not None:
        try:
            KeyPair.from_hex(cfg.enc_key, cfg.mac_key)
        except ValueError as exc:
            r.fail(p + ("keys",), str(exc))
    try:
        cfg.credentials().validate()
    except ValueError as exc:
        r.fail(p + ("ssid",), str(exc))
    return cfg


def _sensors(r: _Reader, raw: Any) -> list[SensorConfig]:
    if raw is None:
        return []
    if not isinstance(raw, list):
        r.fail(("sensors",), "expected a list of sensors")
    out, seen = [], set()
    for i, item in enumerate(raw):
        p = ("sensors", i)
        item = r.mapping(item, p, {"sensor_id", "metrics", "sample_period_seconds", "start_at", *IGNORED_DEVICE_KEYS})
        for key in IGNORED_DEVICE_KEYS:
            if key in item:
                log.warning("sensors.%d.%s concerns OS imaging and is ignored", i, key)
        if "sensor_id" not in item:
            r.fail(p + ("sensor_id",), "missing")
        sid = r.string(item, p, "sensor_id", None)
        if sid == "gateway":
            r.fail(p + ("sensor_id",), "'gateway' is reserved for the gateway node")
        if sid in seen:
            r.fail(p + ("sensor_id",), f"duplicate sensor id {sid!r}")
        seen.add(sid)
        metrics = item.get("metrics", ["small_particles"])
        if isinstance(metrics, str):
            metrics = [metrics]
        if not isinstance(metrics, list) or not metrics or not all(isinstance(m, str) and m for m in metrics):
            r.fail(p + ("metrics",), "expected a non-empty list of metric names")
        out.append(
            SensorConfig(
                sensor_id=sid,
                metrics=tuple(metrics),
                # timestamps have one-second resolution
                sample_period_seconds=r.number(item, p, "sample_period_seconds", 60.0, minimum=1),
                start_at=r.number(item, p, "start_at", 0.0, positive=False, minimum=0),
            )
        )
    return out


def _loss(r: _Reader, raw: Any, seed: int, key: str = "loss") -> LossModel:
    p = ("scenario", key)
    if raw is None:
        return LossModel(0.0, seed)
    if isinstance(raw, str):
        try:
            return LossModel.preset(raw, seed)
        except KeyError as exc:
            r.fail(p, exc.args[0])
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        raw = {"p": raw}
    raw = r.mapping(raw, p, {"p", "kind", "preset"})
    if "preset" in raw:
        return _loss(r, raw["preset"], seed, key)
    prob = r.number(raw, p, "p", 0.0, positive=False, minimum=0)
    if prob > 1:
        r.fail(p + ("p",), "must be <= 1")
    try:
        return LossModel(prob, seed, raw.get("kind", "bernoulli"))
    except ValueError as exc:
        r.fail(p, str(exc))


def _faults(r: _Reader, raw: Any, duration: float) -> list[FaultWindow]:
    if raw is None:
        return []
    if not isinstance(raw, list):
        r.fail(("scenario", "faults"), "expected a list of fault windows")
    out = []
    for i, item in enumerate(raw):
        p = ("scenario", "faults", i)
        item = r.mapping(item, p, {"target", "kind", "start", "end"})
        for key in ("target", "kind", "start", "end"):
            if key not in item:
                r.fail(p + (key,), "missing")
        start = r.number(item, p, "start", 0.0, positive=False, minimum=0)
        end = r.number(item, p, "end", 0.0)
        if end > duration:
            r.fail(p + ("end",), f"fault ends after the scenario duration ({duration:g} s)")
        try:
            out.append(FaultWindow(str(item["target"]), item["kind"], start, end))
        except ValueError as exc:
            r.fail(p, str(exc))
    return out


def parse_config(text: str, source: str = "<config>", seed_override: int | None = None) -> ScenarioConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(source, f"not valid YAML: {getattr(exc, 'problem', exc)}", mark.line + 1 if mark else None)
    r = _Reader(_line_index(node) if node is not None else {})
    raw = r.mapping(raw, (), {"home_id", "gateway", "provisioning", "sensors", "sink", "scenario"})
    if "home_id" not in raw:
        r.fail(("home_id",), "missing")
    home_id = r.string(raw, (), "home_id", None)
    sink = r.mapping(raw.get("sink"), ("sink",), {"output"})
    deployment = DeploymentConfig(
        home_id=home_id,
        gateway=_gateway(r, raw.get("gateway")),
        provisioning=_provisioning(r, raw.get("provisioning")),
        sensors=_sensors(r, raw.get("sensors")),
        sink=SinkConfig(r.string(sink, ("sink",), "output", SinkConfig.output)),
    )
    sc = r.mapping(raw.get("scenario"), ("scenario",), {"duration", "drain", "seed", "loss", "link_loss", "faults", "report_interval"})
    p = ("scenario",)
    seed = r.number(sc, p, "seed", 0, integer=True, positive=False, minimum=0)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(SEED_ENV, f"expected an integer, got {env!r}") from None
    if seed_override is not None:
        seed = seed_override
    duration = r.number(sc, p, "duration", 3600.0)
    drain = r.number(sc, p, "drain", 600.0, positive=False, minimum=0)
    known = {s.sensor_id for s in deployment.sensors} | {"gateway"}
    faults = _faults(r, sc.get("faults"), duration)
    for i, w in enumerate(faults):
        if w.target not in known:
            r.fail(p + ("faults", i, "target"), f"unknown node {w.target!r}")
    return ScenarioConfig(
        deployment=deployment,
        duration=duration,
        drain=drain,
        loss=_loss(r, sc.get("loss"), seed),
        link_loss=_loss(r, sc.get("link_loss"), seed, "link_loss"),
        faults=faults,
        seed=seed,
        report_interval=r.number(sc, p, "report_interval", 60.0),
    )


def load_config(path: str | os.PathLike, seed_override: int | None = None) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from None
    return parse_config(text, str(path), seed_override)


def builtin_scenario(name: str, seed_override: int | None = None) -> ScenarioConfig:
    """Load one of the bundled scenarios (``gateway-loss``, ``internet-loss``, ...)."""
    text = resources.files("homesense").joinpath("scenarios", f"{name}.yaml").read_text()
    return parse_config(text, f"{name}.yaml", seed_override)

