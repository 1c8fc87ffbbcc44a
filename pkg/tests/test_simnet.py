import dataclasses
import random

import pytest

from homesense.config import DeploymentConfig, ProvisioningConfig, ScenarioConfig, SensorConfig, builtin_scenario
from homesense.durable_queue import DurableQueue, records_on_disk, scan_log
from homesense.errors import ConservationError, PastEvent, UnknownNode
from homesense.simnet import (
    GATEWAY,
    LOSS_PRESETS,
    Channel,
    Delivery,
    FaultKind,
    FaultWindow,
    LossModel,
    Simulation,
    VirtualClock,
    deliver,
    drain_time,
    inject_fault,
    run_provisioning,
    run_scenario,
)


def scenario(sensors=("s1",), faults=(), duration=1800.0, drain=300.0, **kw) -> ScenarioConfig:
    dep = DeploymentConfig(home_id="h", sensors=[SensorConfig(n) for n in sensors], **kw.pop("dep", {}))
    return ScenarioConfig(deployment=dep, duration=duration, drain=drain, faults=list(faults), **kw)


class TestClock:
    def test_ties_fire_in_insertion_order(self):
        clock, fired = VirtualClock(), []
        clock.schedule(5, fired.append, "A")
        clock.schedule(5, fired.append, "B")
        clock.schedule(1, fired.append, "first")
        clock.run()
        assert fired == ["first", "A", "B"] and clock.now == 5

    def test_schedule_now(self):
        clock, fired = VirtualClock(10), []
        clock.schedule(10, fired.append, "x")
        clock.step()
        assert fired == ["x"] and clock.now == 10

    def test_past_event(self):
        clock = VirtualClock(10)
        with pytest.raises(PastEvent):
            clock.schedule(9, print)

    def test_run_until(self):
        clock, fired = VirtualClock(), []
        for t in (1, 2, 3):
            clock.schedule(t, fired.append, t)
        clock.run(until=2)
        assert fired == [1, 2] and clock.now == 2 and len(clock) == 1


class TestLoss:
    def test_extremes(self):
        rng = random.Random(0)
        assert {deliver(None, b"", LossModel(0.0), rng) for _ in range(100)} == {Delivery.DELIVERED}
        assert {deliver(None, b"", LossModel(1.0), rng) for _ in range(100)} == {Delivery.DROPPED}

    def test_preset_rate(self):
        ch = Channel("air", LossModel.preset("table-loss/loc1/close", seed=3))
        drops = sum(ch.deliver(i, "listener") is Delivery.DROPPED for i in range(10000))
        assert abs(drops / 10000 - 0.37) <= 0.02

    def test_listeners_draw_independently(self):
        ch = Channel("air", LossModel(0.5, 1))
        a = [ch.deliver(i, "a") for i in range(200)]
        b = [ch.deliver(i, "b") for i in range(200)]
        assert a != b

    def test_same_seed_same_decisions(self):
        runs = [[Channel("air", LossModel(0.3, 9)).deliver(i, "x") for i in range(100)] for _ in range(2)]
        assert runs[0] == runs[1]

    def test_presets(self):
        assert LOSS_PRESETS["table-loss/loc3/far"] == 1.0
        assert LossModel.preset("pi-vs-bbb/pi/medium").p == pytest.approx(0.108)
        with pytest.raises(KeyError):
            LossModel.preset("nowhere")

    @pytest.mark.parametrize("p", [-0.1, 1.1])
    def test_bad_probability(self, p):
        with pytest.raises(ValueError):
            LossModel(p)


class TestFaultWindow:
    def test_half_open(self):
        w = FaultWindow("gateway", "net_disconnect", 10, 20)
        assert w.kind is FaultKind.NET_DISCONNECT
        assert [w.active(t) for t in (9.9, 10, 19.9, 20)] == [False, True, True, False]

    def test_order(self):
        with pytest.raises(ValueError):
            FaultWindow("gateway", "power_loss", 5, 5)

    def test_unknown_node(self, tmp_path):
        sim = Simulation(scenario(), tmp_path)
        with pytest.raises(UnknownNode):
            inject_fault(sim, FaultWindow("toaster", "power_loss", 1, 2))


class TestDrainTime:
    def test_cases(self):
        log = [(0, "s", 0), (100, "s", 5), (200, "s", 7), (260, "s", 0), (300, "x", 3)]
        assert drain_time(log, "s", 200) == 60
        assert drain_time(log, "s", 300) == 0.0
        assert drain_time(log, "x", 300) is None
        assert drain_time(log, "nobody", 10) == 0.0


class TestScenario:
    def test_clean_run(self):
        r = run_scenario(scenario(duration=1200, drain=120))
        assert r.summary["generated"] == r.summary["sink_count"] == 20
        assert r.column("q_s1")[-1] == 0

    def test_deterministic_bytes(self):
        cfg = scenario(("a", "b"), link_loss=LossModel(0.2, 5), faults=[FaultWindow("a", "power_loss", 300, 500)])
        one, two = run_scenario(cfg), run_scenario(cfg)
        assert one.timeseries_csv() == two.timeseries_csv()
        assert one.events_log() == two.events_log()
        assert one.sink_csv() == two.sink_csv()

    def test_seed_changes_run(self):
        base = scenario(("a", "b"), link_loss=LossModel(0.3, 1))
        other = dataclasses.replace(base, link_loss=LossModel(0.3, 2))
        assert run_scenario(base).events_log() != run_scenario(other).events_log()

    def test_zero_sensors(self):
        r = run_scenario(scenario(()))
        assert r.sink_rows == [] and r.summary["generated"] == 0

    def test_lossy_link_exactly_once(self):
        cfg = scenario(("a", "b", "c"), duration=3600, drain=900, link_loss=LossModel(0.5, 11))
        r = run_scenario(cfg)
        assert sorted(r.sink_rows) == sorted(r.generated)
        assert any("event=timeout" in e for e in r.events)

    def test_internet_loss_isolated(self):
        cfg = scenario(faults=[FaultWindow(GATEWAY, "internet_disconnect", 300, 900)])
        r = run_scenario(cfg)
        assert max(r.column("q_s1")) <= 1
        assert max(r.column("gateway_queue")) == 10

    def test_net_disconnect_keeps_uploads(self, tmp_path):
        cfg = scenario(faults=[FaultWindow(GATEWAY, "net_disconnect", 300, 900)], duration=1500)
        sim = Simulation(cfg, tmp_path)
        sim.start()
        sim.clock.run(until=600)
        assert sim.internet_up() and not sim.on_home(GATEWAY)
        assert sim.gateway.depth() == 0 and sim.sensors["s1"].depth() > 0
        sim.clock.run(until=cfg.duration + cfg.drain)
        assert len(sim.sink) == len(sim.generated)

    def test_sensor_power_loss_mid_push(self, tmp_path):
        cfg = scenario(faults=[FaultWindow("s1", "power_loss", 601, 1200)], duration=1800)
        sim = Simulation(cfg, tmp_path)
        sim.start()
        sim.clock.run(until=700)
        log = tmp_path / "s1.log"
        _, valid = scan_log(log.read_bytes())
        assert valid < log.stat().st_size and sim.sensors["s1"].queue is None
        # recovery would truncate the torn record and keep every completed push
        assert records_on_disk(log) == sim.sensors["s1"].offline_records
        sim.clock.run(until=cfg.duration + cfg.drain)
        assert len(sim.sink) == len(sim.generated)
        q = DurableQueue.recover(log)
        assert q.head <= q.tail and len(q) == 0

    def test_gateway_power_loss(self):
        cfg = scenario(("a", "b"), faults=[FaultWindow(GATEWAY, "power_loss", 500, 1000)], link_loss=LossModel(0.2, 3))
        r = run_scenario(cfg)
        assert sorted(r.sink_rows) == sorted(r.generated)
        assert any("node=gateway event=power_restored" in e for e in r.events)

    def test_late_sensor_found_by_periodic_discovery(self, tmp_path):
        dep = DeploymentConfig(home_id="h", sensors=[SensorConfig("early"), SensorConfig("late", start_at=100)])
        cfg = ScenarioConfig(deployment=dep, duration=900, drain=120)
        sim = Simulation(cfg, tmp_path)
        sim.start()
        sim.clock.run(until=50)
        assert [d.sensor_id for d in sim.gateway.sched.ring] == ["early"]
        sim.clock.run(until=cfg.duration + cfg.drain)
        assert [d.sensor_id for d in sim.gateway.sched.ring] == ["early", "late"]

    def test_conservation_violation_detected(self, tmp_path):
        sim = Simulation(scenario(duration=600), tmp_path)
        sim.start()
        sim.clock.run(until=200)
        sim.sink.store.clear()
        with pytest.raises(ConservationError):
            sim.clock.run(until=600)

    def test_report_files(self, tmp_path):
        r = run_scenario(scenario(duration=600, drain=60))
        out = r.write(tmp_path / "out")
        names = sorted(p.name for p in out.iterdir())
        assert names == ["events.log", "generated.csv", "sink.csv", "summary.json", "timeseries.csv"]
        header = (out / "timeseries.csv").read_text().splitlines()[0]
        assert header == "t,q_s1,gateway_queue,sink_count,generated,accounted"
        assert all(p.read_text().endswith("\n") for p in out.iterdir() if p.stat().st_size)


class TestProvisioningPhase:
    def test_loss_free_sweep(self):
        prov = ProvisioningConfig(enabled=True, escalation_period=1000)
        cfg = scenario(("a", "b"), dep={"provisioning": prov})
        res = run_provisioning(cfg)
        assert res.complete
        # one full channel sweep is 55 s at 5 s dwell and 1 s rounds
        assert all(t is not None and t <= 11 * prov.dwell for t in res.recovered_at.values())

    def test_disabled(self):
        with pytest.raises(ValueError):
            run_provisioning(scenario())

    def test_unreachable_sensor(self):
        cfg = scenario(("a",), dep={"provisioning": ProvisioningConfig(enabled=True, timeout=120)}, loss=LossModel(1.0))
        res = run_provisioning(cfg)
        assert not res.complete and res.recovered_round == {"a": None}

    def test_then_collection(self):
        r = run_scenario(builtin_scenario("provision-home"))
        assert sorted(r.sink_rows) == sorted(r.generated)
        assert all(s["recovered_round"] for s in r.summary["sensors"].values())
        assert any("event=credentials_recovered" in e for e in r.events)

    def test_no_data_before_join(self):
        cfg = scenario(("a",), dep={"provisioning": ProvisioningConfig(enabled=True)}, loss=LossModel(0.5, 2))
        r = run_scenario(cfg)
        first_pull = next(e for e in r.events if "event=pulled" in e)
        joined = next(e for e in r.events if "event=joined_network" in e)
        assert float(first_pull.split()[0][3:]) > float(joined.split()[0][3:])
