import binascii
import os
import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homesense.durable_queue import (
    DataSample,
    DurableQueue,
    encode_record,
    records_on_disk,
    scan_log,
)
from homesense.errors import AckOverrun, CorruptLog, StorageFailure

GOLDEN = bytes.fromhex(
    "00000028" "49a9666d" "64796c6f732d311f736d616c6c5f7061727469636c65731f3331322e301f31363030303030303631"
)


def sample(i: int, sensor: str = "dylos-1") -> DataSample:
    return DataSample(sensor, "small_particles", float(i) + 0.25, 1_600_000_000 + 60 * i)


def kill(q: DurableQueue) -> DurableQueue:
    """Drop the process's view of the queue without any shutdown work, then recover."""
    os.close(q._fd)
    q._fd = -1
    return DurableQueue.recover(q.log_path, fsync=q.fsync, compact_bytes=q.compact_bytes)


@pytest.fixture
def path(tmp_path):
    return tmp_path / "q.log"


@pytest.fixture
def q(path):
    with DurableQueue.recover(path) as queue:
        yield queue


class TestSample:
    def test_payload(self):
        s = DataSample("dylos-1", "small_particles", 312.0, 1_600_000_061)
        assert s.to_bytes() == b"dylos-1\x1fsmall_particles\x1f312.0\x1f1600000061"

    def test_golden_record(self):
        raw = encode_record(DataSample("dylos-1", "small_particles", 312.0, 1_600_000_061).to_bytes())
        assert raw == GOLDEN
        assert binascii.crc32(raw[8:]) == int.from_bytes(raw[4:8], "big")

    @given(st.floats(allow_nan=False), st.integers(1, 2**40))
    def test_value_bit_exact(self, value, ts):
        s = DataSample("a", "m", value, ts)
        assert DataSample.from_bytes(s.to_bytes()) == s

    @pytest.mark.parametrize("kw", [dict(measured_at=0), dict(metric=""), dict(sensor_id="a\x1fb")])
    def test_invalid(self, kw):
        base = dict(sensor_id="s", metric="m", value=1.0, measured_at=1)
        with pytest.raises(ValueError):
            DataSample(**{**base, **kw})

    @pytest.mark.parametrize("ts", [16.0, True, "16"])
    def test_timestamp_must_be_int(self, ts):
        # otherwise the record is written but cannot be read back after a restart
        with pytest.raises(TypeError):
            DataSample("s", "m", 1.0, ts)


class TestOperations:
    def test_fresh(self, q):
        assert len(q) == 0 and q.peek(5) == []

    def test_push_forty(self, q):
        offsets = [q.push(sample(i)) for i in range(40)]
        assert offsets == list(range(40)) and len(q) == 40

    def test_peek_fewer_than_requested(self, q):
        for i in range(5):
            q.push(sample(i))
        assert [s for _, s in q.peek(10)] == [sample(i) for i in range(5)]

    def test_peek_is_repeatable(self, q):
        for i in range(5):
            q.push(sample(i))
        assert q.peek(3) == q.peek(3)
        assert len(q) == 5

    def test_peek_requires_positive(self, q):
        with pytest.raises(ValueError):
            q.peek(0)

    def test_drain(self, q):
        for i in range(10):
            q.push(sample(i))
        q.ack(10)
        assert len(q) == 0 and q.head == q.tail == 10

    def test_ack_zero_keeps_data(self, q):
        for i in range(3):
            q.push(sample(i))
        before = q.peek(3)
        q.ack(0)
        assert q.peek(3) == before

    def test_ack_overrun(self, q):
        q.push(sample(0))
        with pytest.raises(AckOverrun):
            q.ack(2)
        assert len(q) == 1

    def test_negative_ack(self, q):
        with pytest.raises(ValueError):
            q.ack(-1)

    def test_full_disk(self, path):
        q = DurableQueue.recover(path, max_bytes=len(GOLDEN) * 2 + 10)
        q.push(sample(1))
        q.push(sample(2))
        with pytest.raises(StorageFailure):
            q.push(sample(3))
        assert len(q) == 2
        assert len(kill(q)) == 2

    def test_write_error_leaves_no_trace(self, q, monkeypatch):
        q.push(sample(0))
        size = q.log_path.stat().st_size

        real_write = os.write

        def broken(fd, data):
            real_write(fd, data[:5])
            raise OSError(28, "No space left on device")

        monkeypatch.setattr(os, "write", broken)
        with pytest.raises(StorageFailure):
            q.push(sample(1))
        monkeypatch.undo()
        assert q.log_path.stat().st_size == size
        assert len(q) == 1
        q.push(sample(2))
        assert [s for _, s in kill(q).peek(5)] == [sample(0), sample(2)]


class TestRecovery:
    def test_push_kill_recover(self, q):
        q.push(sample(7))
        r = kill(q)
        assert len(r) == 1 and r.peek(1)[0][1] == sample(7)

    def test_partial_ack_survives(self, q):
        for i in range(1, 11):
            q.push(sample(i))
        q.ack(4)
        r = kill(q)
        assert len(r) == 6
        assert [s for _, s in r.peek(10)] == [sample(i) for i in range(5, 11)]
        assert r.head == 4 and r.tail == 10

    def test_idempotent(self, q):
        for i in range(5):
            q.push(sample(i))
        q.ack(2)
        a = kill(q)
        state = (a.head, a.tail, a.records())
        b = kill(a)
        assert (b.head, b.tail, b.records()) == state

    def test_acked_never_reappear(self, q):
        for i in range(6):
            q.push(sample(i))
        q.ack(6)
        q.push(sample(6))
        assert kill(q).records() == [sample(6)]

    def test_every_truncation_point(self, tmp_path):
        src = tmp_path / "src.log"
        with DurableQueue.recover(src) as q:
            for i in range(3):
                q.push(sample(i))
        data = src.read_bytes()
        bounds = [0]
        for i in range(3):
            bounds.append(bounds[-1] + len(encode_record(sample(i).to_bytes())))
        assert bounds[-1] == len(data)
        for cut in range(len(data) + 1):
            log = tmp_path / f"cut{cut}.log"
            log.write_bytes(data[:cut])
            complete = sum(1 for b in bounds[1:] if b <= cut)
            with DurableQueue.recover(log) as r:
                assert r.records() == [sample(i) for i in range(complete)], cut
                assert log.stat().st_size == bounds[complete]
                r.push(sample(9))
            assert records_on_disk(log)[-1] == sample(9)

    def test_corrupt_checksum_truncates(self, q):
        for i in range(3):
            q.push(sample(i))
        q.close()
        raw = bytearray(q.log_path.read_bytes())
        raw[-1] ^= 0xFF
        q.log_path.write_bytes(bytes(raw))
        assert DurableQueue.recover(q.log_path).records() == [sample(0), sample(1)]

    def test_unreadable_sidecar(self, q):
        q.push(sample(0))
        q.ack(1)
        q.sidecar_path.write_bytes(b"\x00" * 5)
        with pytest.raises(CorruptLog):
            kill(q)

    def test_head_past_torn_tail_is_clamped(self, q):
        for i in range(3):
            q.push(sample(i))
        q.ack(3)
        q.close()
        q.log_path.write_bytes(q.log_path.read_bytes()[:10])
        r = DurableQueue.recover(q.log_path)
        assert len(r) == 0
        r.push(sample(5))
        assert r.records() == [sample(5)]

    def test_scan_log(self):
        payloads, valid = scan_log(GOLDEN + GOLDEN[:7])
        assert len(payloads) == 1 and valid == len(GOLDEN)


class TestCompaction:
    def test_log_shrinks(self, path):
        q = DurableQueue.recover(path, compact_bytes=200)
        for i in range(20):
            q.push(sample(i))
        q.ack(15)
        assert path.stat().st_size < 6 * len(GOLDEN)
        r = kill(q)
        assert r.records() == [sample(i) for i in range(15, 20)]
        assert (r.head, r.tail) == (15, 20)

    def test_crash_before_sidecar_commit(self, path):
        q = DurableQueue.recover(path, compact_bytes=10**9)
        for i in range(6):
            q.push(sample(i))
        q.ack(4)
        # an interrupted rewrite: pending file written, sidecar still old
        pending = path.with_name(path.name + ".compact-4")
        pending.write_bytes(b"".join(encode_record(sample(i).to_bytes()) for i in (4, 5)))
        r = kill(q)
        assert not pending.exists()
        assert r.records() == [sample(4), sample(5)]

    def test_crash_after_sidecar_commit(self, path):
        q = DurableQueue.recover(path, compact_bytes=10**9)
        for i in range(6):
            q.push(sample(i))
        q.ack(4)
        pending = path.with_name(path.name + ".compact-4")
        pending.write_bytes(b"".join(encode_record(sample(i).to_bytes()) for i in (4, 5)))
        q._write_sidecar(4, 4)
        r = kill(q)
        assert not pending.exists()
        assert r.records() == [sample(4), sample(5)]
        assert (r.head, r.tail) == (4, 6)


class TestConcurrency:
    def test_writer_and_acker(self, path):
        q = DurableQueue.recover(path, fsync=False, compact_bytes=4096)
        seen = []

        def writer():
            for i in range(500):
                q.push(sample(i))

        def reader():
            while len(seen) < 500:
                batch = q.peek(7) if len(q) else []
                seen.extend(s for _, s in batch)
                q.ack(len(batch))

        threads = [threading.Thread(target=writer), threading.Thread(target=reader)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=30)
        assert seen == [sample(i) for i in range(500)]
        assert len(kill(q)) == 0


@pytest.mark.fuzz
class TestTraceChecker:
    """Random push/peek/ack/kill schedules checked against an in-memory model."""

    def run_schedule(self, seed: int, tmp_path) -> None:
        rnd = random.Random(seed)
        path = tmp_path / f"s{seed}.log"
        q = DurableQueue.recover(path, fsync=False, compact_bytes=rnd.choice([256, 1 << 20]))
        model: list[DataSample] = []
        served_once: set[DataSample] = set()
        n = 0
        for _ in range(rnd.randint(5, 40)):
            op = rnd.random()
            if op < 0.45:
                s = sample(n)
                n += 1
                q.push(s)
                model.append(s)
            elif op < 0.65:
                want = rnd.randint(1, 6)
                got = [s for _, s in q.peek(want)]
                assert got == model[:want]
                served_once.update(got)
            elif op < 0.85:
                k = rnd.randint(0, len(model))
                q.ack(k)
                del model[:k]
            else:
                if rnd.random() < 0.5:
                    # a push that never returned: partial record on disk
                    with open(path, "ab") as f:
                        f.write(encode_record(sample(10**6).to_bytes())[: rnd.randint(1, 30)])
                q = kill(q)
            assert len(q) == len(model)
        assert kill(q).records() == model

    def test_thousand_schedules(self, tmp_path):
        for seed in range(1000):
            self.run_schedule(seed, tmp_path)


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from(["push", "ack"]), st.integers(0, 5)), max_size=30))
    def test_fifo(self, tmp_path_factory, ops):
        path = tmp_path_factory.mktemp("fifo") / "q.log"
        q = DurableQueue.recover(path, fsync=False)
        model, n = [], 0
        for op, arg in ops:
            if op == "push":
                for _ in range(arg):
                    q.push(sample(n))
                    model.append(sample(n))
                    n += 1
            else:
                k = min(arg, len(model))
                q.ack(k)
                del model[:k]
            assert q.records() == model
            assert q.head <= q.tail and len(q) == q.tail - q.head
        q.close()
