"""Crash-safe FIFO with peek / acknowledge-delete semantics.

Data lives in an append-only log of records::

    [payload length: u32 BE][crc32(payload): u32 BE][payload]

next to a 16-byte sidecar ``<log>.head`` holding two u64 BE values: the first
unacknowledged offset (head) and the offset of the first record still in the
log file (base).  The sidecar is replaced atomically on every ack.

A torn tail (partial header, partial payload or bad checksum) is truncated
on recovery; only a record whose ``push`` never returned can be lost that way.
Once the acknowledged prefix grows past ``compact_bytes`` the log is rewritten
without it.  The rewrite goes to ``<log>.compact-<base>`` first; the sidecar
replacement is the commit point and recovery finishes or discards a pending
rewrite accordingly.
"""

from __future__ import annotations

import logging
import os
import struct
import threading
import zlib
from collections import deque
from dataclasses import dataclass
from pathlib import Path

from .errors import AckOverrun, CorruptLog, StorageFailure

log = logging.getLogger(__name__)

RECORD_HEADER = struct.Struct(">II")
SIDECAR = struct.Struct(">QQ")
SEP = "\x1f"
DEFAULT_COMPACT_BYTES = 1 << 20


@dataclass(frozen=True)
class DataSample:
    sensor_id: str
    metric: str
    value: float
    measured_at: int

    def __post_init__(self):
        # a float timestamp would persist as "16.0" and fail to parse on recovery
        if not isinstance(self.measured_at, int) or isinstance(self.measured_at, bool):
            raise TypeError(f"measured_at must be an int, got {type(self.measured_at).__name__}")
        if self.measured_at <= 0:
            raise ValueError("measured_at must be a positive epoch timestamp")
        if not self.metric:
            raise ValueError("metric must not be empty")
        if SEP in self.sensor_id or SEP in self.metric:
            raise ValueError("unit separator is reserved")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.sensor_id, self.metric, self.measured_at)

    def to_bytes(self) -> bytes:
        return SEP.join((self.sensor_id, self.metric, repr(float(self.value)), str(self.measured_at))).encode()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "DataSample":
        sensor_id, metric, value, measured_at = raw.decode().split(SEP)
        return cls(sensor_id, metric, float(value), int(measured_at))


def encode_record(payload: bytes) -> bytes:
    return RECORD_HEADER.pack(len(payload), zlib.crc32(payload)) + payload


def scan_log(data: bytes) -> tuple[list[bytes], int]:
    """Split raw log bytes into valid payloads; returns (payloads, valid byte length)."""
    payloads = []
    pos = 0
    while pos + RECORD_HEADER.size <= len(data):
        length, crc = RECORD_HEADER.unpack_from(data, pos)
        end = pos + RECORD_HEADER.size + length
        if end > len(data):
            break
        payload = data[pos + RECORD_HEADER.size : end]
        if zlib.crc32(payload) != crc:
            break
        payloads.append(payload)
        pos = end
    return payloads, pos


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


class DurableQueue:
    """Persistent peek/ack queue.  Open one with :meth:`recover`.

    ``fsync=False`` keeps every write in the OS page cache only, which
    survives process kills but not a real power cut; the simulator uses it.
    ``max_bytes`` emulates a full disk.
    """

    def __init__(
        self,
        log_path: str | os.PathLike,
        *,
        fsync: bool = True,
        compact_bytes: int = DEFAULT_COMPACT_BYTES,
        max_bytes: int | None = None,
    ):
        self.log_path = Path(log_path)
        self.sidecar_path = self.log_path.with_name(self.log_path.name + ".head")
        self.fsync = fsync
        self.compact_bytes = compact_bytes
        self.max_bytes = max_bytes
        self._lock = threading.Lock()
        self._records: deque[tuple[int, DataSample, int]] = deque()
        self._head = 0
        self._base = 0
        self._tail = 0
        self._acked_bytes = 0  # bytes of acked records still in the log file
        self._size = 0
        self._fd = -1

    @classmethod
    def recover(cls, log_path: str | os.PathLike, **kwargs) -> "DurableQueue":
        q = cls(log_path, **kwargs)
        q._load()
        return q

    # -- recovery -----------------------------------------------------------

    def _read_sidecar(self) -> tuple[int, int]:
        try:
            raw = self.sidecar_path.read_bytes()
        except FileNotFoundError:
            return 0, 0
        except OSError as exc:
            raise CorruptLog(f"cannot read {self.sidecar_path}: {exc}") from exc
        if len(raw) != SIDECAR.size:
            raise CorruptLog(f"{self.sidecar_path} is {len(raw)} bytes, expected {SIDECAR.size}")
        head, base = SIDECAR.unpack(raw)
        if base > head:
            raise CorruptLog(f"{self.sidecar_path}: base {base} beyond head {head}")
        return head, base

    def _finish_compaction(self, base: int) -> None:
        prefix = self.log_path.name + ".compact-"
        for pending in sorted(self.log_path.parent.glob(prefix + "*")):
            if pending.name == f"{prefix}{base}":
                os.replace(pending, self.log_path)
                log.info("completed interrupted compaction of %s", self.log_path)
            else:
                pending.unlink()

    def _load(self) -> None:
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        head, base = self._read_sidecar()
        self._finish_compaction(base)
        data = self.log_path.read_bytes() if self.log_path.exists() else b""
        payloads, valid = scan_log(data)
        if valid != len(data):
            log.warning("truncating %d torn bytes from %s", len(data) - valid, self.log_path)
            with open(self.log_path, "r+b") as f:
                f.truncate(valid)
                if self.fsync:
                    os.fsync(f.fileno())
        tail = base + len(payloads)
        if head > tail:
            log.warning("head %d beyond last record %d in %s; clamping", head, tail, self.log_path)
            head = tail
        self._head, self._base, self._tail, self._size = head, base, tail, valid
        self._records.clear()
        self._acked_bytes = 0
        for i, payload in enumerate(payloads):
            offset = base + i
            nbytes = RECORD_HEADER.size + len(payload)
            if offset < head:
                self._acked_bytes += nbytes
            else:
                self._records.append((offset, DataSample.from_bytes(payload), nbytes))
        self._fd = os.open(self.log_path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)

    # -- queue operations ---------------------------------------------------

    def push(self, sample: DataSample) -> int:
        record = encode_record(sample.to_bytes())
        with self._lock:
            if self.max_bytes is not None and self._size + len(record) > self.max_bytes:
                raise StorageFailure(f"{self.log_path}: no space for {len(record)} more bytes")
            try:
                written = os.write(self._fd, record)
                if written != len(record):
                    raise OSError(f"short write ({written}/{len(record)})")
                if self.fsync:
                    os.fsync(self._fd)
            except OSError as exc:
                os.truncate(self.log_path, self._size)
                raise StorageFailure(str(exc)) from exc
            offset = self._tail
            self._records.append((offset, sample, len(record)))
            self._tail += 1
            self._size += len(record)
            return offset

    def peek(self, n: int) -> list[tuple[int, DataSample]]:
        if n < 1:
            raise ValueError("peek count must be at least 1")
        with self._lock:
            return [(offset, sample) for offset, sample, _ in list(self._records)[:n]]

    def ack(self, n: int) -> None:
        if n < 0:
            raise ValueError("ack count must not be negative")
        if n == 0:
            return
        with self._lock:
            if n > len(self._records):
                raise AckOverrun(f"ack {n} exceeds {len(self._records)} unacked records")
            try:
                self._write_sidecar(self._head + n, self._base)
            except OSError as exc:
                raise StorageFailure(f"cannot persist head: {exc}") from exc
            self._head += n
            for _ in range(n):
                self._acked_bytes += self._records.popleft()[2]
            if self._acked_bytes >= self.compact_bytes:
                self._compact()

    def __len__(self) -> int:
        return self._tail - self._head

    @property
    def head(self) -> int:
        return self._head

    @property
    def tail(self) -> int:
        return self._tail

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- internals ----------------------------------------------------------

    def _write_sidecar(self, head: int, base: int) -> None:
        tmp = self.sidecar_path.with_name(self.sidecar_path.name + ".tmp")
        with open(tmp, "wb") as f:
            f.write(SIDECAR.pack(head, base))
            if self.fsync:
                f.flush()
                os.fsync(f.fileno())
        os.replace(tmp, self.sidecar_path)
        if self.fsync:
            _fsync_dir(self.sidecar_path.parent)

    def _compact(self) -> None:
        new_base = self._head
        pending = self.log_path.with_name(f"{self.log_path.name}.compact-{new_base}")
        body = b"".join(encode_record(s.to_bytes()) for _, s, _ in self._records)
        with open(pending, "wb") as f:
            f.write(body)
            if self.fsync:
                f.flush()
                os.fsync(f.fileno())
        self._write_sidecar(self._head, new_base)
        os.close(self._fd)
        os.replace(pending, self.log_path)
        if self.fsync:
            _fsync_dir(self.log_path.parent)
        self._fd = os.open(self.log_path, os.O_WRONLY | os.O_APPEND)
        self._base = new_base
        self._size = len(body)
        self._acked_bytes = 0
        log.info("compacted %s to base offset %d", self.log_path, new_base)

    def records(self) -> list[DataSample]:
        """Every unacked sample, oldest first."""
        with self._lock:
            return [s for _, s, _ in self._records]


def records_on_disk(log_path: str | os.PathLike) -> list[DataSample]:
    """Read-only view of the unacked samples a recovery would restore."""
    path = Path(log_path)
    sidecar = path.with_name(path.name + ".head")
    head, base = SIDECAR.unpack(sidecar.read_bytes()) if sidecar.exists() else (0, 0)
    payloads, _ = scan_log(path.read_bytes() if path.exists() else b"")
    return [DataSample.from_bytes(p) for i, p in enumerate(payloads) if base + i >= head]

