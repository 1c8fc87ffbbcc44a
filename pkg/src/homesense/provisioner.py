"""Gateway broadcaster and sensor listener for covert-channel provisioning.

The gateway repeats the sealed credentials in rounds.  Each round gets a new
IV and global sequence number and flips the header flag; every
``escalation_period`` rounds it moves one step up the loss table so stubborn
sensors get more redundancy.  Sensors hop channels, keep the frames of the
current round, and try to decode once they hold ``k`` distinct blocks.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

from .covert_frame import CovertFrame, FrameHeader, build_frame, pack_header, parse_frame
from .cred_envelope import (
    DEFAULT_LOSS_TABLE,
    Credentials,
    FecParams,
    KeyPair,
    LossTable,
    RandomSource,
    SealedMessage,
    decode_blocks,
    encode_blocks,
    fec_params,
    params_for,
    seal,
    unseal,
)
from .errors import (
    AuthFailure,
    CorruptLengthPrefix,
    CorruptPadding,
    InsufficientBlocks,
    MalformedMessage,
    MalformedPlaintext,
    MessageTooLarge,
    ReplayDetected,
    UnknownSensor,
)

log = logging.getLogger(__name__)

CHANNELS = tuple(range(1, 12))
MAX_LOSS_INDEX = 3


class EventKind(str, enum.Enum):
    IGNORED = "ignored"
    BUFFERED = "buffered"
    CREDENTIALS_RECOVERED = "credentials_recovered"
    AUTH_FAILURE = "auth_failure"
    REPLAY_DETECTED = "replay_detected"
    DECODE_FAILED = "decode_failed"


@dataclass(frozen=True)
class ProvisionEvent:
    kind: EventKind
    count: int = 0
    credentials: Credentials | None = None
    global_seq: int | None = None

    def log_line(self, ts: float, sensor: str) -> str:
        return f"ts={ts:.3f} sensor={sensor} event={self.kind.value}"


@dataclass(frozen=True)
class ProvisionStatus:
    connected: frozenset[str]
    expected: frozenset[str]

    @property
    def done(self) -> bool:
        return self.connected == self.expected


@dataclass
class GatewayProvisionState:
    keys: KeyPair
    id: int
    loss_table: LossTable = DEFAULT_LOSS_TABLE
    escalation_period: int = 5
    expected_sensors: set[str] = field(default_factory=set)
    loss_index: int = 0
    flag: int = 0
    last_global_seq: int = 0
    connected_sensors: set[str] = field(default_factory=set)
    rounds_sent: int = 0

    def __post_init__(self):
        if self.escalation_period < 1:
            raise ValueError("escalation_period must be positive")

    def emit_round(self, creds: Credentials, now: int, rng: RandomSource | None = None) -> list[CovertFrame]:
        """Seal, encode and packetize one round, then advance flag and escalation."""
        seq = now if now > self.last_global_seq else self.last_global_seq + 1
        sealed = seal(creds, self.keys, seq, rng).to_bytes()
        params = self._fit(len(sealed))
        frames = [
            build_frame(
                pack_header(FrameHeader(self.id, self.flag, params.loss_index, params.m, i)),
                chunk,
            )
            for i, chunk in enumerate(encode_blocks(sealed, params))
        ]
        self.last_global_seq = seq
        self.flag ^= 1
        self.rounds_sent += 1
        if self.rounds_sent % self.escalation_period == 0 and self.loss_index < MAX_LOSS_INDEX:
            self.loss_index += 1
            log.debug("escalating to loss index %d after %d rounds", self.loss_index, self.rounds_sent)
        return frames

    def _fit(self, msg_len: int) -> FecParams:
        # fall back to the strongest index that still fits in one exchange
        for index in range(self.loss_index, -1, -1):
            try:
                return fec_params(msg_len, index, self.loss_table)
            except MessageTooLarge:
                if index == 0:
                    raise
        raise AssertionError("unreachable")

    def note_connected(self, sensor: str) -> ProvisionStatus:
        if sensor not in self.expected_sensors:
            raise UnknownSensor(sensor)
        self.connected_sensors.add(sensor)
        return ProvisionStatus(frozenset(self.connected_sensors), frozenset(self.expected_sensors))


@dataclass
class SensorProvisionState:
    keys: KeyPair
    id: int
    loss_table: LossTable = DEFAULT_LOSS_TABLE
    dwell: float = 5.0
    last_seq: int = 0
    current_flag: int | None = None
    current_params: tuple[int, int] | None = None
    buffer: dict[int, bytes] = field(default_factory=dict)
    attempted: bool = False
    last_packet: int | None = None
    credentials: Credentials | None = None

    def scan_step(self, now: float) -> int:
        """Channel to listen on at ``now``: round-robin over 1..11, ``dwell`` seconds each."""
        return CHANNELS[int(now // self.dwell) % len(CHANNELS)]

    def ingest(self, frame: CovertFrame, now: float = 0.0) -> ProvisionEvent:
        parsed = parse_frame(frame, self.id)
        if parsed is None:
            return ProvisionEvent(EventKind.IGNORED)
        header, chunk = parsed
        if not header.is_valid:
            return ProvisionEvent(EventKind.IGNORED)

        params_key = (header.total, header.fec_index)
        # packets of one round arrive in increasing seq order, so a step back
        # means a new round even when flag and parameters happen to match
        went_back = self.last_packet is not None and header.seq < self.last_packet
        if header.flag != self.current_flag or params_key != self.current_params or went_back:
            self.current_flag = header.flag
            self.current_params = params_key
            self.buffer = {}
            self.attempted = False
        self.last_packet = header.seq
        if self.attempted:
            # one decode attempt per round; the rest of the round is noise
            return ProvisionEvent(EventKind.IGNORED)

        self.buffer.setdefault(header.seq, chunk)
        params = params_for(header.total, header.fec_index, self.loss_table)
        if len(self.buffer) < params.k:
            return ProvisionEvent(EventKind.BUFFERED, count=len(self.buffer))

        self.attempted = True
        return self._attempt(params)

    def _attempt(self, params: FecParams) -> ProvisionEvent:
        try:
            msg = SealedMessage.from_bytes(decode_blocks(self.buffer, params))
            creds = unseal(msg, self.keys, self.last_seq)
        except AuthFailure:
            return ProvisionEvent(EventKind.AUTH_FAILURE)
        except ReplayDetected:
            return ProvisionEvent(EventKind.REPLAY_DETECTED)
        except (InsufficientBlocks, CorruptLengthPrefix, CorruptPadding, MalformedMessage, MalformedPlaintext, ValueError):
            return ProvisionEvent(EventKind.DECODE_FAILED)
        self.last_seq = msg.global_seq
        self.credentials = creds
        self.buffer = {}
        return ProvisionEvent(EventKind.CREDENTIALS_RECOVERED, credentials=creds, global_seq=msg.global_seq)
