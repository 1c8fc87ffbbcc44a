"""Round-level provisioning trials: one gateway, one listener, i.i.d. frame loss.

Channel scanning is left out; the listener hears every round it does not
lose frames of.  Used for the liveness and escalation measurements.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..cred_envelope import DEFAULT_LOSS_TABLE, Credentials, KeyPair, LossTable
from ..provisioner import EventKind, GatewayProvisionState, SensorProvisionState
from .core import Channel, Delivery, LossModel

EPOCH = 1_600_000_000


@dataclass
class TrialResult:
    recovered_round: int | None
    loss_index_at_recovery: int | None
    outcomes: list[tuple[int, str]] = field(default_factory=list)  # (loss index, event kind) per decode attempt

    @property
    def recovered(self) -> bool:
        return self.recovered_round is not None


def provisioning_trial(
    p: float,
    seed: int,
    *,
    max_rounds: int = 20,
    keys: KeyPair | None = None,
    creds: Credentials | None = None,
    table: LossTable = DEFAULT_LOSS_TABLE,
    escalation_period: int = 5,
    round_seconds: float = 1.0,
) -> TrialResult:
    keys = keys or KeyPair.derive(b"trial household")
    creds = creds or Credentials("Home", "secret123")
    gw = GatewayProvisionState(keys=keys, id=1, loss_table=table, escalation_period=escalation_period)
    sensor = SensorProvisionState(keys=keys, id=1, loss_table=table)
    air = Channel("air", LossModel(p, seed))
    iv = random.Random(f"{seed}/iv")
    outcomes = []
    for r in range(1, max_rounds + 1):
        now = r * round_seconds
        index = gw.loss_index
        for frame in gw.emit_round(creds, EPOCH + int(now), iv):
            if air.deliver(frame, "sensor") is Delivery.DROPPED:
                continue
            ev = sensor.ingest(frame, now)
            if ev.kind in (EventKind.IGNORED, EventKind.BUFFERED):
                continue
            outcomes.append((index, ev.kind.value))
            if ev.kind is EventKind.CREDENTIALS_RECOVERED:
                return TrialResult(r, index, outcomes)
    return TrialResult(None, None, outcomes)
