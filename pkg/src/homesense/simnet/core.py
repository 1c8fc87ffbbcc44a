"""Virtual clock, seeded Bernoulli loss and fault windows."""

from __future__ import annotations

import enum
import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from ..errors import PastEvent

# Measured provisioning loss (percent of frames missed by the receiver), by
# deployment location and distance from the access point.
LOSS_PRESETS: dict[str, float] = {
    "table-loss/loc1/close": 0.37,
    "table-loss/loc1/medium": 0.70,
    "table-loss/loc1/far": 0.93,
    "table-loss/loc2/close": 0.54,
    "table-loss/loc2/medium": 0.36,
    "table-loss/loc2/far": 0.99,
    "table-loss/loc3/close": 0.90,
    "table-loss/loc3/medium": 0.99,
    "table-loss/loc3/far": 1.00,
    "pi-vs-bbb/bbb/close": 0.37,
    "pi-vs-bbb/bbb/medium": 0.70,
    "pi-vs-bbb/bbb/far": 0.93,
    "pi-vs-bbb/pi/close": 0.018,
    "pi-vs-bbb/pi/medium": 0.108,
    "pi-vs-bbb/pi/far": 0.079,
}


class VirtualClock:
    """Discrete-event loop.  Same-time events fire in scheduling order."""

    def __init__(self, start: float = 0.0):
        self.now = start
        self._queue: list[tuple[float, int, Callable[..., Any], tuple]] = []
        self._seq = itertools.count()

    def schedule(self, at: float, fn: Callable[..., Any], *args) -> None:
        if at < self.now:
            raise PastEvent(f"cannot schedule at {at} before now={self.now}")
        heapq.heappush(self._queue, (at, next(self._seq), fn, args))

    def call_later(self, delay: float, fn: Callable[..., Any], *args) -> None:
        self.schedule(self.now + delay, fn, *args)

    def step(self) -> bool:
        if not self._queue:
            return False
        at, _, fn, args = heapq.heappop(self._queue)
        self.now = at
        fn(*args)
        return True

    def run(self, until: float | None = None) -> None:
        while self._queue and (until is None or self._queue[0][0] <= until):
            self.step()
        if until is not None and self.now < until:
            self.now = until

    def __len__(self) -> int:
        return len(self._queue)


@dataclass(frozen=True)
class LossModel:
    p: float = 0.0
    seed: int = 0
    kind: str = "bernoulli"

    def __post_init__(self):
        if self.kind != "bernoulli":
            raise ValueError(f"unsupported loss model {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"loss probability {self.p} outside [0, 1]")

    @classmethod
    def preset(cls, name: str, seed: int = 0) -> "LossModel":
        try:
            return cls(LOSS_PRESETS[name], seed)
        except KeyError:
            raise KeyError(f"unknown loss preset {name!r}; known: {', '.join(sorted(LOSS_PRESETS))}") from None


class Delivery(enum.Enum):
    DELIVERED = "delivered"
    DROPPED = "dropped"


@dataclass
class Channel:
    """A shared medium; each listener draws its drops from its own stream."""

    name: str
    model: LossModel = field(default_factory=LossModel)
    _streams: dict[str, random.Random] = field(default_factory=dict, repr=False)

    def stream(self, listener: str) -> random.Random:
        rng = self._streams.get(listener)
        if rng is None:
            rng = self._streams[listener] = random.Random(f"{self.model.seed}/{self.name}/{listener}")
        return rng

    def deliver(self, msg: Any, listener: str) -> Delivery:
        return deliver(self, msg, self.model, self.stream(listener))


def deliver(channel: Channel | None, msg: Any, model: LossModel, rng: random.Random) -> Delivery:
    # one draw per call even when the outcome is forced, so streams stay aligned
    draw = rng.random()
    return Delivery.DROPPED if draw < model.p else Delivery.DELIVERED


class FaultKind(str, enum.Enum):
    POWER_LOSS = "power_loss"
    NET_DISCONNECT = "net_disconnect"
    INTERNET_DISCONNECT = "internet_disconnect"


@dataclass(frozen=True)
class FaultWindow:
    target: str
    kind: FaultKind
    start: float
    end: float

    def __post_init__(self):
        object.__setattr__(self, "kind", FaultKind(self.kind))
        if not self.start < self.end:
            raise ValueError(f"fault window start {self.start} must precede end {self.end}")

    def active(self, t: float) -> bool:
        return self.start <= t < self.end
