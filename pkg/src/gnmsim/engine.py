"""Discrete-event core: clock, ordered event queue, seeded random streams and
the task execution / failure model."""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .domain import NodeSpec, Task

log = logging.getLogger(__name__)


class EventKind(str, Enum):
    TASK_ARRIVAL = "TaskArrival"
    TASK_START = "TaskStart"
    TASK_FINISH = "TaskFinish"
    TASK_FAIL = "TaskFail"
    LOCAL_LOAD_CHANGE = "LocalLoadChange"
    ANNOUNCE_TICK = "AnnounceTick"
    RSA_TICK = "RsaTick"
    URGENT_CHANGE = "UrgentChange"
    JOB_SUBMITTED = "JobSubmitted"
    SCHEDULING_ROUND = "SchedulingRound"
    DEADLINE_CHECK = "DeadlineCheck"


@dataclass(frozen=True, order=True)
class Event:
    fire_at_s: float
    sequence: int
    kind: EventKind = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)


class SimulationError(RuntimeError):
    def __init__(self, event: Event, cause: BaseException):
        super().__init__(f"handler failed on {event.kind.value} seq={event.sequence} "
                         f"t={event.fire_at_s}: {cause!r}")
        self.event = event


class Simulator:
    """Single-threaded event loop. Ties on time dequeue in insertion order."""

    def __init__(self, trace: Optional[Callable[[dict], None]] = None):
        self.now = 0.0
        self._heap: list[Event] = []
        self._seq = 0
        self._handlers: dict[EventKind, Callable[[Event], None]] = {}
        self._trace = trace
        self.processed = 0

    def on(self, kind: EventKind, handler: Callable[[Event], None]) -> None:
        self._handlers[kind] = handler

    def schedule(self, fire_at_s: float, kind: EventKind, payload: Optional[dict] = None) -> Event:
        if fire_at_s < self.now:
            raise ValueError(f"cannot schedule {kind.value} at {fire_at_s} < now {self.now}")
        ev = Event(float(fire_at_s), self._seq, EventKind(kind), payload or {})
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def __len__(self) -> int:
        return len(self._heap)

    def peek_time(self) -> Optional[float]:
        return self._heap[0].fire_at_s if self._heap else None

    def step(self) -> Event:
        ev = heapq.heappop(self._heap)
        self.now = ev.fire_at_s
        if self._trace is not None:
            self._trace({"t": ev.fire_at_s, "seq": ev.sequence, "kind": ev.kind.value,
                         "payload": ev.payload})
        handler = self._handlers.get(ev.kind)
        if handler is not None:
            try:
                handler(ev)
            except Exception as exc:
                raise SimulationError(ev, exc) from exc
        self.processed += 1
        return ev

    def run_until(self, t_end_s: float) -> int:
        if t_end_s < self.now:
            raise ValueError(f"t_end {t_end_s} is before now {self.now}")
        n = 0
        while self._heap and self._heap[0].fire_at_s <= t_end_s:
            self.step()
            n += 1
        self.now = float(t_end_s)
        return n


def ndjson_writer(fh) -> Callable[[dict], None]:
    def write(record: dict) -> None:
        fh.write(json.dumps(record, sort_keys=True, default=str) + "\n")
    return write


class RngStream:
    """Independent random stream keyed by (seed, stream_id)."""

    def __init__(self, seed: int, stream_id: str):
        self.seed = int(seed)
        self.stream_id = str(stream_id)
        digest = hashlib.blake2b(self.stream_id.encode("utf-8"), digest_size=16).digest()
        words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, *words])
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def random(self) -> float:
        return float(self.gen.random())

    def uniform(self, low: float, high: float) -> float:
        return float(self.gen.uniform(low, high))

    def exponential(self, mean: float) -> float:
        return float(self.gen.exponential(mean))


class Outcome(str, Enum):
    WILL_SUCCEED = "WillSucceed"
    WILL_FAIL = "WillFail"


def execution_time(task: Task, node: NodeSpec) -> float:
    """Seconds to run ``task`` on ``node`` at its full grid rate (MI / MIPS)."""
    if not task.length_mi > 0:
        raise ValueError("task length must be > 0")
    if not node.grid_mips > 0:
        raise ValueError("grid_mips must be > 0")
    return task.length_mi / node.grid_mips


def sample_task_outcome(node: NodeSpec, rng: RngStream) -> Outcome:
    # random() is in [0, 1): dependability 1 never fails, 0 always fails
    return Outcome.WILL_SUCCEED if rng.random() < node.dependability else Outcome.WILL_FAIL


def transfer_time(size_units: float, dtr: float, rng: Optional[RngStream] = None,
                  jitter: float = 0.0) -> tuple[float, float]:
    """Dispatch delay and the perturbed rate it was computed with."""
    rate = dtr
    if rng is not None and jitter > 0:
        rate = dtr * rng.uniform(1.0 - jitter, 1.0 + jitter)
    return size_units / rate, rate
