"""Deterministic discrete-event backbone.

Virtual time is an integer millisecond counter; there are no floats in the
clock. Events are totally ordered by (timestamp, schedule sequence), so two
events scheduled for the same millisecond dispatch in schedule order. All
simulated components write to one append-only event log whose serialized
form is byte-stable: a run's log is a pure function of (scenario, seed).

Randomness is counter-based: ``rng_next(stream)`` hashes
(seed, stream name, per-stream call index), so each named stream is an
independent deterministic sequence and adding a consumer never perturbs
another stream.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import SimError

Timestamp = int

_SCALAR_TYPES = (str, int, float, bool, type(None))


class PastEvent(SimError):
    """Raised when an event is scheduled before the current clock."""


class UnknownTarget(SimError):
    """Raised when an event is dispatched to an unregistered component."""


@dataclass(frozen=True)
class SimEvent:
    ts: Timestamp
    seq: int
    target: str
    kind: str
    payload: dict = field(default_factory=dict)


class Kernel:
    """Virtual clock, ordered event queue, seeded RNG streams, event log."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.clock: Timestamp = 0
        self._queue: list[tuple[int, int, SimEvent]] = []
        self._next_seq = 0
        self._handlers: dict[str, Callable[[SimEvent], None]] = {}
        self._records: list[dict] = []
        self._rng_counters: dict[str, int] = {}
        # Notification hook for live consumers (the control API's event feed);
        # must not influence simulation state.
        self.on_record: Callable[[dict], None] | None = None

    # -- event queue ------------------------------------------------------

    def register(self, component_id: str, handler: Callable[[SimEvent], None]) -> None:
        if component_id in self._handlers:
            raise ValueError(f"component already registered: {component_id}")
        self._handlers[component_id] = handler

    def schedule(self, ts: Timestamp, target: str, kind: str, payload: dict | None = None) -> SimEvent:
        """Enqueue an event at absolute virtual time ``ts``."""
        ts = int(ts)
        if ts < self.clock:
            raise PastEvent(f"cannot schedule at t={ts}ms, clock is {self.clock}ms")
        ev = SimEvent(ts=ts, seq=self._next_seq, target=target, kind=kind, payload=payload or {})
        self._next_seq += 1
        heapq.heappush(self._queue, (ev.ts, ev.seq, ev))
        return ev

    def after(self, delay_ms: int, target: str, kind: str, payload: dict | None = None) -> SimEvent:
        return self.schedule(self.clock + int(delay_ms), target, kind, payload)

    def run_until(self, t_end: Timestamp) -> int:
        """Dispatch every event with ts <= t_end in (ts, seq) order.

        Leaves the clock at exactly t_end and returns the dispatch count.
        """
        t_end = int(t_end)
        dispatched = 0
        while self._queue and self._queue[0][0] <= t_end:
            _, _, ev = heapq.heappop(self._queue)
            self.clock = ev.ts
            handler = self._handlers.get(ev.target)
            if handler is None:
                raise UnknownTarget(f"no component registered as {ev.target!r}")
            handler(ev)
            dispatched += 1
        if t_end > self.clock:
            self.clock = t_end
        return dispatched

    def pending(self) -> int:
        return len(self._queue)

    # -- randomness -------------------------------------------------------

    def rng_next(self, stream: str) -> int:
        """Next unsigned 64-bit value of the named stream."""
        index = self._rng_counters.get(stream, 0)
        self._rng_counters[stream] = index + 1
        material = f"{self.seed}\x1f{stream}\x1f{index}".encode("utf-8")
        return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")

    # -- event log --------------------------------------------------------

    def log(self, component: str, event: str, **fields: Any) -> dict:
        """Append one record at the current clock. Field values must be scalars."""
        for key, value in fields.items():
            if not isinstance(value, _SCALAR_TYPES):
                raise TypeError(f"log field {key!r} must be a scalar, got {type(value).__name__}")
        record = {"component": component, "event": event, "fields": fields, "ts": self.clock}
        self._records.append(record)
        if self.on_record is not None:
            self.on_record(record)
        return record

    @property
    def records(self) -> list[dict]:
        return self._records

    def to_jsonl(self) -> bytes:
        """Newline-delimited JSON, keys sorted; the golden determinism artifact."""
        lines = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self._records]
        return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""
