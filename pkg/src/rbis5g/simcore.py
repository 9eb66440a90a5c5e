"""Deterministic discrete-event scheduler and seeded random streams.

Simulation time is an integer number of picoseconds. Events with the same
firing time are dispatched in insertion order, so a run is a pure function of
its configuration and seed.
"""
from __future__ import annotations

import heapq
import zlib
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, TextIO

import numpy as np

PS_PER_NS = 1_000
PS_PER_US = 1_000_000
PS_PER_MS = 1_000_000_000
PS_PER_S = 1_000_000_000_000

MASK64 = (1 << 64) - 1


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current simulation time."""


def seconds(value: float) -> int:
    return int(round(value * PS_PER_S))


def splitmix64(x: int) -> int:
    """One round of the splitmix64 mixer on a 64-bit integer."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Sub-seed for variant ``index`` of a sweep run under ``seed``."""
    return splitmix64((seed & MASK64) ^ splitmix64(index & MASK64))


def rng_stream(seed: int, stream_id: str) -> np.random.Generator:
    """Independent generator for one node; same (seed, stream_id) gives same draws."""
    key = zlib.crc32(stream_id.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed & MASK64, key]))


@dataclass(order=True)
class Event:
    fire_at: int
    seq: int
    target: str = field(compare=False)
    payload: Any = field(compare=False)
    callback: Optional[Callable[["Event"], None]] = field(compare=False, default=None)
    cancelled: bool = field(compare=False, default=False)

    @property
    def kind(self) -> str:
        if isinstance(self.payload, str):
            return self.payload
        return type(self.payload).__name__


class Scheduler:
    """Single global event queue ordered by (fire_at, seq)."""

    def __init__(self, log: Optional[TextIO] = None):
        self.now = 0
        self._queue: list[Event] = []
        self._seq = 0
        self._log = log
        self.dispatched = 0

    def __len__(self) -> int:
        return sum(1 for e in self._queue if not e.cancelled)

    def schedule(self, fire_at: int, target: str, payload: Any,
                 callback: Optional[Callable[[Event], None]] = None) -> Event:
        """Enqueue an event; the returned event doubles as a cancellation handle."""
        if not isinstance(fire_at, (int, np.integer)):
            raise TypeError(f"fire_at must be integer picoseconds, got {type(fire_at).__name__}")
        fire_at = int(fire_at)
        if fire_at < self.now:
            raise SchedulingError(
                f"event for {target!r} at {fire_at} ps is before now={self.now} ps")
        event = Event(fire_at, self._seq, target, payload, callback)
        self._seq += 1
        heapq.heappush(self._queue, event)
        return event

    def schedule_in(self, delay: int, target: str, payload: Any,
                    callback: Optional[Callable[[Event], None]] = None) -> Event:
        return self.schedule(self.now + int(delay), target, payload, callback)

    @staticmethod
    def cancel(event: Event) -> None:
        event.cancelled = True

    def run_until(self, t_end: int) -> int:
        """Dispatch every event with ``fire_at <= t_end``; returns the count."""
        count = 0
        while self._queue and self._queue[0].fire_at <= t_end:
            event = heapq.heappop(self._queue)
            if event.cancelled:
                continue
            self.now = event.fire_at
            if self._log is not None:
                self._log.write(f"{event.fire_at}\t{event.target}\t{event.kind}\n")
            if event.callback is not None:
                event.callback(event)
            count += 1
        # the clock never runs past the last dispatched event
        self.dispatched += count
        return count
