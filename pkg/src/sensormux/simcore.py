"""Deterministic discrete-event engine.

Time is an unsigned integer count of microseconds. Events with equal
``fire_at`` fire in insertion order. Randomness comes from :class:`SeededRng`,
which wraps CPython's Mersenne Twister (MT19937) so that a seed fixes the draw
sequence on every platform.
"""
from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Callable

MAX_TIME = 2**64 - 1


class SimError(Exception):
    pass


class SchedulingInPast(SimError):
    pass


class SimTimeOverflow(SimError, OverflowError):
    pass


def check_time(t: int) -> int:
    if t < 0:
        raise ValueError(f"negative simulation time {t}")
    if t > MAX_TIME:
        raise SimTimeOverflow(f"simulation time {t} exceeds 64-bit range")
    return t


@dataclass(eq=False)
class SimEvent:
    fire_at: int
    target: Callable[["SimEvent"], Any]
    payload: Any = None
    cancelled: bool = field(default=False, repr=False)


class SeededRng:
    """Portable seeded generator (MT19937 via :mod:`random`)."""

    def __init__(self, seed: int = 0):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self._r = random.Random(seed)

    def random(self) -> float:
        return self._r.random()

    def gauss(self, sigma: float = 1.0) -> float:
        return self._r.gauss(0.0, sigma)

    def uniform_int(self, lo: int, hi: int) -> int:
        """Integer in ``[lo, hi]``."""
        return self._r.randint(lo, hi)

    def bits(self, n: int) -> str:
        return "".join("1" if self._r.random() < 0.5 else "0" for _ in range(n))

    def choice(self, seq):
        return self._r.choice(seq)


class Engine:
    """Single-threaded event loop.

    >>> eng = Engine()
    >>> fired = []
    >>> _ = eng.schedule_at(5, lambda ev: fired.append(ev.fire_at))
    >>> eng.run_until(10), eng.now, fired
    (1, 10, [5])
    """

    def __init__(self, seed: int = 0, trace: bool = False):
        self.now = 0
        self.rng = SeededRng(seed)
        self._queue: list[tuple[int, int, SimEvent]] = []
        self._counter = itertools.count()
        self.trace: list[tuple[int, str, Any]] | None = [] if trace else None

    def schedule(self, event: SimEvent) -> SimEvent:
        check_time(event.fire_at)
        if event.fire_at < self.now:
            raise SchedulingInPast(f"fire_at={event.fire_at} < now={self.now}")
        heapq.heappush(self._queue, (event.fire_at, next(self._counter), event))
        return event

    def schedule_at(self, t: int, target, payload=None) -> SimEvent:
        return self.schedule(SimEvent(t, target, payload))

    def schedule_in(self, delay: int, target, payload=None) -> SimEvent:
        return self.schedule(SimEvent(self.now + delay, target, payload))

    @staticmethod
    def cancel(handle: SimEvent) -> None:
        handle.cancelled = True

    def pending(self) -> int:
        return sum(1 for _, _, ev in self._queue if not ev.cancelled)

    def run_until(self, t: int) -> int:
        check_time(t)
        if t < self.now:
            raise SchedulingInPast(f"run_until({t}) with now={self.now}")
        queue = self._queue
        fired = 0
        while queue and queue[0][0] <= t:
            fire_at, _, ev = heapq.heappop(queue)
            if ev.cancelled:
                continue
            self.now = fire_at
            if self.trace is not None:
                self.trace.append((fire_at, getattr(ev.target, "__qualname__", repr(ev.target)), ev.payload))
            ev.target(ev)
            fired += 1
        self.now = t
        return fired
