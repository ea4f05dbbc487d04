"""Deterministic single-threaded event queue.

All simulation time is kept in integer femtoseconds so that both the
312.5 ps accelerator clock and the 625 ps DRAM clock tick on exact
integers.  Ties are broken by insertion order, which makes every run
bit-reproducible.
"""

import heapq
from typing import Callable

FS_PER_NS = 1_000_000
FS_PER_PS = 1_000


class EventQueue:
    def __init__(self):
        self._heap: list = []
        self._seq = 0
        self.now = 0

    def schedule(self, t: int, fn: Callable[[], None]) -> None:
        if t < self.now:
            raise ValueError(f"scheduling into the past: {t} < {self.now}")
        heapq.heappush(self._heap, (t, self._seq, fn))
        self._seq += 1

    def after(self, delay: int, fn: Callable[[], None]) -> None:
        self.schedule(self.now + delay, fn)

    def __len__(self) -> int:
        return len(self._heap)

    def run(self, until: int | None = None) -> None:
        """Drain the queue; stop early when `until` (fs) is reached."""
        while self._heap:
            t, _, fn = self._heap[0]
            if until is not None and t > until:
                self.now = until
                return
            heapq.heappop(self._heap)
            self.now = t
            fn()


class Notifier:
    """One-shot waiter list used for backpressure wakeups.

    Subscribers are invoked synchronously in subscription order when
    `fire` runs; a callback that still cannot proceed re-subscribes.
    """

    def __init__(self):
        self._waiters: list = []

    def wait(self, fn: Callable[[], None]) -> None:
        self._waiters.append(fn)

    def fire(self) -> None:
        if not self._waiters:
            return
        waiters, self._waiters = self._waiters, []
        for fn in waiters:
            fn()

    def __bool__(self) -> bool:
        return bool(self._waiters)
