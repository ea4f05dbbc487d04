"""Shared last-level cache presence model.

Set-associative with LRU replacement and a bounded MSHR file.  The
cache tracks presence and dirtiness only; data always lives in the
functional memory image.  Misses forward to DRAM through MSHRs (which
merge duplicate line misses); dirty victims generate writeback traffic.
"""

from collections import deque
from dataclasses import dataclass
from typing import Callable

from .config import LlcConfig
from .events import EventQueue, Notifier


@dataclass
class LlcStats:
    hits: int = 0
    misses: int = 0
    writebacks: int = 0
    mshr_stalls: int = 0


class LlcModel:
    def __init__(self, cfg: LlcConfig, eq: EventQueue, dram, cycle_fs: int):
        self.cfg = cfg
        self.eq = eq
        self.dram = dram
        self.latency_fs = cfg.latency_cycles * cycle_fs
        self.sets: list[dict[int, bool]] = [dict() for _ in range(cfg.num_sets)]
        self.mshrs: dict[int, list[tuple[str, Callable]]] = {}
        self.mshr_free = Notifier()
        self.stats = LlcStats()
        self._pending_dram: deque = deque()  # requests waiting for channel space
        self._retry_armed = False

    def _set_of(self, line_addr: int) -> dict[int, bool]:
        idx = (line_addr // self.cfg.line_bytes) % self.cfg.num_sets
        return self.sets[idx]

    def contains(self, line_addr: int) -> bool:
        """Presence snoop; does not disturb LRU order."""
        return line_addr in self._set_of(line_addr)

    def warm(self, line_addrs) -> None:
        """Preload clean lines (workload warm-up directive)."""
        for addr in line_addrs:
            self._insert(int(addr), dirty=False)

    # -- access path ---------------------------------------------------------

    def access(self, kind: str, line_addr: int, origin: str,
               done: Callable[[], None]) -> bool:
        """Lookup after the cache latency; False = MSHRs exhausted.

        `kind` is "read" or "write"; writes allocate on miss and mark
        the line dirty once present.
        """
        if line_addr in self.mshrs:
            # merge with the outstanding miss
            self.mshrs[line_addr].append((kind, done))
            return True
        if len(self.mshrs) >= self.cfg.mshrs:
            self.stats.mshr_stalls += 1
            return False
        self.eq.after(self.latency_fs, lambda: self._lookup(kind, line_addr, origin, done))
        self.mshrs[line_addr] = []
        return True

    def _lookup(self, kind: str, line_addr: int, origin: str, done) -> None:
        s = self._set_of(line_addr)
        if line_addr in s:
            self.stats.hits += 1
            # refresh LRU position
            dirty = s.pop(line_addr) or kind == "write"
            s[line_addr] = dirty
            waiters = self.mshrs.pop(line_addr)
            self.mshr_free.fire()
            done()
            for wkind, wdone in waiters:
                if wkind == "write":
                    s[line_addr] = True
                wdone()
            return
        self.stats.misses += 1
        self.mshrs[line_addr].insert(0, (kind, done))
        req = self.dram.make_request("read", line_addr, origin,
                                     callback=lambda r: self._fill(line_addr))
        self._to_dram(req)

    def _to_dram(self, req) -> None:
        # one armed retry regardless of queue depth; order is preserved
        if not self._pending_dram and self.dram.enqueue(req):
            return
        self._pending_dram.append(req)
        self._arm_retry()

    def _arm_retry(self) -> None:
        if self._retry_armed:
            return
        self._retry_armed = True
        self.dram.space.wait(self._retry_dram)

    def _retry_dram(self) -> None:
        self._retry_armed = False
        while self._pending_dram:
            if not self.dram.enqueue(self._pending_dram[0]):
                self._arm_retry()
                return
            self._pending_dram.popleft()

    def _fill(self, line_addr: int) -> None:
        self._insert(line_addr, dirty=False)
        s = self._set_of(line_addr)
        waiters = self.mshrs.pop(line_addr, [])
        self.mshr_free.fire()
        for kind, done in waiters:
            if kind == "write":
                s[line_addr] = True
            done()

    def _insert(self, line_addr: int, dirty: bool) -> None:
        s = self._set_of(line_addr)
        if line_addr in s:
            dirty = s.pop(line_addr) or dirty
            s[line_addr] = dirty
            return
        if len(s) >= self.cfg.associativity:
            victim, vdirty = next(iter(s.items()))  # insertion order == LRU order
            del s[victim]
            if vdirty:
                self.stats.writebacks += 1
                wb = self.dram.make_request("write", victim, "llc_writeback")
                self._to_dram(wb)
        s[line_addr] = dirty
