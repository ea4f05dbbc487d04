"""Scratchpad tiles and the scalar register file.

Each tile holds TILE_SIZE raw 64-bit words; consumers reinterpret them
per the instruction's dtype.  A tile carries a size, a ready bit for
core synchronization, and one finish bit per element for element-level
producer/consumer handoff between functional units.  Finish waiters are
keyed by element so a stalled unit wakes exactly when its element lands.
"""

from typing import Callable, Optional

import numpy as np


class Tile:
    __slots__ = ("index", "capacity", "raw", "finish", "size", "size_known",
                 "ready", "_finish_waiters", "_ready_waiters", "_size_waiters")

    def __init__(self, index: int, capacity: int):
        self.index = index
        self.capacity = capacity
        self.raw = np.zeros(capacity, dtype=np.uint64)
        self.finish = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.size_known = True
        self.ready = True            # idle tiles look complete to WAIT
        self._finish_waiters: dict[int, list[Callable[[], None]]] = {}
        self._ready_waiters: list[Callable[[], None]] = []
        self._size_waiters: list[Callable[[], None]] = []

    # -- element-granular handoff --

    def write_word(self, i: int, raw: int) -> None:
        self.raw[i] = raw
        if not self.finish[i]:
            self.finish[i] = True
            waiters = self._finish_waiters.pop(i, None)
            if waiters:
                for fn in waiters:
                    fn()

    def read_word(self, i: int) -> int:
        return int(self.raw[i])

    def on_finish(self, i: int, fn: Callable[[], None]) -> None:
        if self.finish[i]:
            raise RuntimeError("waiting on an already-finished element")
        self._finish_waiters.setdefault(i, []).append(fn)

    # -- instruction lifecycle --

    def mark_busy(self) -> None:
        self.ready = False

    def begin_produce(self) -> None:
        """Destination-side dispatch effect: invalidate every element."""
        self.ready = False
        self.finish[:] = False
        self.size_known = False

    def set_size(self, n: int) -> None:
        self.size = n
        if not self.size_known:
            self.size_known = True
            waiters, self._size_waiters = self._size_waiters, []
            for fn in waiters:
                fn()

    def on_size(self, fn: Callable[[], None]) -> None:
        if self.size_known:
            raise RuntimeError("size already known")
        self._size_waiters.append(fn)

    def set_ready(self) -> None:
        self.ready = True
        waiters, self._ready_waiters = self._ready_waiters, []
        for fn in waiters:
            fn()

    def on_ready(self, fn: Callable[[], None]) -> None:
        if self.ready:
            raise RuntimeError("tile already ready")
        self._ready_waiters.append(fn)


class RegisterFile:
    """Dtype-agnostic 64-bit scalar registers."""

    def __init__(self, count: int = 32):
        self.count = count
        self.values = [0] * count

    def read(self, k: int) -> int:
        return self.values[k]

    def write(self, k: int, raw: int) -> None:
        self.values[k] = raw & ((1 << 64) - 1)

    def read_signed(self, k: int) -> int:
        v = self.values[k]
        return v - (1 << 64) if v >> 63 else v


class Scratchpad:
    def __init__(self, num_tiles: int, tile_size: int):
        self.tiles = [Tile(i, tile_size) for i in range(num_tiles)]
        self.tile_size = tile_size

    def __getitem__(self, i: int) -> Tile:
        return self.tiles[i]

    def dump_bytes(self) -> bytes:
        """Binary sidecar: per tile a u32 size then the raw words."""
        chunks = [b"DX100TIL", np.uint32(len(self.tiles)).tobytes(),
                  np.uint32(self.tile_size).tobytes()]
        for t in self.tiles:
            chunks.append(np.uint32(t.size).tobytes())
            chunks.append(t.raw.tobytes())
        return b"".join(chunks)
