"""Stream access unit: SLD/SST strided loops against the LLC.

The loop runs over element indices [rs1, rs2) with stride rs3; one
iteration per cycle, with conditioned iterations skipped.  Consecutive
words falling in one cacheline share a single Request Table entry
(MSHR-style): the entry tracks the outstanding line plus the (word,
iteration) pairs waiting on it.  A full table stalls the unit rather
than erroring.  All stream traffic routes through the LLC.
"""

from collections import deque

import numpy as np

from .errors import DispatchError
from .events import Notifier
from .isa import Opcode, mask_of

_LINE_VIEW = {4: np.uint32, 8: np.uint64}


class StreamUnit:
    name = "stream"

    def __init__(self, ctx):
        self.ctx = ctx
        self.cycle = ctx.cfg.maa.cycle_fs
        self.table_cap = ctx.cfg.maa.request_table_size
        self.busy = False
        self.queue: deque = deque()
        self.entry = None
        self.table_space = Notifier()

    def enqueue(self, entry) -> None:
        self.queue.append(entry)
        self.kick()

    def kick(self) -> None:
        if self.busy or not self.queue:
            return
        entry = self.queue.popleft()
        self.busy = True
        self.entry = entry
        instr = entry.instr
        regs = self.ctx.regs
        lo = regs.read(instr.rs1)
        hi = regs.read(instr.rs2)
        stride = regs.read(instr.rs3)
        if stride < 1:
            raise DispatchError(f"stream stride r{instr.rs3}={stride} must be >= 1")
        n = 0 if hi <= lo else -(-(hi - lo) // stride)
        if n > self.ctx.cfg.maa.tile_size:
            raise DispatchError(f"stream iteration count {n} exceeds tile "
                                f"capacity {self.ctx.cfg.maa.tile_size}")
        self.lo, self.stride, self.n_iter = lo, stride, n
        self.array = self.ctx.memory.entry_for(instr.base)
        self.is_load = instr.opcode is Opcode.SLD
        self.data_tile = self.ctx.spd[instr.td if self.is_load else instr.ts1]
        self.cond = self.ctx.spd[instr.tc] if instr.tc is not None else None
        if self.is_load:
            self.data_tile.set_size(n)
        self.cursor = 0
        self.outstanding = 0
        self.table: dict[int, list[tuple[int, int]]] = {}
        self.pend_line = -1
        self.pend: list[tuple[int, int]] = []
        self.loop_done = False
        start = self.ctx.eq.now + self.ctx.cfg.maa.spd_unit_latency * self.cycle
        self.ctx.eq.schedule(start, lambda: self._loop(start))

    # -- iteration loop ------------------------------------------------------

    def _loop(self, t: int) -> None:
        instr = self.entry.instr
        width = instr.dtype.width
        line_bytes = self.ctx.cfg.dram.cacheline_bytes
        budget = 256
        while self.cursor < self.n_iter and budget > 0:
            i = self.cursor
            if self.cond is not None and not self.cond.finish[i]:
                self.cond.on_finish(i, lambda t=t: self._resume(t))
                return
            taken = self.cond is None or self.cond.raw[i] != 0
            if not taken:
                if self.is_load:
                    self.data_tile.write_word(i, 0)
                self.cursor += 1
                t += self.cycle
                budget -= 1
                continue
            if not self.is_load and not self.data_tile.finish[i]:
                self.data_tile.on_finish(i, lambda t=t: self._resume(t))
                return
            elem = self.lo + i * self.stride
            addr = self.ctx.memory.element_addr(self.array, elem)
            line = addr & ~(line_bytes - 1)
            wid = (addr - line) // width
            if line != self.pend_line:
                if not self._flush():
                    self._stall(t)
                    return
                self.pend_line = line
            self.pend.append((wid, i))
            self.cursor += 1
            t += self.cycle
            budget -= 1
        if self.cursor < self.n_iter:
            self.ctx.eq.schedule(t, lambda: self._loop(t))
            return
        if not self._flush():
            self._stall(t)
            return
        self.loop_done = True
        self._maybe_retire()

    def _resume(self, t: int) -> None:
        resume = max(t, self.ctx.eq.now)
        self.ctx.eq.schedule(resume, lambda: self._loop(resume))

    def _stall(self, t: int) -> None:
        # request table or downstream MSHRs full; retry on either signal
        self.entry.stats["stream_stalls"] += 1
        fired = [False]

        def retry():
            if fired[0]:
                return
            fired[0] = True
            self._resume(t)
        self.table_space.wait(retry)
        self.ctx.interface.resources.wait(retry)

    def _flush(self) -> bool:
        """Hand the pending line group to the request table; False = full."""
        line, pairs = self.pend_line, self.pend
        if line < 0 or not pairs:
            self.pend_line, self.pend = -1, []
            return True
        existing = self.table.get(line)
        if existing is not None:
            # the line is still outstanding: merge into its entry
            if not self.is_load:
                self._apply_store(line, pairs)
            existing.extend(pairs)
            self.pend_line, self.pend = -1, []
            return True
        if len(self.table) >= self.table_cap:
            return False
        kind = "read" if self.is_load else "write"
        ok = self.ctx.interface.stream_access(kind, line,
                                              lambda line=line: self._respond(line))
        if not ok:
            return False
        self.table[line] = list(pairs)
        if not self.is_load:
            # write-allocate store: words merge functionally at submit time,
            # the LLC fetches on a miss and the line becomes dirty
            self._apply_store(line, pairs)
        self.outstanding += 1
        self.pend_line, self.pend = -1, []
        return True

    def _apply_store(self, line: int, pairs) -> None:
        instr = self.entry.instr
        width = instr.dtype.width
        buf = self.ctx.memory.read_line(line)
        words = buf.view(_LINE_VIEW[width])
        m = mask_of(instr.dtype)
        for wid, i in pairs:
            words[wid] = int(self.data_tile.raw[i]) & m
        self.ctx.memory.write_line(line, buf)

    def _respond(self, line: int) -> None:
        pairs = self.table.pop(line)
        self.outstanding -= 1
        self.table_space.fire()
        if self.is_load:
            instr = self.entry.instr
            width = instr.dtype.width
            buf = self.ctx.memory.read_line(line)
            words = buf.view(_LINE_VIEW[width])
            for wid, i in pairs:
                self.data_tile.write_word(i, int(words[wid]))
        self._maybe_retire()

    def _maybe_retire(self) -> None:
        if self.busy and self.loop_done and self.outstanding == 0:
            self.busy = False
            entry = self.entry
            self.entry = None
            self.ctx.retire(entry)
            self.kick()
