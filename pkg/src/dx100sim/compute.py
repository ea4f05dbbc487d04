"""ALU (elementwise tile ops, 16 lanes) and the Range Fuser.

The Range Fuser flattens per-element [min, max) ranges into two output
tiles holding the outer and inner induction values, in lexicographic
order.  When the expansion overflows a tile it stops at capacity and
writes a resume point into two designated cursor registers; the next
RNG picks the cursor up and continues.  A completed expansion resets
the cursor registers to zero, so straight-line code can loop the same
instruction until the registers read zero.
"""

from collections import deque

from .errors import DispatchError
from .isa import Opcode, apply_op


class AluUnit:
    name = "alu"

    def __init__(self, ctx):
        self.ctx = ctx
        self.cycle = ctx.cfg.maa.cycle_fs
        self.lanes = ctx.cfg.maa.alu_lanes
        self.busy = False
        self.queue: deque = deque()
        self.entry = None

    def enqueue(self, entry) -> None:
        self.queue.append(entry)
        self.kick()

    def kick(self) -> None:
        if self.busy or not self.queue:
            return
        entry = self.queue[0]
        instr = entry.instr
        a = self.ctx.spd[instr.ts1]
        if not a.size_known:
            a.on_size(self.kick)
            return
        if instr.opcode is Opcode.ALUV:
            b = self.ctx.spd[instr.ts2]
            if not b.size_known:
                b.on_size(self.kick)
                return
            if b.size != a.size:
                raise DispatchError(f"ALUV source sizes differ: {a.size} vs {b.size}")
        self.queue.popleft()
        self.busy = True
        self.entry = entry
        self.n_iter = a.size
        self.a = a
        self.b = self.ctx.spd[instr.ts2] if instr.opcode is Opcode.ALUV else None
        self.scalar = self.ctx.regs.read(instr.rs1) if instr.opcode is Opcode.ALUS else 0
        self.dest = self.ctx.spd[instr.td]
        self.dest.set_size(self.n_iter)
        self.cond = self.ctx.spd[instr.tc] if instr.tc is not None else None
        self.cursor = 0
        start = self.ctx.eq.now + self.ctx.cfg.maa.spd_unit_latency * self.cycle
        self.ctx.eq.schedule(start, lambda: self._step(start))

    def _step(self, t: int) -> None:
        instr = self.entry.instr
        end = min(self.cursor + 256, self.n_iter)
        while self.cursor < end:
            i = self.cursor
            for tile in (self.a, self.b, self.cond):
                if tile is not None and not tile.finish[i]:
                    tile.on_finish(i, lambda t=t: self._resume(t))
                    return
            if self.cond is not None and self.cond.raw[i] == 0:
                out = 0   # untaken lanes pass through as zero
            else:
                rb = int(self.b.raw[i]) if self.b is not None else self.scalar
                out = apply_op(instr.op, instr.dtype, int(self.a.raw[i]), rb)
            self.dest.write_word(i, out)
            self.cursor += 1
            if self.cursor % self.lanes == 0:
                t += self.cycle
        if self.cursor < self.n_iter:
            self.ctx.eq.schedule(t, lambda: self._step(t))
            return
        self.busy = False
        entry = self.entry
        self.entry = None
        self.ctx.eq.schedule(max(t, self.ctx.eq.now), lambda: self._finish(entry))

    def _resume(self, t: int) -> None:
        resume = max(t, self.ctx.eq.now)
        self.ctx.eq.schedule(resume, lambda: self._step(resume))

    def _finish(self, entry) -> None:
        self.ctx.retire(entry)
        self.kick()


class RangeFuser:
    name = "range"

    def __init__(self, ctx):
        self.ctx = ctx
        self.cycle = ctx.cfg.maa.cycle_fs
        self.rate = ctx.cfg.maa.rng_pairs_per_cycle
        self.busy = False
        self.queue: deque = deque()
        self.entry = None

    def enqueue(self, entry) -> None:
        self.queue.append(entry)
        self.kick()

    def kick(self) -> None:
        if self.busy or not self.queue:
            return
        entry = self.queue[0]
        instr = entry.instr
        mins = self.ctx.spd[instr.ts1]
        maxs = self.ctx.spd[instr.ts2]
        for src in (mins, maxs):
            if not src.size_known:
                src.on_size(self.kick)
                return
        if mins.size != maxs.size:
            raise DispatchError(f"range bound tiles differ in size: "
                                f"{mins.size} vs {maxs.size}")
        self.queue.popleft()
        self.busy = True
        self.entry = entry
        self.mins, self.maxs = mins, maxs
        self.outer = self.ctx.spd[instr.td]
        self.inner = self.ctx.spd[instr.td2]
        self.cond = self.ctx.spd[instr.tc] if instr.tc is not None else None
        self.stride = self.ctx.regs.read(instr.rs1)
        if self.stride < 1:
            raise DispatchError(f"range stride r{instr.rs1}={self.stride} must be >= 1")
        maa = self.ctx.cfg.maa
        self.cap = maa.tile_size
        self.i = self.ctx.regs.read(maa.rng_cursor_outer_reg)
        self.j = self.ctx.regs.read(maa.rng_cursor_inner_reg)
        self.j_valid = self.i != 0 or self.j != 0
        self.emitted = 0
        start = self.ctx.eq.now + maa.spd_unit_latency * self.cycle
        self.ctx.eq.schedule(start, lambda: self._step(start))

    def _step(self, t: int) -> None:
        budget = 1024
        n = self.mins.size
        while self.i < n and budget > 0:
            i = self.i
            for tile in (self.mins, self.maxs, self.cond):
                if tile is not None and not tile.finish[i]:
                    tile.on_finish(i, lambda t=t: self._resume(t))
                    return
            if self.cond is not None and self.cond.raw[i] == 0:
                self.i += 1
                self.j_valid = False
                continue
            lo = int(self.mins.raw[i])
            hi = int(self.maxs.raw[i])
            j = self.j if self.j_valid else lo
            while j < hi and self.emitted < self.cap and budget > 0:
                self.outer.write_word(self.emitted, i)
                self.inner.write_word(self.emitted, j)
                self.emitted += 1
                j += self.stride
                budget -= 1
                if self.emitted % self.rate == 0:
                    t += self.cycle
            if j < hi:   # ran out of tile space or batch budget
                if self.emitted >= self.cap:
                    self._finish(t, resume=(i, j))
                    return
                self.j = j
                self.j_valid = True
                self.ctx.eq.schedule(t, lambda: self._step(t))
                return
            self.i += 1
            self.j_valid = False
        if self.i < n:
            self.ctx.eq.schedule(t, lambda: self._step(t))
            return
        self._finish(t, resume=None)

    def _resume(self, t: int) -> None:
        resume = max(t, self.ctx.eq.now)
        self.ctx.eq.schedule(resume, lambda: self._step(resume))

    def _finish(self, t: int, resume) -> None:
        maa = self.ctx.cfg.maa
        if resume is None:
            self.ctx.regs.write(maa.rng_cursor_outer_reg, 0)
            self.ctx.regs.write(maa.rng_cursor_inner_reg, 0)
        else:
            self.ctx.regs.write(maa.rng_cursor_outer_reg, resume[0])
            self.ctx.regs.write(maa.rng_cursor_inner_reg, resume[1])
        self.outer.set_size(self.emitted)
        self.inner.set_size(self.emitted)
        self.busy = False
        entry = self.entry
        self.entry = None
        self.ctx.eq.schedule(max(t, self.ctx.eq.now), lambda: self.ctx.retire(entry))
        self.ctx.eq.schedule(max(t, self.ctx.eq.now), self.kick)
