"""Indirect access unit: ILD/IST/IRMW over a tile of indices.

Three overlapping stages:

* fill    - walks the index tile (one index per cycle as elements
            finish), decomposes each word address, and books it into
            the per-bank row table (rows, then columns) and the word
            table (a per-iteration linked list chaining duplicate words
            in one cacheline).
* drain   - a request generator that round-robins row-table slices in
            channel-major, then bank-group order, emitting the columns
            of one row consecutively; one request per unique column.
            Columns whose line was cached at fill time (H bit) route to
            the LLC, the rest go straight to DRAM.
* respond - walks the word linked list of the answered column: loads
            scatter words into the destination tile; stores and RMWs
            modify the line in ascending iteration order and send a
            write back out.

Drains fire when the fill completes or when a slice has no free entry
for an incoming fill (capacity).  The drain policy ("slice" drains the
whole victim slice, "row" only the blocking row) is configurable.
"""

from collections import deque

import numpy as np

from .dram import DramCoord
from .errors import ConsistencyError
from .isa import Opcode, apply_op, mask_of

_LINE_VIEW = {4: np.uint32, 8: np.uint64}


class _ColEntry:
    __slots__ = ("col", "h", "tail", "state", "row")

    def __init__(self, col: int, h: bool, row: "_RowEntry"):
        self.col = col
        self.h = h
        self.tail = -1
        self.state = "fill"          # fill -> queued -> sent -> done
        self.row = row


class _RowEntry:
    __slots__ = ("row", "cols", "open", "live_cols", "slice")

    def __init__(self, row: int, sl: "_Slice"):
        self.row = row
        self.cols: list[_ColEntry] = []
        self.open = True             # still accepting fills
        self.live_cols = 0           # allocated columns not yet completed
        self.slice = sl


class _Slice:
    __slots__ = ("key", "entries", "fill_index", "drain_queue", "drained_rows",
                 "waiters")

    def __init__(self, key):
        self.key = key               # (channel, rank, bank_group, bank)
        self.entries: list[_RowEntry] = []
        self.fill_index: dict[int, _RowEntry] = {}
        self.drain_queue: deque[_RowEntry] = deque()
        self.drained_rows: set[int] = set()
        self.waiters: list = []

    def reset(self):
        self.entries.clear()
        self.fill_index.clear()
        self.drain_queue.clear()
        self.drained_rows.clear()
        self.waiters.clear()


class IndirectUnit:
    """One in-flight indirect instruction; owned and sequenced by the engine."""

    name = "indirect"

    def __init__(self, ctx):
        self.ctx = ctx
        cfg = ctx.cfg
        self.row_cap = cfg.maa.row_table_rows
        self.col_cap = cfg.maa.row_table_cols
        self.cycle = cfg.maa.cycle_fs
        self.fill_batch = 64
        dram_cfg = cfg.dram
        order = []
        for ra in range(dram_cfg.ranks):
            for ba in range(dram_cfg.banks_per_group):
                for bg in range(dram_cfg.bank_groups):
                    for ch in range(dram_cfg.channels):
                        order.append((ch, ra, bg, ba))
        # channel varies fastest, then bank group: interleaved emission
        order.sort(key=lambda k: (k[3], k[1], k[2], k[0]))
        self.slices = {key: _Slice(key) for key in order}
        self.rotation = [self.slices[key] for key in order]
        self.rot_ptr = 0
        self.busy = False
        self.queue: deque = deque()
        # word table
        tile_size = cfg.maa.tile_size
        self.wt_prev = np.full(tile_size, -1, dtype=np.int64)
        self.wt_wo = np.zeros(tile_size, dtype=np.int64)
        # transient per-instruction state
        self.entry = None
        self._reset_instr_state()

    def _reset_instr_state(self):
        self.fill_done = False
        self.cols_live = 0
        self.writes_live = 0
        self.gen_running = False
        self.gen_sleeping = False
        self.pending_cols = 0
        self.walker_free_at = 0
        self.pending_writes: deque = deque()

    # -- engine-facing unit protocol --

    def enqueue(self, entry) -> None:
        self.queue.append(entry)
        self.kick()

    def kick(self) -> None:
        if self.busy or not self.queue:
            return
        entry = self.queue[0]
        instr = entry.instr
        idx_tile = self.ctx.spd[instr.ts1]
        if not idx_tile.size_known:
            idx_tile.on_size(self.kick)
            return
        self.queue.popleft()
        self.busy = True
        self.entry = entry
        self._reset_instr_state()
        for s in self.rotation:
            s.reset()
        self.wt_prev[:] = -1
        self.n_iter = idx_tile.size
        self.array = self.ctx.memory.entry_for(instr.base)
        self.dest = self.ctx.spd[instr.td] if instr.td is not None else None
        if self.dest is not None:
            self.dest.set_size(self.n_iter)
        self.cursor = 0
        start = self.ctx.eq.now + self.ctx.cfg.maa.spd_unit_latency * self.cycle
        self.ctx.eq.schedule(start, lambda: self._fill(start))

    # -- stage 1: fill --

    def _fill(self, t: int) -> None:
        instr = self.entry.instr
        idx_tile = self.ctx.spd[instr.ts1]
        cond = self.ctx.spd[instr.tc] if instr.tc is not None else None
        width = instr.dtype.width
        end = min(self.cursor + self.fill_batch, self.n_iter)
        while self.cursor < end:
            i = self.cursor
            if cond is not None and not cond.finish[i]:
                cond.on_finish(i, lambda t=t: self._resume_fill(t))
                return
            if cond is not None and cond.raw[i] == 0:
                if self.dest is not None:
                    self.dest.write_word(i, 0)   # untaken loads read as zero
                self.cursor += 1
                t += self.cycle
                continue
            if not idx_tile.finish[i]:
                idx_tile.on_finish(i, lambda t=t: self._resume_fill(t))
                return
            idx = int(idx_tile.raw[i])
            addr = self.ctx.memory.element_addr(self.array, idx)  # BoundsError on bad index
            coord = self.ctx.mapping.decompose(addr)
            if not self._book(i, coord, t):
                return  # stalled on a full slice; resumes via waiter
            self.cursor += 1
            t += self.cycle
        if self.cursor < self.n_iter:
            self.ctx.eq.schedule(t, lambda: self._fill(t))
            return
        self.fill_done = True
        self.ctx.eq.schedule(t, self._final_drain)

    def _resume_fill(self, t: int) -> None:
        now = self.ctx.eq.now
        resume = max(t, now)
        self.ctx.eq.schedule(resume, lambda: self._fill(resume))

    def _book(self, i: int, coord, t: int) -> bool:
        sl = self.slices[(coord.channel, coord.rank, coord.bank_group, coord.bank)]
        row = sl.fill_index.get(coord.row)
        col = None
        if row is not None:
            for c in row.cols:
                if c.state == "fill" and c.col == coord.column:
                    col = c
                    break
            if col is None and len(row.cols) >= self.col_cap:
                self._capacity_drain(sl, row, t)
                row = None
        if row is None and col is None:
            if len(sl.entries) >= self.row_cap and not sl.fill_index:
                # every entry is draining or awaiting responses: wait for a slot
                sl.waiters.append(lambda t=t: self._resume_fill(t))
                return False
            if len(sl.entries) >= self.row_cap:
                self._capacity_drain(sl, None, t)
                if len(sl.entries) >= self.row_cap:
                    sl.waiters.append(lambda t=t: self._resume_fill(t))
                    return False
            if coord.row in sl.drained_rows:
                self.entry.stats["reactivations"] += 1
                self.ctx.trace_event("reactivate", self.entry.index, *sl.key, coord.row)
            row = _RowEntry(coord.row, sl)
            sl.entries.append(row)
            sl.fill_index[coord.row] = row
        if col is None:
            line = self.ctx.mapping.line_addr(coord)
            h = self.ctx.interface.probe(line)
            col = _ColEntry(coord.column, h, row)
            row.cols.append(col)
            row.live_cols += 1
            self.cols_live += 1
            self.ctx.trace_event("fill", self.entry.index, line, int(h))
        self.wt_prev[i] = col.tail
        self.wt_wo[i] = coord.word_offset // self.entry.instr.dtype.width
        col.tail = i
        return True

    def _capacity_drain(self, sl: _Slice, blocking_row, t: int) -> None:
        policy = self.ctx.cfg.indirect.drain_policy
        if policy == "row" and blocking_row is not None:
            victims = [blocking_row]
        elif policy == "row":
            victims = [sl.entries[0]] if sl.entries and sl.entries[0].open else \
                      [r for r in sl.entries if r.open][:1]
        else:
            victims = [r for r in sl.entries if r.open]
        if not victims:
            return
        self.entry.stats["capacity_drains"] += 1
        self.ctx.trace_event("capacity_drain", self.entry.index, *sl.key, len(victims))
        for row in victims:
            self._queue_row(sl, row)
        self._start_generator(t)

    def _queue_row(self, sl: _Slice, row: _RowEntry) -> None:
        row.open = False
        del sl.fill_index[row.row]
        sl.drained_rows.add(row.row)
        for c in row.cols:
            if c.state == "fill":
                c.state = "queued"
        sl.drain_queue.append(row)
        self.pending_cols += sum(1 for c in row.cols if c.state == "queued")

    def _final_drain(self) -> None:
        for sl in self.rotation:
            for row in list(sl.fill_index.values()):
                self._queue_row(sl, row)
        self._start_generator(self.ctx.eq.now)
        self._maybe_retire()

    # -- stage 2: request generation --

    def _start_generator(self, t: int) -> None:
        if self.gen_running:
            return
        self.gen_running = True
        self.ctx.eq.schedule(max(t, self.ctx.eq.now), self._generate)

    def _generate(self) -> None:
        if self.pending_cols == 0:
            self.gen_running = False
            return
        n = len(self.rotation)
        emitted = False
        blocked = False
        for _ in range(n):
            sl = self.rotation[self.rot_ptr]
            self.rot_ptr = (self.rot_ptr + 1) % n
            col = self._next_col(sl)
            if col is None:
                continue
            if self._emit(sl, col):
                emitted = True
                break
            blocked = True
        if emitted:
            self.ctx.eq.after(self.cycle, self._generate)
        elif blocked:
            self.gen_running = False
            self.gen_sleeping = True
            self.ctx.interface.resources.wait(self._wake_generator)
        else:
            self.gen_running = False

    def _wake_generator(self) -> None:
        if not self.gen_sleeping:
            return
        self.gen_sleeping = False
        self._start_generator(self.ctx.eq.now)

    def _next_col(self, sl: _Slice):
        while sl.drain_queue:
            row = sl.drain_queue[0]
            for c in row.cols:
                if c.state == "queued":
                    return c
            sl.drain_queue.popleft()
        return None

    def _emit(self, sl: _Slice, col: _ColEntry) -> bool:
        ch, ra, bg, ba = sl.key
        if not col.h and not self.ctx.interface.dram.has_space(ch):
            return False
        coord = DramCoord(channel=ch, rank=ra, bank_group=bg, bank=ba,
                          row=col.row.row, column=col.col, word_offset=0)
        line = self.ctx.mapping.compose(coord)
        ok = self.ctx.interface.indirect_access(
            "read", line, col.h, lambda col=col, line=line: self._respond(col, line),
            coord=coord)
        if not ok:
            return False
        col.state = "sent"
        self.pending_cols -= 1
        self.entry.stats["col_requests"] += 1
        self.ctx.trace_event("ireq", self.entry.index, line, int(col.h))
        return True

    # -- stage 3: response --

    def _respond(self, col: _ColEntry, line_addr: int) -> None:
        if col.state != "sent":
            raise ConsistencyError(f"response for column in state '{col.state}' "
                                   f"at line {line_addr:#x}")
        # collect the iteration chain (tail -> previous) and apply ascending
        chain = []
        i = col.tail
        while i >= 0:
            chain.append(i)
            i = int(self.wt_prev[i])
        chain.reverse()
        start = max(self.ctx.eq.now, self.walker_free_at)
        words_per_cycle = self.ctx.cfg.maa.respond_words_per_cycle
        dur = -(-len(chain) // words_per_cycle) * self.cycle
        self.walker_free_at = start + dur
        self.ctx.eq.schedule(start + dur,
                             lambda: self._walk(col, line_addr, chain))

    def _walk(self, col: _ColEntry, line_addr: int, chain: list[int]) -> None:
        instr = self.entry.instr
        dtype = instr.dtype
        width = dtype.width
        opc = instr.opcode
        self.ctx.trace_event("iresp", self.entry.index, line_addr, len(chain))
        if opc is Opcode.ILD:
            line = self.ctx.memory.read_line(line_addr)
            words = line.view(_LINE_VIEW[width])
            for i in chain:
                self.dest.write_word(i, int(words[self.wt_wo[i]]))
            self._finish_col(col)
            return
        # store / read-modify-write need the value elements
        values = self.ctx.spd[instr.ts2]
        for i in chain:
            if not values.finish[i]:
                values.on_finish(i, lambda: self._walk(col, line_addr, chain))
                return
        line = self.ctx.memory.read_line(line_addr)
        words = line.view(_LINE_VIEW[width])
        m = mask_of(dtype)
        for i in chain:
            wo = self.wt_wo[i]
            val = int(values.raw[i]) & m
            if opc is Opcode.IST:
                words[wo] = val
            else:
                words[wo] = apply_op(instr.op, dtype, int(words[wo]), val)
        self.ctx.memory.write_line(line_addr, line)
        self.writes_live += 1
        self.pending_writes.append((line_addr, col))
        self._push_writes()

    def _push_writes(self) -> None:
        while self.pending_writes:
            line_addr, col = self.pending_writes[0]
            if not col.h and not self.ctx.interface.dram.has_space(
                    self.ctx.mapping.decompose(line_addr).channel):
                self.ctx.interface.resources.wait(self._push_writes)
                return
            ok = self.ctx.interface.indirect_access(
                "write", line_addr, col.h,
                lambda col=col: self._write_done(col))
            if not ok:
                self.ctx.interface.resources.wait(self._push_writes)
                return
            self.pending_writes.popleft()
            self.entry.stats["write_requests"] += 1
            self._finish_col(col)

    def _write_done(self, col: _ColEntry) -> None:
        self.writes_live -= 1
        self._maybe_retire()

    def _finish_col(self, col: _ColEntry) -> None:
        col.state = "done"
        row = col.row
        row.live_cols -= 1
        self.cols_live -= 1
        if row.live_cols == 0 and not row.open:
            sl = row.slice
            sl.entries.remove(row)
            if sl.waiters:
                waiters, sl.waiters = sl.waiters, []
                for fn in waiters:
                    fn()
        self._maybe_retire()

    def _maybe_retire(self) -> None:
        if (self.fill_done and self.cols_live == 0 and self.writes_live == 0
                and self.pending_cols == 0 and not self.pending_writes
                and self.busy):
            self.busy = False
            entry = self.entry
            self.entry = None
            self.ctx.retire(entry)
            self.kick()
