"""Top-level event-driven simulator.

`run` executes a validated program: a modeled core dispatches
instructions in order into a scoreboard (blocking on destination-tile
and array hazards), the four functional units execute them, and WAIT
statements block the core on tile ready bits.  The Interface routes
memory traffic: stream requests always through the LLC, indirect
requests through the LLC only when the fill-time presence snoop set the
H bit, otherwise straight to DRAM.  `baseline_run` replays a logical
cacheline trace through N in-order issuers with bounded outstanding
misses, modeling the conventional-core comparison point.

Everything runs on one deterministic event queue; identical inputs give
bit-identical outputs.
"""

import csv
from dataclasses import dataclass, field
from typing import Optional

from .compute import AluUnit, RangeFuser
from .config import RunConfig
from .dram import AddressMapping, DramModel, DramStats
from .errors import DeadlockError, ValidationError
from .events import EventQueue, Notifier
from .indirect import IndirectUnit
from .isa import Instruction, Opcode
from .llc import LlcModel, LlcStats
from .memory import MemoryImage
from .program import Program, Wait, validate_program
from .scratchpad import RegisterFile, Scratchpad
from .stream import StreamUnit


@dataclass
class ScoreboardEntry:
    index: int                    # position in the program body
    instr: Instruction
    state: str = "dispatched"     # dispatched -> executing -> retired
    unit: str = ""
    stats: dict = field(default_factory=lambda: {
        "col_requests": 0, "write_requests": 0, "reactivations": 0,
        "capacity_drains": 0, "stream_stalls": 0})


class Scoreboard:
    """In-flight tracker; blocks WAW/WAR on tiles and array aliasing."""

    def __init__(self):
        self.entries: list[ScoreboardEntry] = []
        self.retired = Notifier()

    def can_dispatch(self, instr: Instruction) -> bool:
        # reading an in-flight destination tile is allowed (element-level
        # overlap); writing any in-flight tile is not
        dests = set(instr.dest_tiles())
        base = instr.base
        writes_mem = instr.opcode in (Opcode.IST, Opcode.IRMW, Opcode.SST)
        for e in self.entries:
            used = set(e.instr.dest_tiles()) | set(e.instr.source_tiles())
            if dests & used:
                return False
            if base is not None and e.instr.base == base:
                e_writes = e.instr.opcode in (Opcode.IST, Opcode.IRMW, Opcode.SST)
                if writes_mem or e_writes:
                    return False
        return True

    def add(self, entry: ScoreboardEntry) -> None:
        for e in self.entries:
            if set(e.instr.dest_tiles()) & set(entry.instr.dest_tiles()):
                raise AssertionError("two in-flight instructions share a "
                                     "destination tile")
        self.entries.append(entry)

    def remove(self, entry: ScoreboardEntry) -> None:
        self.entries.remove(entry)
        self.retired.fire()

    def snapshot(self) -> str:
        lines = [f"  [{e.index}] {e.instr.opcode.name} state={e.state} "
                 f"unit={e.unit}" for e in self.entries]
        return "\n".join(lines) if lines else "  (scoreboard empty)"


class Interface:
    """Routing between the functional units, the LLC, and DRAM."""

    def __init__(self, llc: LlcModel, dram: DramModel):
        self.llc = llc
        self.dram = dram
        self.resources = Notifier()
        dram.space.wait(self._on_space)
        llc.mshr_free.wait(self._on_mshr)
        self.direct_dram = 0
        self.llc_requests = 0

    def _on_space(self):
        self.dram.space.wait(self._on_space)
        self.resources.fire()

    def _on_mshr(self):
        self.llc.mshr_free.wait(self._on_mshr)
        self.resources.fire()

    def probe(self, line_addr: int) -> bool:
        """Presence snoop for the H bit."""
        return self.llc.contains(line_addr)

    def stream_access(self, kind: str, line_addr: int, done) -> bool:
        ok = self.llc.access(kind, line_addr, "stream", done)
        if ok:
            self.llc_requests += 1
        return ok

    def indirect_access(self, kind: str, line_addr: int, h: bool, done,
                        coord=None) -> bool:
        if h:
            ok = self.llc.access(kind, line_addr, "indirect", done)
            if ok:
                self.llc_requests += 1
            return ok
        if coord is not None and not self.dram.has_space(coord.channel):
            return False
        req = self.dram.make_request(kind, line_addr, "indirect",
                                     callback=lambda r: done(), coord=coord)
        ok = self.dram.enqueue(req)
        if ok:
            self.direct_dram += 1
        return ok


@dataclass
class StatReport:
    sim_time_fs: int = 0
    core_cycles: int = 0
    instructions: int = 0
    dram: DramStats = field(default_factory=DramStats)
    llc: LlcStats = field(default_factory=LlcStats)
    llc_routed: int = 0
    dram_direct: int = 0
    bw_util: float = 0.0
    avg_occupancy: float = 0.0
    per_instr: list = field(default_factory=list)

    CSV_FIELDS = ["program", "mode", "kind", "rbh_target", "chi", "bgi", "seed",
                  "sim_time_ns", "core_cycles", "instructions",
                  "dram_reads", "dram_writes", "dram_acts", "dram_pres",
                  "row_hits", "rbh", "bytes", "bw_util", "avg_occupancy",
                  "llc_hits", "llc_misses", "llc_writebacks"]

    def csv_row(self, meta: dict) -> dict:
        rbh = self.dram.rbh
        row = {
            "program": meta.get("program", ""),
            "mode": meta.get("mode", "dx100"),
            "kind": meta.get("kind", ""),
            "rbh_target": meta.get("rbh_target", ""),
            "chi": meta.get("chi", ""),
            "bgi": meta.get("bgi", ""),
            "seed": meta.get("seed", ""),
            "sim_time_ns": f"{self.sim_time_fs / 1e6:.6f}",
            "core_cycles": self.core_cycles,
            "instructions": self.instructions,
            "dram_reads": self.dram.reads,
            "dram_writes": self.dram.writes,
            "dram_acts": self.dram.acts,
            "dram_pres": self.dram.pres,
            "row_hits": self.dram.row_hits,
            "rbh": "" if rbh is None else f"{rbh:.6f}",
            "bytes": self.dram.bytes,
            "bw_util": f"{self.bw_util:.6f}",
            "avg_occupancy": f"{self.avg_occupancy:.6f}",
            "llc_hits": self.llc.hits,
            "llc_misses": self.llc.misses,
            "llc_writebacks": self.llc.writebacks,
        }
        return row


def write_csv(rows: list[dict], fh) -> None:
    w = csv.DictWriter(fh, fieldnames=StatReport.CSV_FIELDS)
    w.writeheader()
    for r in rows:
        w.writerow(r)


class _Ctx:
    """Shared state handed to the functional units."""

    def __init__(self, engine: "Engine"):
        self.eq = engine.eq
        self.cfg = engine.cfg
        self.spd = engine.spd
        self.regs = engine.regs
        self.memory = engine.memory
        self.mapping = engine.mapping
        self.interface = engine.interface
        self._engine = engine

    def retire(self, entry: ScoreboardEntry) -> None:
        self._engine.retire(entry)

    def trace_event(self, kind: str, *args) -> None:
        if self._engine.trace is not None:
            self._engine.trace.append((kind, self.eq.now) + args)


class Engine:
    def __init__(self, prog: Program, cfg: RunConfig, memory: MemoryImage,
                 trace: list | None = None):
        diags = validate_program(prog, cfg.maa.num_tiles, cfg.maa.num_regs,
                                 cfg.maa.tile_size,
                                 (cfg.maa.rng_cursor_outer_reg,
                                  cfg.maa.rng_cursor_inner_reg))
        if diags:
            msgs = "; ".join(f"[{i}] {m}" for i, m in diags)
            raise ValidationError(f"program invalid: {msgs}")
        self.prog = prog
        self.cfg = cfg
        self.memory = memory
        self.trace = trace
        self.eq = EventQueue()
        self.mapping = AddressMapping(cfg.dram)
        self.dram = DramModel(cfg.dram, self.eq, self.mapping, trace)
        self.llc = LlcModel(cfg.llc, self.eq, self.dram, cfg.maa.cycle_fs)
        self.interface = Interface(self.llc, self.dram)
        self.spd = Scratchpad(cfg.maa.num_tiles, cfg.maa.tile_size)
        self.regs = RegisterFile(cfg.maa.num_regs)
        for k, v in prog.reg_inits.items():
            self.regs.write(k, v)
        self.scoreboard = Scoreboard()
        ctx = _Ctx(self)
        self.units = {
            Opcode.ILD: IndirectUnit(ctx),
            Opcode.SLD: StreamUnit(ctx),
            Opcode.ALUV: AluUnit(ctx),
            Opcode.RNG: RangeFuser(ctx),
        }
        self.units[Opcode.IST] = self.units[Opcode.IRMW] = self.units[Opcode.ILD]
        self.units[Opcode.SST] = self.units[Opcode.SLD]
        self.units[Opcode.ALUS] = self.units[Opcode.ALUV]
        self.per_instr: list[dict] = []
        self.pc = 0
        self.core_blocked = False
        self.finished = False
        # warm-up directives seed the LLC before time starts
        line = cfg.dram.cacheline_bytes
        for name in prog.warms:
            e = memory[name]
            self.llc.warm(range(e.base, e.base + e.lines.nbytes, line))

    # -- core agent ----------------------------------------------------------

    def _core_step(self) -> None:
        cyc = self.cfg.maa.cycle_fs
        while self.pc < len(self.prog.body):
            stmt = self.prog.body[self.pc]
            if isinstance(stmt, Wait):
                tile = self.spd[stmt.tile]
                if not tile.ready:
                    tile.on_ready(self._core_resume)
                    return
                self.pc += 1
                continue
            if not self.scoreboard.can_dispatch(stmt):
                self.scoreboard.retired.wait(self._core_resume)
                return
            entry = ScoreboardEntry(index=self.pc, instr=stmt)
            self._dispatch(entry)
            self.pc += 1
            self.eq.after(self.cfg.maa.dispatch_cycles * cyc, self._core_step)
            return
        self.finished = True

    def _core_resume(self) -> None:
        # resume after the core-side scratchpad read path
        self.eq.after(self.cfg.maa.spd_core_latency * self.cfg.maa.cycle_fs,
                      self._core_step)

    def _dispatch(self, entry: ScoreboardEntry) -> None:
        instr = entry.instr
        self.scoreboard.add(entry)
        for t in instr.source_tiles():
            self.spd[t].mark_busy()
        for t in instr.dest_tiles():
            self.spd[t].begin_produce()
        unit = self.units[instr.opcode]
        entry.unit = unit.name
        entry.state = "executing"
        unit.enqueue(entry)

    def retire(self, entry: ScoreboardEntry) -> None:
        entry.state = "retired"
        instr = entry.instr
        for t in instr.dest_tiles():
            tile = self.spd[t]
            if not tile.size_known:
                tile.set_size(tile.size)
        still_used: set[int] = set()
        self.scoreboard.remove(entry)
        for e in self.scoreboard.entries:
            still_used.update(e.instr.dest_tiles())
            still_used.update(e.instr.source_tiles())
        for t in set(instr.dest_tiles()) | set(instr.source_tiles()):
            if t not in still_used:
                self.spd[t].set_ready()
        self.per_instr.append({"index": entry.index,
                               "opcode": instr.opcode.name, **entry.stats})

    # -- run -----------------------------------------------------------------

    def run(self) -> StatReport:
        self.eq.schedule(0, self._core_step)
        self.eq.run()
        if not self.finished:
            raise DeadlockError(
                f"no progress at t={self.eq.now} fs; core blocked at body "
                f"statement {self.pc}",
                snapshot=self.scoreboard.snapshot())
        return self._report()

    def _report(self) -> StatReport:
        dstats = self.dram.stats()
        rep = StatReport(
            sim_time_fs=self.eq.now,
            core_cycles=-(-self.eq.now // self.cfg.maa.cycle_fs),
            instructions=len(self.per_instr),
            dram=dstats,
            llc=self.llc.stats,
            llc_routed=self.interface.llc_requests,
            dram_direct=self.interface.direct_dram,
            bw_util=dstats.utilization(self.cfg.dram.peak_total_bw),
            avg_occupancy=dstats.avg_occupancy(self.cfg.dram.channels,
                                               self.cfg.dram.request_buffer_size),
            per_instr=sorted(self.per_instr, key=lambda d: d["index"]),
        )
        return rep


def run(prog: Program, cfg: RunConfig, memory: MemoryImage | None = None,
        trace: list | None = None) -> tuple[MemoryImage, Scratchpad, StatReport]:
    """Execute a program; returns (final memory, scratchpad, stats)."""
    if memory is None:
        memory = MemoryImage.from_program(prog, cfg.dram.cacheline_bytes,
                                          cfg.dram.row_group_bytes,
                                          cfg.dram.capacity_bytes)
    eng = Engine(prog, cfg, memory, trace)
    report = eng.run()
    return memory, eng.spd, report


# ---------------------------------------------------------------------------
# baseline: N in-order cores with bounded outstanding accesses

class _BaselineCore:
    """In-order issuer: entry (kind, line, dep) may carry the index of an
    earlier entry it depends on (an indirect access waiting on its index
    load); issue stalls until that entry completed."""

    __slots__ = ("engine", "trace", "pos", "in_flight", "waiting", "done_flags")

    def __init__(self, engine, trace):
        self.engine = engine
        self.trace = trace
        self.pos = 0
        self.in_flight = 0
        self.waiting = False
        self.done_flags = bytearray(len(trace))

    def pump(self) -> None:
        eng = self.engine
        while (self.pos < len(self.trace)
               and self.in_flight < eng.max_outstanding):
            entry = self.trace[self.pos]
            kind, line = entry[0], entry[1]
            dep = entry[2] if len(entry) > 2 else -1
            if dep >= 0 and not self.done_flags[dep]:
                return  # resolved by that entry's completion callback
            pos = self.pos
            req = eng.dram.make_request(
                "read" if kind == "r" else "write", line, "baseline",
                callback=lambda r, pos=pos: self._done(pos))
            if not eng.dram.enqueue(req):
                if not self.waiting:
                    self.waiting = True
                    eng.dram.space.wait(self._woken)
                return
            self.pos += 1
            self.in_flight += 1

    def _woken(self) -> None:
        self.waiting = False
        self.pump()

    def _done(self, pos: int) -> None:
        self.done_flags[pos] = 1
        self.in_flight -= 1
        self.pump()


class BaselineEngine:
    """Abstract limited-MLP issuer feeding the FR-FCFS controller."""

    def __init__(self, traces: list[list[tuple[str, int]]], cfg: RunConfig,
                 trace: list | None = None, max_outstanding: int | None = None):
        self.cfg = cfg
        self.eq = EventQueue()
        self.mapping = AddressMapping(cfg.dram)
        self.dram = DramModel(cfg.dram, self.eq, self.mapping, trace)
        self.max_outstanding = (max_outstanding if max_outstanding is not None
                                else cfg.baseline.max_outstanding)
        self.cores = [_BaselineCore(self, t) for t in traces]

    def run(self) -> StatReport:
        for core in self.cores:
            self.eq.schedule(0, core.pump)
        self.eq.run()
        for core in self.cores:
            if core.pos < len(core.trace):
                raise DeadlockError("baseline issuer stalled with work left")
        dstats = self.dram.stats()
        return StatReport(
            sim_time_fs=self.eq.now,
            core_cycles=-(-self.eq.now // self.cfg.maa.cycle_fs),
            instructions=sum(len(c.trace) for c in self.cores),
            dram=dstats,
            llc=LlcStats(),
            bw_util=dstats.utilization(self.cfg.dram.peak_total_bw),
            avg_occupancy=dstats.avg_occupancy(self.cfg.dram.channels,
                                               self.cfg.dram.request_buffer_size),
        )


def baseline_run(traces: list[list[tuple[str, int]]], cfg: RunConfig,
                 trace: list | None = None,
                 max_outstanding: int | None = None) -> StatReport:
    """Run per-core ordered cacheline traces through the DRAM model."""
    chunked = [t for t in traces if t]
    eng = BaselineEngine(chunked, cfg, trace, max_outstanding)
    return eng.run()
