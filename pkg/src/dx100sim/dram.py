"""DDR4 state machine: address mapping, bank timing, FR-FCFS scheduling.

One `DramModel` owns all channels of one simulated memory system.  Each
channel has a bounded request buffer and a first-ready/first-come
scheduler: issuable column accesses to open rows go first (oldest wins),
otherwise the oldest request whose precharge/activate is legal gets its
command.  Rows stay open until a conflicting request forces a precharge
(open-page policy).  Refresh and write-specific timing are intentionally
not modeled.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import DramConfig
from .errors import CapacityError, ProtocolError
from .events import EventQueue, Notifier

NEG_INF = -(1 << 62)

_FIELD_NAMES = ("offset", "channel", "bank_group", "bank", "rank", "column", "row")


@dataclass(frozen=True)
class DramCoord:
    channel: int
    rank: int
    bank_group: int
    bank: int
    row: int
    column: int
    word_offset: int  # byte offset within the cacheline


class AddressMapping:
    """Bit-sliced physical-address decomposition.

    The policy string lists fields from least to most significant;
    each field takes log2(extent) bits.  The default interleaves
    cachelines across channels first, then bank groups, so consecutive
    lines naturally spread over the parallel resources.
    """

    def __init__(self, cfg: DramConfig, order: str | None = None):
        self.cfg = cfg
        names = tuple(s.strip() for s in (order or cfg.mapping).split(","))
        if sorted(names) != sorted(_FIELD_NAMES):
            raise ValueError(f"mapping must permute {_FIELD_NAMES}, got {names}")
        extents = {
            "offset": cfg.cacheline_bytes,
            "channel": cfg.channels,
            "bank_group": cfg.bank_groups,
            "bank": cfg.banks_per_group,
            "rank": cfg.ranks,
            "column": cfg.columns_per_row,
            "row": cfg.rows,
        }
        self._shift: dict[str, int] = {}
        self._mask: dict[str, int] = {}
        bit = 0
        for name in names:
            width = extents[name].bit_length() - 1
            self._shift[name] = bit
            self._mask[name] = extents[name] - 1
            bit += width
        self.total_bits = bit

    def decompose(self, addr: int) -> DramCoord:
        if not (0 <= addr < self.cfg.capacity_bytes):
            raise CapacityError(f"address {addr:#x} outside capacity "
                                f"{self.cfg.capacity_bytes:#x}")
        f = {n: (addr >> self._shift[n]) & self._mask[n] for n in _FIELD_NAMES}
        return DramCoord(channel=f["channel"], rank=f["rank"],
                         bank_group=f["bank_group"], bank=f["bank"],
                         row=f["row"], column=f["column"], word_offset=f["offset"])

    def compose(self, coord: DramCoord) -> int:
        f = {"offset": coord.word_offset, "channel": coord.channel,
             "bank_group": coord.bank_group, "bank": coord.bank,
             "rank": coord.rank, "column": coord.column, "row": coord.row}
        addr = 0
        for n in _FIELD_NAMES:
            v = f[n]
            if v & ~self._mask[n]:
                raise CapacityError(f"{n}={v} exceeds extent {self._mask[n] + 1}")
            addr |= v << self._shift[n]
        return addr

    def line_addr(self, coord: DramCoord) -> int:
        return self.compose(DramCoord(coord.channel, coord.rank, coord.bank_group,
                                      coord.bank, coord.row, coord.column, 0))

    def bank_id(self, coord: DramCoord) -> tuple[int, int, int, int]:
        return (coord.channel, coord.rank, coord.bank_group, coord.bank)

    # vectorized decomposition over uint64 address arrays (analytic counters)
    def decompose_fields(self, addrs: np.ndarray) -> dict[str, np.ndarray]:
        a = addrs.astype(np.uint64)
        return {n: ((a >> np.uint64(self._shift[n])) & np.uint64(self._mask[n]))
                for n in _FIELD_NAMES}


def map_address(addr: int, cfg: DramConfig, mapping: AddressMapping | None = None) -> DramCoord:
    return (mapping or AddressMapping(cfg)).decompose(addr)


@dataclass
class MemRequest:
    id: int
    kind: str                      # "read" | "write"
    address: int                   # physical byte address (cacheline aligned)
    coord: DramCoord
    origin: str                    # stream | indirect | baseline | llc_writeback
    callback: Optional[Callable[["MemRequest"], None]] = None
    arrival: int = 0
    act_issued: bool = field(default=False, repr=False)


@dataclass
class BankState:
    open_row: Optional[int] = None   # absent between a PRE and the next ACT
    t_act: int = NEG_INF
    t_pre: int = NEG_INF
    t_col: int = NEG_INF             # last RD/WR issue on this bank


@dataclass
class DramStats:
    reads: int = 0
    writes: int = 0
    acts: int = 0
    pres: int = 0
    row_hits: int = 0
    accepted: int = 0
    rejected: int = 0
    bytes: int = 0
    occupancy_integral: int = 0      # sum over channels of occupancy*fs
    elapsed_fs: int = 0
    bank_acts: dict = field(default_factory=dict)

    @property
    def rbh(self) -> Optional[float]:
        n = self.reads + self.writes
        return None if n == 0 else self.row_hits / n

    def utilization(self, peak_total_bw: float) -> float:
        if self.elapsed_fs == 0:
            return 0.0
        return self.bytes / (self.elapsed_fs * 1e-15 * peak_total_bw)

    def avg_occupancy(self, channels: int, buffer_size: int) -> float:
        if self.elapsed_fs == 0:
            return 0.0
        return self.occupancy_integral / (self.elapsed_fs * channels * buffer_size)


class _Channel:
    __slots__ = ("model", "cfg", "idx", "queue", "banks", "t_last_cmd",
                 "t_last_col", "bg_last_col", "t_bus_free", "eval_at",
                 "occ_integral", "occ_last_t", "TCK", "TRP", "TRCD", "TRAS",
                 "TRTP", "TCCD_S", "TCCD_L", "TRANSFER")

    def __init__(self, model: "DramModel", idx: int):
        self.model = model
        self.cfg = model.cfg
        self.idx = idx
        self.queue: list[MemRequest] = []
        self.banks: dict[tuple, BankState] = {}
        self.t_last_cmd = NEG_INF
        self.t_last_col = NEG_INF
        self.bg_last_col = -1
        self.t_bus_free = NEG_INF
        self.eval_at: Optional[int] = None
        self.occ_integral = 0
        self.occ_last_t = 0
        cfg = self.cfg
        self.TCK = cfg.tck_fs
        self.TRP = cfg.trp_fs
        self.TRCD = cfg.trcd_fs
        self.TRAS = cfg.tras_fs
        self.TRTP = cfg.trtp_fs
        self.TCCD_S = cfg.tccd_s_fs
        self.TCCD_L = cfg.tccd_l_fs
        self.TRANSFER = cfg.transfer_fs

    def bank(self, coord: DramCoord) -> BankState:
        key = (coord.rank, coord.bank_group, coord.bank)
        st = self.banks.get(key)
        if st is None:
            st = self.banks[key] = BankState()
        return st

    def _tick_occupancy(self, now: int) -> None:
        self.occ_integral += len(self.queue) * (now - self.occ_last_t)
        self.occ_last_t = now

    # -- timing ---------------------------------------------------------

    def earliest_issue(self, cmd: str, coord: DramCoord) -> int:
        bank = self.bank(coord)
        t = self.t_last_cmd + self.TCK  # one command per bus slot
        if cmd == "ACT":
            if bank.open_row is not None:
                raise ProtocolError("ACT while a row is open")
            t = max(t, bank.t_pre + self.TRP)
        elif cmd == "PRE":
            if bank.open_row is None:
                raise ProtocolError("PRE on a closed bank")
            t = max(t, bank.t_act + self.TRAS, bank.t_col + self.TRTP)
        elif cmd in ("RD", "WR"):
            if bank.open_row != coord.row:
                raise ProtocolError(f"{cmd} to row {coord.row} but open row "
                                    f"is {bank.open_row}")
            gap = self.TCCD_L if coord.bank_group == self.bg_last_col else self.TCCD_S
            t = max(t, bank.t_act + self.TRCD, self.t_last_col + gap, self.t_bus_free)
        else:
            raise ProtocolError(f"unknown command {cmd}")
        return t

    # -- scheduling -----------------------------------------------------

    def schedule_eval(self, t: int) -> None:
        if self.eval_at is not None and self.eval_at <= t:
            return
        self.eval_at = t
        self.model.eq.schedule(t, self._eval)

    def _next_command(self, req: MemRequest, wanted_first: dict) -> Optional[str]:
        bank = self.bank(req.coord)
        if bank.open_row is None:
            return "ACT"
        if bank.open_row == req.coord.row:
            return "RD" if req.kind == "read" else "WR"
        c = req.coord
        pos = wanted_first.get((c.rank, c.bank_group, c.bank, c.row))
        blocker = wanted_first.get((c.rank, c.bank_group, c.bank, bank.open_row))
        if blocker is not None and (pos is None or blocker < pos):
            return None
        return "PRE"

    def _eval(self) -> None:
        now = self.model.eq.now
        if self.eval_at != now:
            return  # superseded
        self.eval_at = None
        queue = self.queue
        if not queue:
            return
        banks = self.banks
        cmd_ready = self.t_last_cmd + self.TCK
        wanted_first = None
        best_other: Optional[tuple[MemRequest, str]] = None
        wake = None
        for i, req in enumerate(queue):  # arrival order == age order
            c = req.coord
            key = (c.rank, c.bank_group, c.bank)
            bank = banks.get(key)
            if bank is None:
                bank = banks[key] = BankState()
            open_row = bank.open_row
            if open_row == c.row:
                gap = self.TCCD_L if c.bank_group == self.bg_last_col else self.TCCD_S
                t = max(cmd_ready, bank.t_act + self.TRCD,
                        self.t_last_col + gap, self.t_bus_free)
                if t <= now:
                    # oldest issuable column access wins outright
                    self._issue(req, "RD" if req.kind == "read" else "WR")
                    self.schedule_eval(now + self.TCK)
                    return
            elif open_row is None:
                t = max(cmd_ready, bank.t_pre + self.TRP)
                if t <= now:
                    if best_other is None:
                        best_other = (req, "ACT")
                    continue
            else:
                # a conflicting row may be closed only by the oldest request
                # contending for the bank: hits of strictly older requests
                # must drain first, younger hit-wanters do not block
                if wanted_first is None:
                    wanted_first = {}
                    for j, r in enumerate(queue):
                        rc = r.coord
                        k = (rc.rank, rc.bank_group, rc.bank, rc.row)
                        if k not in wanted_first:
                            wanted_first[k] = j
                if wanted_first.get((key[0], key[1], key[2], open_row),
                                    1 << 30) < i:
                    continue
                t = max(cmd_ready, bank.t_act + self.TRAS, bank.t_col + self.TRTP)
                if t <= now:
                    if best_other is None:
                        best_other = (req, "PRE")
                    continue
            if t > now and (wake is None or t < wake):
                wake = t
        if best_other is not None:
            self._issue(*best_other)
            self.schedule_eval(now + self.TCK)
        elif wake is not None:
            self.schedule_eval(wake)

    def _issue(self, req: MemRequest, cmd: str) -> None:
        now = self.model.eq.now
        bank = self.bank(req.coord)
        stats = self.model.stats_
        self.t_last_cmd = now
        if self.model.trace is not None:
            self.model.record_cmd(now, req.coord, cmd)
        if cmd == "ACT":
            bank.open_row = req.coord.row
            bank.t_act = now
            bank.t_col = NEG_INF
            req.act_issued = True
            stats.acts += 1
            key = (self.idx, req.coord.rank, req.coord.bank_group, req.coord.bank)
            stats.bank_acts[key] = stats.bank_acts.get(key, 0) + 1
        elif cmd == "PRE":
            bank.open_row = None
            bank.t_pre = now
            stats.pres += 1
        else:
            bank.t_col = now
            self.t_last_col = now
            self.bg_last_col = req.coord.bank_group
            done = now + self.TRANSFER
            self.t_bus_free = done
            if cmd == "RD":
                stats.reads += 1
            else:
                stats.writes += 1
            if not req.act_issued:
                stats.row_hits += 1
            stats.bytes += self.cfg.cacheline_bytes
            self._tick_occupancy(now)
            self.queue.remove(req)
            self.model.eq.schedule(done, lambda r=req: self.model._complete(r))
            # the buffer slot frees here, not at transfer completion: let
            # armed waiters (LLC retries) claim it before the next cycle
            self.model.space.fire()


class DramModel:
    """All channels of one memory system plus shared statistics."""

    def __init__(self, cfg: DramConfig, eq: EventQueue,
                 mapping: AddressMapping | None = None, trace: list | None = None):
        self.cfg = cfg
        self.eq = eq
        self.mapping = mapping or AddressMapping(cfg)
        self.trace = trace
        self.channels = [_Channel(self, i) for i in range(cfg.channels)]
        self.stats_ = DramStats()
        self.space = Notifier()
        self._next_id = 0

    def make_request(self, kind: str, address: int, origin: str,
                     callback=None, coord: DramCoord | None = None) -> MemRequest:
        if coord is None:
            coord = self.mapping.decompose(address)
        req = MemRequest(id=self._next_id, kind=kind,
                         address=address & ~(self.cfg.cacheline_bytes - 1),
                         coord=coord, origin=origin, callback=callback)
        self._next_id += 1
        return req

    def has_space(self, channel: int) -> bool:
        return len(self.channels[channel].queue) < self.cfg.request_buffer_size

    def enqueue(self, req: MemRequest) -> bool:
        """Backpressure signal: False when the channel buffer is full."""
        ch = self.channels[req.coord.channel]
        if len(ch.queue) >= self.cfg.request_buffer_size:
            self.stats_.rejected += 1
            return False
        req.arrival = self.eq.now
        ch._tick_occupancy(self.eq.now)
        ch.queue.append(req)
        self.stats_.accepted += 1
        ch.schedule_eval(self.eq.now)
        return True

    def _complete(self, req: MemRequest) -> None:
        ch = self.channels[req.coord.channel]
        ch.schedule_eval(self.eq.now)
        if req.callback is not None:
            req.callback(req)
        self.space.fire()

    def record_cmd(self, t: int, coord: DramCoord, cmd: str) -> None:
        if self.trace is not None:
            self.trace.append(("cmd", t, coord.channel, coord.rank,
                               coord.bank_group, coord.bank, cmd,
                               coord.row, coord.column))

    def stats(self) -> DramStats:
        """Snapshot; occupancy/elapsed are settled up to `now`."""
        for ch in self.channels:
            ch._tick_occupancy(self.eq.now)
        s = self.stats_
        s.occupancy_integral = sum(ch.occ_integral for ch in self.channels)
        s.elapsed_fs = self.eq.now
        return s

    def idle(self) -> bool:
        return all(not ch.queue for ch in self.channels)
