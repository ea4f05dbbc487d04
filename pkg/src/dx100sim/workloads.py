"""Microbenchmark generators: gather/scatter/RMW programs and index
orderings with controllable row-buffer locality and interleaving.

The all-miss universe is a set of unique word indices, one per distinct
cacheline, spread evenly over every channel, bank group, bank, and
`rows_per_bank` row indices.  Orderings are constructed per bank as
runs of same-row accesses (run length tuned so the fraction of
consecutive same-row pairs matches `rbh_target`), then merged across
banks with a rotation whose nesting order realizes the channel (CHI)
and bank-group (BGI) interleaving knobs.  One logical specification
yields three coherent artifacts: the accelerator program, the
baseline's per-core cacheline trace, and the arrays the oracle runs on.
"""

import random
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .dram import AddressMapping, DramCoord
from .errors import GenerationError
from .isa import AluOp, DType, Instruction, Opcode
from .memory import MemoryImage
from .program import ArrayDecl, Program, Wait

KINDS = ("gather_spd", "gather_full", "scatter", "rmw")

# worst -> best: row locality first, then bank-group, then channel interleaving
ALLMISS_GRID = (
    (0.0, False, False),
    (0.25, False, False),
    (0.5, False, False),
    (0.75, False, False),
    (0.875, False, False),
    (1.0, False, False),
    (1.0, False, True),
    (1.0, True, True),
)


@dataclass
class PatternSpec:
    unique_indices: int = 65536
    rows_per_bank: int = 16
    rbh_target: float = 1.0
    chi: bool = True
    bgi: bool = True
    seed: int = 0
    dtype: DType = DType.u32

    def meta(self) -> dict:
        return {"rbh_target": self.rbh_target,
                "chi": "on" if self.chi else "off",
                "bgi": "on" if self.bgi else "off",
                "seed": self.seed}


@dataclass
class Workload:
    program: Program
    arrays: dict[str, np.ndarray]
    baseline_traces: list[list[tuple[str, int]]]
    ordering: np.ndarray               # element indices into the data array
    meta: dict = field(default_factory=dict)

    def image(self, cfg: RunConfig) -> MemoryImage:
        img = MemoryImage(cfg.dram.cacheline_bytes, cfg.dram.row_group_bytes,
                          cfg.dram.capacity_bytes)
        written = self.program.written_arrays()
        for i, decl in enumerate(self.program.arrays):
            img.register(decl.name, decl.dtype,
                         self.arrays[decl.name].copy(), writable=(i in written))
        return img


# ---------------------------------------------------------------------------
# index-ordering construction

def _bank_stream(rng: random.Random, rows: int, cols: int,
                 target: float) -> list[tuple[int, int]]:
    """One bank's (row, column) access order with the requested fraction
    of consecutive same-row pairs."""
    m = rows * cols
    runs = round(m * (1.0 - target))
    runs = max(rows, min(m, runs))
    achieved = (m - runs) / m
    if abs(achieved - target) > 0.02:
        raise GenerationError(
            f"rbh_target={target} infeasible with {cols} columns over {rows} "
            f"rows: closest achievable fraction is {achieved:.3f}")
    base, extra = divmod(runs, rows)
    chunks: list[deque] = []
    for r in range(rows):
        col_order = list(range(cols))
        rng.shuffle(col_order)
        k = base + (1 if r < extra else 0)
        q, rem = divmod(cols, k)
        row_chunks = deque()
        pos = 0
        for c in range(k):
            size = q + (1 if c < rem else 0)
            row_chunks.append([(r, col) for col in col_order[pos:pos + size]])
            pos += size
        chunks.append(row_chunks)
    stream: list[tuple[int, int]] = []
    while any(chunks):
        for r in range(rows):
            if chunks[r]:
                stream.extend(chunks[r].popleft())
    return stream


def measured_run_fraction(stream: list[tuple[int, int]]) -> float:
    hits = sum(1 for a, b in zip(stream, stream[1:]) if a[0] == b[0])
    return hits / len(stream) if stream else 0.0


def _visit_order(cfg, chi: bool, bgi: bool) -> list[tuple[int, int, int, int]]:
    C, R = cfg.channels, cfg.ranks
    BG, B = cfg.bank_groups, cfg.banks_per_group
    out = []
    if chi and bgi:
        iters = [(ch, ra, bg, ba) for ba in range(B) for ra in range(R)
                 for bg in range(BG) for ch in range(C)]
    elif chi and not bgi:
        iters = [(ch, ra, bg, ba) for bg in range(BG) for ra in range(R)
                 for ba in range(B) for ch in range(C)]
    elif not chi and bgi:
        iters = [(ch, ra, bg, ba) for ch in range(C) for ra in range(R)
                 for ba in range(B) for bg in range(BG)]
    else:
        iters = [(ch, ra, bg, ba) for ch in range(C) for ra in range(R)
                 for bg in range(BG) for ba in range(B)]
    out.extend(iters)
    return out


def gen_allmiss(spec: PatternSpec, mapping: AddressMapping) -> np.ndarray:
    """Ordering of unique word indices realizing (rbh, chi, bgi).

    The returned element indices address a data array based at 0 whose
    words each live in a distinct cacheline.
    """
    cfg = mapping.cfg
    banks_total = cfg.channels * cfg.ranks * cfg.bank_groups * cfg.banks_per_group
    denom = banks_total * spec.rows_per_bank
    if spec.unique_indices % denom:
        raise GenerationError(
            f"unique_indices={spec.unique_indices} does not distribute evenly "
            f"over {banks_total} banks x {spec.rows_per_bank} rows")
    cols = spec.unique_indices // denom
    if cols > cfg.columns_per_row:
        raise GenerationError(
            f"needs {cols} distinct columns per row but rows hold only "
            f"{cfg.columns_per_row} cachelines")
    if spec.rows_per_bank > cfg.rows:
        raise GenerationError("rows_per_bank exceeds configured rows")
    rng = random.Random(spec.seed)
    width = spec.dtype.width
    words_per_line = cfg.cacheline_bytes // width
    streams: dict[tuple, deque] = {}
    for key in _visit_order(cfg, spec.chi, spec.bgi):
        bank_rng = random.Random((spec.seed, key))
        pairs = _bank_stream(bank_rng, spec.rows_per_bank, cols, spec.rbh_target)
        ch, ra, bg, ba = key
        elems = deque()
        for row, col in pairs:
            wo = bank_rng.randrange(words_per_line) * width
            addr = mapping.compose(DramCoord(channel=ch, rank=ra, bank_group=bg,
                                             bank=ba, row=row, column=col,
                                             word_offset=wo))
            elems.append(addr // width)
        streams[key] = elems
    order = _visit_order(cfg, spec.chi, spec.bgi)
    per_bank = spec.rows_per_bank * cols
    out = np.empty(spec.unique_indices, dtype=np.uint64)
    pos = 0
    for _ in range(per_bank):
        for key in order:
            out[pos] = streams[key].popleft()
            pos += 1
    return out


# ---------------------------------------------------------------------------
# program + baseline trace emission

def gen_program(kind: str, spec: PatternSpec, cfg: RunConfig) -> Workload:
    if kind not in KINDS:
        raise GenerationError(f"unknown workload kind '{kind}'")
    mapping = AddressMapping(cfg.dram)
    ordering = gen_allmiss(spec, mapping)
    n = spec.unique_indices
    dtype = spec.dtype
    width = dtype.width
    data_len = spec.rows_per_bank * cfg.dram.row_group_bytes // width
    nprng = np.random.default_rng(spec.seed)
    if dtype.is_float:
        a_data = nprng.standard_normal(data_len).astype(dtype.np_dtype)
        c_data = nprng.standard_normal(n).astype(dtype.np_dtype)
    else:
        a_data = nprng.integers(0, 1 << 16, data_len).astype(dtype.np_dtype)
        c_data = nprng.integers(0, 1 << 16, n).astype(dtype.np_dtype)
    b_data = ordering.astype(np.uint32)

    prog = Program()
    prog.arrays.append(ArrayDecl("A", dtype, data_len))
    prog.arrays.append(ArrayDecl("B", DType.u32, n))
    prog.arrays.append(ArrayDecl("C", dtype, n))
    arrays = {"A": a_data, "B": b_data,
              "C": c_data if kind in ("scatter", "rmw")
              else np.zeros(n, dtype=dtype.np_dtype)}

    tile = cfg.maa.tile_size
    chunks = -(-n // tile)
    prog.reg_inits[0] = 1                       # unit stride
    reg = 1
    bounds = []
    for k in range(chunks):
        lo, hi = k * tile, min((k + 1) * tile, n)
        if reg + 1 >= min(cfg.maa.num_regs, cfg.maa.rng_cursor_outer_reg):
            raise GenerationError("too many tiles for the register file; "
                                  "reduce unique_indices")
        prog.reg_inits[reg] = lo
        prog.reg_inits[reg + 1] = hi
        bounds.append((reg, reg + 1))
        reg += 2

    def sld_b(k):
        return Instruction(opcode=Opcode.SLD, dtype=DType.u32, base=1,
                           td=k % 2, rs1=bounds[k][0], rs2=bounds[k][1], rs3=0)

    def sld_c(k):
        return Instruction(opcode=Opcode.SLD, dtype=dtype, base=2,
                           td=4 + k % 2, rs1=bounds[k][0], rs2=bounds[k][1], rs3=0)

    body: list = []
    if kind in ("gather_spd", "gather_full"):
        body.append(sld_b(0))
        for k in range(chunks):
            body.append(Instruction(opcode=Opcode.ILD, dtype=dtype, base=0,
                                    td=2 + k % 2, ts1=k % 2))
            if k + 1 < chunks:
                body.append(sld_b(k + 1))
            if kind == "gather_full":
                body.append(Instruction(opcode=Opcode.SST, dtype=dtype, base=2,
                                        ts1=2 + k % 2, rs1=bounds[k][0],
                                        rs2=bounds[k][1], rs3=0))
            else:
                body.append(Wait(2 + k % 2))
    else:
        opcode = Opcode.IST if kind == "scatter" else Opcode.IRMW
        op = None if kind == "scatter" else AluOp.ADD
        body.append(sld_b(0))
        body.append(sld_c(0))
        for k in range(chunks):
            body.append(Instruction(opcode=opcode, dtype=dtype, base=0, op=op,
                                    ts1=k % 2, ts2=4 + k % 2))
            if k + 1 < chunks:
                body.append(sld_b(k + 1))
                body.append(sld_c(k + 1))
    prog.body = body

    traces = _baseline_traces(kind, ordering, prog, arrays, cfg)
    meta = {"kind": kind, **spec.meta()}
    return Workload(program=prog, arrays=arrays, baseline_traces=traces,
                    ordering=ordering, meta=meta)


def _baseline_traces(kind: str, ordering: np.ndarray, prog: Program,
                     arrays: dict, cfg: RunConfig) -> list[list[tuple]]:
    """Logical cacheline accesses with dependency edges, per issuing core.

    Entries are (kind, line_addr, dep): an indirect access depends on the
    index-line load that produces its address, an RMW write on its own
    read, a gathered store on the load it packs.  That dependency chain
    is what limits the conventional cores' useful outstanding accesses.
    """
    img = MemoryImage(cfg.dram.cacheline_bytes, cfg.dram.row_group_bytes,
                      cfg.dram.capacity_bytes)
    for decl in prog.arrays:
        img.register(decl.name, decl.dtype, arrays[decl.name])
    a, b, c = (img[nm] for nm in ("A", "B", "C"))
    line = cfg.dram.cacheline_bytes
    width = a.dtype.width
    b_per_line = line // 4
    cores = max(1, cfg.baseline.cores)
    chunk = -(-len(ordering) // cores)
    traces: list[list[tuple]] = []
    for k in range(cores):
        part = ordering[k * chunk:(k + 1) * chunk]
        acc: list[tuple] = []
        b_dep = c_dep = -1
        block_val_dep = -1
        for j, elem in enumerate(part):
            i = k * chunk + j
            if j % b_per_line == 0:
                if kind == "gather_full" and acc:
                    acc.append(("w", c.base + ((i - 1) * width // line) * line,
                                block_val_dep))
                acc.append(("r", b.base + (i * 4 // line) * line, -1))
                b_dep = len(acc) - 1
                if kind in ("scatter", "rmw"):
                    acc.append(("r", c.base + (i * width // line) * line, -1))
                    c_dep = len(acc) - 1
            a_line = (a.base + int(elem) * width) & ~(line - 1)
            if kind in ("gather_spd", "gather_full"):
                acc.append(("r", a_line, b_dep))
                block_val_dep = len(acc) - 1
            elif kind == "scatter":
                acc.append(("w", a_line, max(b_dep, c_dep)))
            else:  # rmw: read-modify-write of the target line
                acc.append(("r", a_line, max(b_dep, c_dep)))
                acc.append(("w", a_line, len(acc) - 1))
        if kind == "gather_full" and acc:
            acc.append(("w", c.base + ((len(part) - 1 + k * chunk) * width
                                       // line) * line, block_val_dep))
        traces.append(acc)
    return traces


# ---------------------------------------------------------------------------
# randomized program corpus (differential testing)

_INT_DTYPES = (DType.u32, DType.i32, DType.u64, DType.i64)
_ALL_DTYPES = _INT_DTYPES + (DType.f32, DType.f64)


def random_program(seed: int, max_iters: int = 256,
                   cfg: RunConfig | None = None) -> Workload:
    """A random validated program with duplicate-heavy indices.

    Data arrays stay small enough that one tile's worth of touched
    cachelines always fits the row table (coalescing stays exact), while
    index tiles are heavy with duplicates and conditions.
    """
    cfg = cfg or RunConfig()
    rng = random.Random(seed)
    nprng = np.random.default_rng(seed)
    prog = Program()
    arrays: dict[str, np.ndarray] = {}
    banks_total = (cfg.dram.channels * cfg.dram.ranks * cfg.dram.bank_groups
                   * cfg.dram.banks_per_group)
    line = cfg.dram.cacheline_bytes

    def new_array(dtype: DType, length: int, data: np.ndarray,
                  name_hint: str) -> int:
        name = f"{name_hint}{len(prog.arrays)}"
        prog.arrays.append(ArrayDecl(name, dtype, length))
        arrays[name] = data.astype(dtype.np_dtype)
        return len(prog.arrays) - 1

    # data arrays capped at one row-table residency (banks * columns * line)
    cap_bytes = banks_total * cfg.maa.row_table_cols * line
    data_ids = []
    for _ in range(rng.randint(1, 3)):
        dtype = rng.choice(_ALL_DTYPES)
        max_elems = cap_bytes // dtype.width
        length = rng.choice([64, 128, 256, 512, 1024]) % max_elems or 64
        if dtype.is_float:
            data = nprng.standard_normal(length)
        else:
            data = nprng.integers(0, 1 << 20, length)
        data_ids.append(new_array(dtype, length, data, "data"))

    next_tile = 0
    next_reg = 1
    produced: dict[int, dict] = {}    # tile -> {"n": size, "bound": max index+1}
    index_tiles: list[int] = []
    value_tiles: dict[DType, list[int]] = {}
    cond_tiles: list[int] = []
    body: list = []

    def alloc_tile():
        nonlocal next_tile
        if next_tile >= cfg.maa.num_tiles:
            return None
        t = next_tile
        next_tile += 1
        return t

    def alloc_regs(k):
        nonlocal next_reg
        if next_reg + k > min(cfg.maa.rng_cursor_outer_reg,
                              cfg.maa.rng_cursor_inner_reg):
            return None
        r = list(range(next_reg, next_reg + k))
        next_reg += k
        return r

    def sld_index(target_id: int, n: int):
        """Load a duplicate-heavy index tile for the target array."""
        t = alloc_tile()
        regs = alloc_regs(3)
        if t is None or regs is None:
            return None
        length = prog.arrays[target_id].length
        pool = nprng.integers(0, length, size=max(1, min(length, 48)))
        idx = pool[nprng.integers(0, pool.size, size=n)]
        src = new_array(DType.u32, n, idx, "idx")
        prog.reg_inits[regs[0]] = 0
        prog.reg_inits[regs[1]] = n
        prog.reg_inits[regs[2]] = 1
        body.append(Instruction(opcode=Opcode.SLD, dtype=DType.u32, base=src,
                                td=t, rs1=regs[0], rs2=regs[1], rs3=regs[2],
                                tc=maybe_cond(n)))
        produced[t] = {"n": n, "target": target_id}
        index_tiles.append(t)
        return t

    def sld_values(dtype: DType, n: int):
        t = alloc_tile()
        regs = alloc_regs(3)
        if t is None or regs is None:
            return None
        if dtype.is_float:
            data = nprng.standard_normal(n)
        else:
            data = nprng.integers(0, 1 << 12, n)
        src = new_array(dtype, n, data, "val")
        prog.reg_inits[regs[0]] = 0
        prog.reg_inits[regs[1]] = n
        prog.reg_inits[regs[2]] = 1
        body.append(Instruction(opcode=Opcode.SLD, dtype=dtype, base=src,
                                td=t, rs1=regs[0], rs2=regs[1], rs3=regs[2]))
        produced[t] = {"n": n}
        value_tiles.setdefault(dtype, []).append(t)
        return t

    def maybe_cond(n: int):
        usable = [t for t in cond_tiles if produced[t]["n"] >= n]
        if usable and rng.random() < 0.4:
            return rng.choice(usable)
        return None

    def make_cond(n: int):
        src = None
        for dt, tiles in value_tiles.items():
            for t in tiles:
                if produced[t]["n"] >= n:
                    src = (dt, t)
                    break
            if src:
                break
        if src is None:
            return None
        t = alloc_tile()
        regs = alloc_regs(1)
        if t is None or regs is None:
            return None
        dt, s = src
        op = rng.choice([AluOp.LT, AluOp.GT, AluOp.EQ, AluOp.GE, AluOp.LE])
        thresh = rng.randint(0, 1 << 11)
        prog.reg_inits[regs[0]] = (np.float64(thresh).view(np.uint64).item()
                                   if dt is DType.f64 else
                                   np.float32(thresh).view(np.uint32).item()
                                   if dt is DType.f32 else thresh)
        body.append(Instruction(opcode=Opcode.ALUS, dtype=dt, op=op,
                                td=t, ts1=s, rs1=regs[0]))
        produced[t] = {"n": produced[s]["n"]}
        cond_tiles.append(t)
        return t

    def rng_ranges(target_id: int):
        """Fused range expansion whose inner values index the target."""
        length = prog.arrays[target_id].length
        k = rng.randint(4, 24)
        mins = nprng.integers(0, max(1, length - 8), size=k)
        deltas = nprng.integers(0, 9, size=k)
        maxs = np.minimum(mins + deltas, length)
        t_min = alloc_tile()
        t_max = alloc_tile()
        t_out = alloc_tile()
        t_in = alloc_tile()
        regs = alloc_regs(7)
        if None in (t_min, t_max, t_out, t_in) or regs is None:
            return None
        src_min = new_array(DType.u32, k, mins, "rmin")
        src_max = new_array(DType.u32, k, maxs, "rmax")
        for r, v in zip(regs, (0, k, 1, 0, k, 1, 1)):
            prog.reg_inits[r] = v
        body.append(Instruction(opcode=Opcode.SLD, dtype=DType.u32, base=src_min,
                                td=t_min, rs1=regs[0], rs2=regs[1], rs3=regs[2]))
        body.append(Instruction(opcode=Opcode.SLD, dtype=DType.u32, base=src_max,
                                td=t_max, rs1=regs[3], rs2=regs[4], rs3=regs[5]))
        body.append(Instruction(opcode=Opcode.RNG, td=t_out, td2=t_in,
                                ts1=t_min, ts2=t_max, rs1=regs[6]))
        pairs = int(sum(-(-(int(b) - int(a)) // 1) for a, b in zip(mins, maxs)
                        if b > a))
        produced[t_min] = {"n": k}
        produced[t_max] = {"n": k}
        produced[t_out] = {"n": pairs}
        produced[t_in] = {"n": pairs, "target": target_id}
        if 0 < pairs <= max_iters:
            index_tiles.append(t_in)
        return t_in

    def sst_out(dtype: DType):
        vals = [t for t in value_tiles.get(dtype, ())]
        if not vals:
            return None
        src = rng.choice(vals)
        nn = produced[src]["n"]
        t_regs = alloc_regs(3)
        if t_regs is None:
            return None
        out = new_array(dtype, nn, np.zeros(nn), "out")
        prog.reg_inits[t_regs[0]] = 0
        prog.reg_inits[t_regs[1]] = nn
        prog.reg_inits[t_regs[2]] = 1
        body.append(Instruction(opcode=Opcode.SST, dtype=dtype, base=out,
                                ts1=src, rs1=t_regs[0], rs2=t_regs[1],
                                rs3=t_regs[2], tc=maybe_cond(nn)))
        return out

    n_ops = rng.randint(3, 7)
    target = rng.choice(data_ids)
    n = rng.choice([16, 33, 64, 100, max_iters])
    sld_values(prog.arrays[target].dtype, n)
    make_cond(n)
    sld_index(target, n)
    if rng.random() < 0.5:
        rng_ranges(rng.choice(data_ids))
    for _ in range(n_ops):
        choice = rng.random()
        target = rng.choice(data_ids)
        decl = prog.arrays[target]
        if choice < 0.22:
            sld_index(target, n)
        elif choice < 0.34:
            sld_values(decl.dtype, n)
        elif choice < 0.42:
            make_cond(n)
        elif choice < 0.50:
            sst_out(decl.dtype)
        elif choice < 0.90:
            usable_idx = [t for t in index_tiles
                          if produced[t].get("target") == target
                          and produced[t]["n"] <= n]
            if not usable_idx:
                continue
            ts1 = rng.choice(usable_idx)
            kind = rng.random()
            if kind < 0.45:
                td = alloc_tile()
                if td is None:
                    break
                body.append(Instruction(opcode=Opcode.ILD, dtype=decl.dtype,
                                        base=target, td=td, ts1=ts1,
                                        tc=maybe_cond(produced[ts1]["n"])))
                produced[td] = {"n": produced[ts1]["n"]}
                value_tiles.setdefault(decl.dtype, []).append(td)
            else:
                vals = [t for t in value_tiles.get(decl.dtype, ())
                        if produced[t]["n"] >= produced[ts1]["n"]]
                if not vals:
                    continue
                ts2 = rng.choice(vals)
                if kind < 0.72:
                    body.append(Instruction(opcode=Opcode.IST, dtype=decl.dtype,
                                            base=target, ts1=ts1, ts2=ts2,
                                            tc=maybe_cond(produced[ts1]["n"])))
                else:
                    ops = [AluOp.ADD, AluOp.MIN, AluOp.MAX]
                    if not decl.dtype.is_float:
                        ops += [AluOp.AND, AluOp.OR, AluOp.XOR]
                    body.append(Instruction(opcode=Opcode.IRMW, dtype=decl.dtype,
                                            base=target, op=rng.choice(ops),
                                            ts1=ts1, ts2=ts2,
                                            tc=maybe_cond(produced[ts1]["n"])))
        else:
            # elementwise transform on a value tile
            vals = value_tiles.get(decl.dtype, ())
            if not vals:
                continue
            src = rng.choice(vals)
            td = alloc_tile()
            if td is None:
                break
            nn = produced[src]["n"]
            if decl.dtype.is_float:
                op = rng.choice([AluOp.ADD, AluOp.SUB, AluOp.MUL,
                                 AluOp.MIN, AluOp.MAX])
            else:
                op = rng.choice([AluOp.ADD, AluOp.SUB, AluOp.MUL, AluOp.MIN,
                                 AluOp.MAX, AluOp.AND, AluOp.OR, AluOp.XOR,
                                 AluOp.SHR, AluOp.SHL])
            peer = [t for t in vals if produced[t]["n"] == nn]
            if rng.random() < 0.5 and len(peer) > 1:
                ts2 = rng.choice([t for t in peer if t != src] or peer)
                body.append(Instruction(opcode=Opcode.ALUV, dtype=decl.dtype,
                                        op=op, td=td, ts1=src, ts2=ts2,
                                        tc=maybe_cond(nn)))
            else:
                regs = alloc_regs(1)
                if regs is None:
                    break
                prog.reg_inits[regs[0]] = rng.randint(0, 1 << 10)
                body.append(Instruction(opcode=Opcode.ALUS, dtype=decl.dtype,
                                        op=op, td=td, ts1=src, rs1=regs[0]))
            produced[td] = {"n": nn}
            value_tiles.setdefault(decl.dtype, []).append(td)
        if rng.random() < 0.2 and produced:
            body.append(Wait(rng.choice(sorted(produced))))
    for t in sorted(produced):
        body.append(Wait(t))
    prog.body = body
    return Workload(program=prog, arrays=arrays, baseline_traces=[],
                    ordering=np.zeros(0, dtype=np.uint64),
                    meta={"kind": "random", "seed": seed})
