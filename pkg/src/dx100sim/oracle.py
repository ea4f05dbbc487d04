"""Reference executor and analytic counters.

Runs each instruction as its literal sequential loop, in program order,
with full synchronization (no overlap): scatters apply writes in
ascending iteration order (last write wins), RMWs fold in ascending
iteration order.  The implementation vectorizes with numpy but keeps
those ordering guarantees explicitly.  Timing configuration never
enters here, which is what makes it usable as ground truth for the
event-driven simulator.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, ValidationError
from .isa import AluOp, DType, Instruction, Opcode
from .program import Program, Wait, build_arrays, validate_program


@dataclass
class OracleState:
    arrays: dict[str, np.ndarray]
    tiles: np.ndarray                    # (num_tiles, tile_size) raw words
    sizes: list[int]
    regs: list[int] = field(default_factory=lambda: [0] * 32)


_UINT = {4: np.uint32, 8: np.uint64}


def _as_dtype(raw: np.ndarray, dtype: DType) -> np.ndarray:
    """Reinterpret the low bytes of raw tile words as the given dtype."""
    u = raw.astype(np.uint64)
    if dtype.width == 4:
        return (u & np.uint64(0xFFFFFFFF)).astype(np.uint32).view(dtype.np_dtype)
    return u.view(np.uint64).view(dtype.np_dtype)


def _to_raw(vals: np.ndarray, dtype: DType) -> np.ndarray:
    v = np.asarray(vals, dtype=dtype.np_dtype)
    if dtype.width == 4:
        return v.view(np.uint32).astype(np.uint64)
    return v.view(np.uint64).copy()


def _indices(state: OracleState, instr: Instruction, n: int) -> np.ndarray:
    return state.tiles[instr.ts1][:n].astype(np.uint64)


def _cond_mask(state: OracleState, instr: Instruction, n: int) -> np.ndarray:
    if instr.tc is None:
        return np.ones(n, dtype=bool)
    return state.tiles[instr.tc][:n] != 0


def _check_bounds(idx: np.ndarray, length: int, pos: int) -> None:
    bad = np.nonzero(idx >= length)[0]
    if bad.size:
        raise BoundsError(f"instruction {pos}: index {int(idx[bad[0]])} at "
                          f"iteration {int(bad[0])} outside array of "
                          f"length {length}")


def _alu_vec(op: AluOp, dtype: DType, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if op in (AluOp.AND, AluOp.OR, AluOp.XOR):
        ua = a.view(_UINT[dtype.width])
        ub = b.view(_UINT[dtype.width])
        r = {AluOp.AND: np.bitwise_and, AluOp.OR: np.bitwise_or,
             AluOp.XOR: np.bitwise_xor}[op](ua, ub)
        return r.view(dtype.np_dtype)
    if op.is_compare:
        cmp = {AluOp.LT: np.less, AluOp.LE: np.less_equal, AluOp.GT: np.greater,
               AluOp.GE: np.greater_equal, AluOp.EQ: np.equal}[op]
        return cmp(a, b)
    if op is AluOp.ADD:
        return a + b
    if op is AluOp.SUB:
        return a - b
    if op is AluOp.MUL:
        return a * b
    if op is AluOp.MIN:
        return np.minimum(a, b)
    if op is AluOp.MAX:
        return np.maximum(a, b)
    bits = dtype.width * 8
    u = _UINT[dtype.width]
    shift = (b.view(u) & u(bits - 1)).astype(np.uint8)
    if op is AluOp.SHR:
        return np.right_shift(a, shift)      # arithmetic on signed dtypes
    return np.left_shift(a.view(u), shift).view(dtype.np_dtype)


def oracle_run(prog: Program, arrays: dict[str, np.ndarray] | None = None,
               num_tiles: int = 32, tile_size: int = 16384,
               cursor_regs: tuple[int, int] = (30, 31)) -> OracleState:
    diags = validate_program(prog, num_tiles, 32, tile_size, cursor_regs)
    if diags:
        msgs = "; ".join(f"[{i}] {m}" for i, m in diags)
        raise ValidationError(f"program invalid: {msgs}")
    if arrays is None:
        arrays = build_arrays(prog)
    arrays = {k: v.copy() for k, v in arrays.items()}
    state = OracleState(arrays=arrays,
                        tiles=np.zeros((num_tiles, tile_size), dtype=np.uint64),
                        sizes=[0] * num_tiles)
    for k, v in prog.reg_inits.items():
        state.regs[k] = v & ((1 << 64) - 1)
    for pos, stmt in enumerate(prog.body):
        if isinstance(stmt, Wait):
            continue
        _exec(state, prog, stmt, pos, tile_size, cursor_regs)
    return state


def _exec(state: OracleState, prog: Program, i: Instruction, pos: int,
          tile_size: int, cursor_regs: tuple[int, int]) -> None:
    opc = i.opcode
    if opc is Opcode.SLD or opc is Opcode.SST:
        lo, hi, stride = (state.regs[r] for r in (i.rs1, i.rs2, i.rs3))
        n = 0 if hi <= lo else -(-(hi - lo) // stride)
        arr = state.arrays[prog.arrays[i.base].name]
        elems = np.arange(n, dtype=np.int64) * stride + lo
        mask = _cond_mask(state, i, n)
        _check_bounds(elems.astype(np.uint64), arr.size, pos)
        if opc is Opcode.SLD:
            out = np.zeros(n, dtype=arr.dtype)
            out[mask] = arr[elems[mask]]
            state.tiles[i.td][:n] = _to_raw(out, i.dtype)
            state.sizes[i.td] = n
        else:
            vals = _as_dtype(state.tiles[i.ts1][:n], i.dtype)
            arr[elems[mask]] = vals[mask]   # strictly increasing: no duplicates
    elif opc is Opcode.ILD:
        n = state.sizes[i.ts1]
        arr = state.arrays[prog.arrays[i.base].name]
        idx = _indices(state, i, n)
        mask = _cond_mask(state, i, n)
        _check_bounds(idx[mask], arr.size, pos)
        out = np.zeros(n, dtype=arr.dtype)
        out[mask] = arr[idx[mask].astype(np.int64)]
        state.tiles[i.td][:n] = _to_raw(out, i.dtype)
        state.sizes[i.td] = n
    elif opc is Opcode.IST:
        n = state.sizes[i.ts1]
        arr = state.arrays[prog.arrays[i.base].name]
        idx = _indices(state, i, n)
        mask = _cond_mask(state, i, n)
        _check_bounds(idx[mask], arr.size, pos)
        vals = _as_dtype(state.tiles[i.ts2][:n], i.dtype)
        sel = idx[mask].astype(np.int64)
        vsel = vals[mask]
        # ascending-iteration writes, so the last duplicate wins: keep the
        # final occurrence of each index
        rev_idx = sel[::-1]
        uniq, first_pos = np.unique(rev_idx, return_index=True)
        arr[uniq] = vsel[::-1][first_pos]
    elif opc is Opcode.IRMW:
        n = state.sizes[i.ts1]
        arr = state.arrays[prog.arrays[i.base].name]
        idx = _indices(state, i, n)
        mask = _cond_mask(state, i, n)
        _check_bounds(idx[mask], arr.size, pos)
        vals = _as_dtype(state.tiles[i.ts2][:n], i.dtype)
        sel = idx[mask].astype(np.int64)
        vsel = vals[mask]
        if i.op is AluOp.ADD:
            np.add.at(arr, sel, vsel)       # applied in ascending iteration order
        elif i.op is AluOp.MIN:
            np.minimum.at(arr, sel, vsel)
        elif i.op is AluOp.MAX:
            np.maximum.at(arr, sel, vsel)
        else:
            u = _UINT[i.dtype.width]
            ua = arr.view(u)
            uv = vsel.view(u)
            ufunc = {AluOp.AND: np.bitwise_and, AluOp.OR: np.bitwise_or,
                     AluOp.XOR: np.bitwise_xor}[i.op]
            ufunc.at(ua, sel, uv)
    elif opc in (Opcode.ALUV, Opcode.ALUS):
        n = state.sizes[i.ts1]
        a = _as_dtype(state.tiles[i.ts1][:n], i.dtype)
        if opc is Opcode.ALUV:
            b = _as_dtype(state.tiles[i.ts2][:n], i.dtype)
        else:
            scalar_raw = np.uint64(state.regs[i.rs1])
            b = np.full(n, _as_dtype(np.array([scalar_raw]), i.dtype)[0])
        mask = _cond_mask(state, i, n)
        res = _alu_vec(i.op, i.dtype, a, b)
        raw = (res.astype(np.uint64) if i.op.is_compare
               else _to_raw(res, i.dtype))
        raw = np.where(mask, raw, np.uint64(0))
        state.tiles[i.td][:n] = raw
        state.sizes[i.td] = n
    elif opc is Opcode.RNG:
        n = state.sizes[i.ts1]
        mins = state.tiles[i.ts1][:n]        # raw words read as unsigned
        maxs = state.tiles[i.ts2][:n]
        mask = _cond_mask(state, i, n)
        stride = state.regs[i.rs1]
        ri = state.regs[cursor_regs[0]]
        rj = state.regs[cursor_regs[1]]
        outer, inner, cursor = enumerate_ranges(
            mins, maxs, stride, mask, tile_size, resume=(ri, rj))
        k = outer.size
        state.tiles[i.td][:k] = outer.astype(np.uint64)
        state.tiles[i.td2][:k] = inner.astype(np.uint64)
        state.sizes[i.td] = k
        state.sizes[i.td2] = k
        state.regs[cursor_regs[0]], state.regs[cursor_regs[1]] = cursor


def enumerate_ranges(mins: np.ndarray, maxs: np.ndarray, stride: int,
                     mask: np.ndarray, cap: int,
                     resume: tuple[int, int] = (0, 0)):
    """Nested-loop expansion of [min_i, max_i) by stride, lexicographic.

    Emits at most `cap` pairs starting from the resume point; returns
    (outer, inner, next_cursor) with next_cursor == (0, 0) when the
    expansion completed.
    """
    ri, rj = resume
    outer_parts = []
    inner_parts = []
    left = cap
    n = mins.size
    i = ri
    while i < n and left > 0:
        if not mask[i]:
            i += 1
            continue
        lo = int(mins[i])
        hi = int(maxs[i])
        start = rj if (i == ri and (ri != 0 or rj != 0)) else lo
        if start < hi:
            count = -(-(hi - start) // stride)
            take = min(count, left)
            js = start + np.arange(take, dtype=np.int64) * stride
            outer_parts.append(np.full(take, i, dtype=np.int64))
            inner_parts.append(js)
            left -= take
            if take < count:
                nxt = (i, start + take * stride)
                return (np.concatenate(outer_parts),
                        np.concatenate(inner_parts), nxt)
        i += 1
    outer = np.concatenate(outer_parts) if outer_parts else np.zeros(0, np.int64)
    inner = np.concatenate(inner_parts) if inner_parts else np.zeros(0, np.int64)
    return outer, inner, (0, 0)


# ---------------------------------------------------------------------------
# analytic counters

def count_unique_lines(indices: np.ndarray, base: int, dtype: DType, mapping,
                       cond: np.ndarray | None = None):
    """Unique cachelines touched by conditioned indices, plus the number
    of distinct rows per bank.  Brute-force set counting."""
    idx = np.asarray(indices, dtype=np.uint64)
    if cond is not None:
        idx = idx[np.asarray(cond, dtype=bool)]
    line_bytes = mapping.cfg.cacheline_bytes
    addrs = np.uint64(base) + idx * np.uint64(dtype.width)
    lines = np.unique(addrs // np.uint64(line_bytes) * np.uint64(line_bytes))
    f = mapping.decompose_fields(lines)
    bank_rows: dict[tuple, int] = {}
    if lines.size:
        key = np.stack([f["channel"], f["rank"], f["bank_group"], f["bank"],
                        f["row"]], axis=1)
        uniq = np.unique(key, axis=0)
        for ch, ra, bg, ba, _row in uniq:
            k = (int(ch), int(ra), int(bg), int(ba))
            bank_rows[k] = bank_rows.get(k, 0) + 1
    return int(lines.size), bank_rows


def compare_states(sim_memory, sim_spd, ostate: OracleState, prog: Program,
                   float_rel: float = 1e-9) -> list[str]:
    """Differences between simulator and oracle final state; [] = equal."""
    problems: list[str] = []
    for decl in prog.arrays:
        sim = sim_memory[decl.name].data
        ref = ostate.arrays[decl.name]
        if decl.dtype.is_float:
            if not np.allclose(sim, ref, rtol=float_rel, atol=0, equal_nan=True):
                bad = np.nonzero(~np.isclose(sim, ref, rtol=float_rel,
                                             atol=0, equal_nan=True))[0][:3]
                problems.append(f"array '{decl.name}' differs at {bad.tolist()}: "
                                f"sim={sim[bad]}, oracle={ref[bad]}")
        elif not np.array_equal(sim, ref):
            bad = np.nonzero(sim != ref)[0][:3]
            problems.append(f"array '{decl.name}' differs at {bad.tolist()}: "
                            f"sim={sim[bad]}, oracle={ref[bad]}")
    for t in range(ostate.tiles.shape[0]):
        sim_tile = sim_spd[t]
        if sim_tile.size != ostate.sizes[t]:
            problems.append(f"tile t{t} size: sim={sim_tile.size}, "
                            f"oracle={ostate.sizes[t]}")
        if not np.array_equal(sim_tile.raw, ostate.tiles[t]):
            bad = np.nonzero(sim_tile.raw != ostate.tiles[t])[0][:3]
            problems.append(f"tile t{t} differs at {bad.tolist()}: "
                            f"sim={sim_tile.raw[bad]}, oracle={ostate.tiles[t][bad]}")
    return problems
