"""Program representation, the `.dx` textual surface, and static checks.

A program is a list of array declarations, initializers, register
presets, LLC warm-up directives, and a body of instructions interleaved
with WAIT statements.  The grammar is line-oriented; `#` starts a
comment.  `parse` returns per-line diagnostics instead of raising so a
front end can report several problems at once.
"""

import re
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ValidationError
from .isa import AluOp, DType, Instruction, Opcode, RMW_OPS, check_operands


@dataclass
class ArrayDecl:
    name: str
    dtype: DType
    length: int
    init: str = "zeros"              # zeros | iota | file
    init_path: Optional[str] = None


@dataclass(frozen=True)
class Wait:
    tile: int


@dataclass
class Program:
    arrays: list[ArrayDecl] = field(default_factory=list)
    reg_inits: dict[int, int] = field(default_factory=dict)
    warms: list[str] = field(default_factory=list)
    body: list[Union[Instruction, Wait]] = field(default_factory=list)

    def array_index(self, name: str) -> Optional[int]:
        for i, a in enumerate(self.arrays):
            if a.name == name:
                return i
        return None

    def instructions(self) -> list[Instruction]:
        return [s for s in self.body if isinstance(s, Instruction)]

    def written_arrays(self) -> set[int]:
        return {s.base for s in self.body
                if isinstance(s, Instruction)
                and s.opcode in (Opcode.IST, Opcode.IRMW, Opcode.SST)}


# ---------------------------------------------------------------------------
# parsing

_TILE = re.compile(r"^t(\d+)$")
_REG = re.compile(r"^r(\d+)$")


def _tile(tok: str) -> int:
    m = _TILE.match(tok)
    if not m:
        raise ValueError(f"expected tile operand like t3, got '{tok}'")
    return int(m.group(1))


def _reg(tok: str) -> int:
    m = _REG.match(tok)
    if not m:
        raise ValueError(f"expected register operand like r2, got '{tok}'")
    return int(m.group(1))


def _dtype(tok: str) -> DType:
    try:
        return DType[tok]
    except KeyError:
        raise ValueError(f"unknown dtype '{tok}'") from None


def _aluop(tok: str) -> AluOp:
    try:
        return AluOp[tok.upper()]
    except KeyError:
        raise ValueError(f"unknown ALU op '{tok}'") from None


_COND = re.compile(r"^(.*?)\s+cond\s+(t\d+)\s*$")


def _split_cond(rest: str) -> tuple[str, Optional[int]]:
    m = _COND.match(rest)
    if m:
        return m.group(1).strip(), _tile(m.group(2))
    return rest.strip(), None


def _operands(text: str) -> list[str]:
    return [t for t in (s.strip() for s in text.split(",")) if t]


def parse(text: str):
    """Parse program text -> (Program | None, diagnostics).

    Diagnostics are (line_number, message) pairs; the program is None
    whenever any diagnostic was produced.
    """
    prog = Program()
    diags: list[tuple[int, str]] = []

    def base_of(name: str, lineno: int) -> Optional[int]:
        idx = prog.array_index(name)
        if idx is None:
            diags.append((lineno, f"unknown array '{name}'"))
        return idx

    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            head, _, rest = line.partition(" ")
            rest = rest.strip()
            if head == "array":
                name, dt, length = rest.split()
                if prog.array_index(name) is not None:
                    raise ValueError(f"array '{name}' redeclared")
                prog.arrays.append(ArrayDecl(name, _dtype(dt), int(length)))
            elif head == "init":
                parts = rest.split()
                name, kind = parts[0], parts[1]
                idx = base_of(name, lineno)
                if idx is None:
                    continue
                decl = prog.arrays[idx]
                if kind in ("zeros", "iota"):
                    decl.init = kind
                elif kind == "file":
                    decl.init = "file"
                    decl.init_path = parts[2]
                else:
                    raise ValueError(f"unknown init kind '{kind}'")
            elif head == "reg":
                m = re.match(r"^r(\d+)\s*=\s*(-?\d+)$", rest)
                if not m:
                    raise ValueError("expected 'reg r<k> = <int>'")
                prog.reg_inits[int(m.group(1))] = int(m.group(2))
            elif head == "warm":
                if base_of(rest, lineno) is not None:
                    prog.warms.append(rest)
            elif head == "WAIT":
                prog.body.append(Wait(_tile(rest)))
            elif head in ("SLD", "SST"):
                body, tc = _split_cond(rest)
                dt_tok, base_name, remainder = body.split(None, 2)
                arrow = "->" if head == "SLD" else "<-"
                lhs, _, ops = remainder.partition(arrow)
                if not ops:
                    raise ValueError(f"expected '{arrow}' in {head}")
                # SLD: t<d>, r<min>, r<max>, r<stride>; SST: t<s>, r.., r.., r..
                o = _operands(f"{lhs},{ops}")
                if len(o) != 4:
                    raise ValueError(f"{head} takes a tile and three registers")
                idx = base_of(base_name, lineno)
                if idx is None:
                    continue
                tile_field = {"td": _tile(o[0])} if head == "SLD" else {"ts1": _tile(o[0])}
                prog.body.append(Instruction(
                    opcode=Opcode[head], dtype=_dtype(dt_tok), base=idx,
                    rs1=_reg(o[1]), rs2=_reg(o[2]), rs3=_reg(o[3]),
                    tc=tc, **tile_field))
            elif head == "ILD":
                body, tc = _split_cond(rest)
                dt_tok, base_name, remainder = body.split(None, 2)
                lhs, _, ops = remainder.partition("->")
                o = _operands(f"{lhs},{ops}")
                if len(o) != 2:
                    raise ValueError("ILD takes a destination and an index tile")
                idx = base_of(base_name, lineno)
                if idx is None:
                    continue
                prog.body.append(Instruction(
                    opcode=Opcode.ILD, dtype=_dtype(dt_tok), base=idx,
                    td=_tile(o[0]), ts1=_tile(o[1]), tc=tc))
            elif head == "IST":
                body, tc = _split_cond(rest)
                dt_tok, base_name, remainder = body.split(None, 2)
                lhs, _, ops = remainder.partition("<-")
                o = _operands(ops)
                if lhs.strip() or len(o) != 2:
                    raise ValueError("IST takes '<- t<idx>, t<val>'")
                idx = base_of(base_name, lineno)
                if idx is None:
                    continue
                prog.body.append(Instruction(
                    opcode=Opcode.IST, dtype=_dtype(dt_tok), base=idx,
                    ts1=_tile(o[0]), ts2=_tile(o[1]), tc=tc))
            elif head == "IRMW":
                body, tc = _split_cond(rest)
                dt_tok, op_tok, base_name, remainder = body.split(None, 3)
                lhs, _, ops = remainder.partition("<-")
                o = _operands(ops)
                if lhs.strip() or len(o) != 2:
                    raise ValueError("IRMW takes '<- t<idx>, t<val>'")
                idx = base_of(base_name, lineno)
                if idx is None:
                    continue
                prog.body.append(Instruction(
                    opcode=Opcode.IRMW, dtype=_dtype(dt_tok), op=_aluop(op_tok),
                    base=idx, ts1=_tile(o[0]), ts2=_tile(o[1]), tc=tc))
            elif head in ("ALUV", "ALUS"):
                body, tc = _split_cond(rest)
                dt_tok, op_tok, remainder = body.split(None, 2)
                lhs, _, ops = remainder.partition("<-")
                o = _operands(ops)
                if len(o) != 2:
                    raise ValueError(f"{head} takes two source operands")
                kwargs = {"ts1": _tile(o[0])}
                if head == "ALUV":
                    kwargs["ts2"] = _tile(o[1])
                else:
                    kwargs["rs1"] = _reg(o[1])
                prog.body.append(Instruction(
                    opcode=Opcode[head], dtype=_dtype(dt_tok), op=_aluop(op_tok),
                    td=_tile(lhs.strip()), tc=tc, **kwargs))
            elif head == "RNG":
                body, tc = _split_cond(rest)
                lhs, _, ops = body.partition("<-")
                dests = _operands(lhs)
                srcs = _operands(ops)
                if len(dests) != 2 or len(srcs) != 3:
                    raise ValueError("RNG takes 't<o>, t<i> <- t<min>, t<max>, r<stride>'")
                prog.body.append(Instruction(
                    opcode=Opcode.RNG, td=_tile(dests[0]), td2=_tile(dests[1]),
                    ts1=_tile(srcs[0]), ts2=_tile(srcs[1]), rs1=_reg(srcs[2]), tc=tc))
            else:
                raise ValueError(f"unknown statement '{head}'")
        except ValueError as exc:
            diags.append((lineno, str(exc)))
    return (prog if not diags else None), diags


def parse_or_raise(text: str) -> Program:
    prog, diags = parse(text)
    if prog is None:
        msgs = "; ".join(f"line {n}: {m}" for n, m in diags)
        raise ValidationError(msgs)
    return prog


# ---------------------------------------------------------------------------
# printing (canonical round-trippable form)

def _cond_suffix(instr: Instruction) -> str:
    return f" cond t{instr.tc}" if instr.tc is not None else ""


def format_program(prog: Program) -> str:
    lines: list[str] = []
    for a in prog.arrays:
        lines.append(f"array {a.name} {a.dtype.name} {a.length}")
        if a.init == "file":
            lines.append(f"init {a.name} file {a.init_path}")
        elif a.init != "zeros":
            lines.append(f"init {a.name} {a.init}")
    for k in sorted(prog.reg_inits):
        lines.append(f"reg r{k} = {prog.reg_inits[k]}")
    for name in prog.warms:
        lines.append(f"warm {name}")
    for stmt in prog.body:
        if isinstance(stmt, Wait):
            lines.append(f"WAIT t{stmt.tile}")
            continue
        i = stmt
        name = i.opcode.name
        base = prog.arrays[i.base].name if i.base is not None else ""
        if i.opcode is Opcode.SLD:
            lines.append(f"SLD {i.dtype.name} {base} -> t{i.td}, r{i.rs1}, "
                         f"r{i.rs2}, r{i.rs3}{_cond_suffix(i)}")
        elif i.opcode is Opcode.SST:
            lines.append(f"SST {i.dtype.name} {base} <- t{i.ts1}, r{i.rs1}, "
                         f"r{i.rs2}, r{i.rs3}{_cond_suffix(i)}")
        elif i.opcode is Opcode.ILD:
            lines.append(f"ILD {i.dtype.name} {base} -> t{i.td}, t{i.ts1}"
                         f"{_cond_suffix(i)}")
        elif i.opcode is Opcode.IST:
            lines.append(f"IST {i.dtype.name} {base} <- t{i.ts1}, t{i.ts2}"
                         f"{_cond_suffix(i)}")
        elif i.opcode is Opcode.IRMW:
            lines.append(f"IRMW {i.dtype.name} {i.op.name} {base} <- t{i.ts1}, "
                         f"t{i.ts2}{_cond_suffix(i)}")
        elif i.opcode is Opcode.ALUV:
            lines.append(f"ALUV {i.dtype.name} {i.op.name} t{i.td} <- t{i.ts1}, "
                         f"t{i.ts2}{_cond_suffix(i)}")
        elif i.opcode is Opcode.ALUS:
            lines.append(f"ALUS {i.dtype.name} {i.op.name} t{i.td} <- t{i.ts1}, "
                         f"r{i.rs1}{_cond_suffix(i)}")
        else:
            lines.append(f"RNG t{i.td}, t{i.td2} <- t{i.ts1}, t{i.ts2}, "
                         f"r{i.rs1}{_cond_suffix(i)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# static validation

def validate_program(prog: Program, num_tiles: int = 32, num_regs: int = 32,
                     tile_size: int = 16384,
                     cursor_regs: tuple[int, int] = (30, 31)) -> list[tuple[int, str]]:
    """Static legality scan.

    Checks declared bases and dtype agreement, tile read-before-produce
    (conditions included), RMW op eligibility, self-dependent tiles, and
    statically-known loop bounds.  Returns (instruction_index, message)
    diagnostics; empty means valid.
    """
    diags: list[tuple[int, str]] = []
    produced: set[int] = set()
    rng_written_regs: set[int] = set()
    for idx, stmt in enumerate(prog.body):
        if isinstance(stmt, Wait):
            if not (0 <= stmt.tile < num_tiles):
                diags.append((idx, f"WAIT tile t{stmt.tile} out of range"))
            continue
        i = stmt
        complaint = check_operands(i)
        if complaint is not None:
            diags.append((idx, complaint))
            continue
        for t in i.dest_tiles() + i.source_tiles():
            if not (0 <= t < num_tiles):
                diags.append((idx, f"tile t{t} out of range"))
        for r in (i.rs1, i.rs2, i.rs3):
            if r is not None and not (0 <= r < num_regs):
                diags.append((idx, f"register r{r} out of range"))
        if i.base is not None:
            if not (0 <= i.base < len(prog.arrays)):
                diags.append((idx, f"base #{i.base} not declared"))
            elif prog.arrays[i.base].dtype is not i.dtype:
                diags.append((idx, f"dtype {i.dtype.name} does not match array "
                                   f"'{prog.arrays[i.base].name}' "
                                   f"({prog.arrays[i.base].dtype.name})"))
        for t in i.source_tiles():
            if t not in produced:
                which = "condition " if t == i.tc and t not in (i.ts1, i.ts2) else ""
                diags.append((idx, f"{which}tile t{t} read before produce"))
        overlap = set(i.dest_tiles()) & set(i.source_tiles())
        if overlap:
            diags.append((idx, f"destination tile t{sorted(overlap)[0]} also used "
                               f"as a source (self-dependency)"))
        if i.opcode is Opcode.RNG and i.td == i.td2:
            diags.append((idx, "RNG destinations must be distinct tiles"))
        if i.opcode in (Opcode.SLD, Opcode.SST):
            bounds = _static_bounds(prog, i, rng_written_regs)
            if bounds is not None:
                lo, hi, stride = bounds
                if stride < 1:
                    diags.append((idx, f"stride r{i.rs3}={stride} must be >= 1"))
                elif hi > lo and (hi - lo + stride - 1) // stride > tile_size:
                    diags.append((idx, "iteration count exceeds tile capacity"))
        if i.opcode is Opcode.RNG:
            rng_written_regs.update(cursor_regs)
        produced.update(i.dest_tiles())
    return diags


def _static_bounds(prog: Program, i: Instruction, dirty: set[int]):
    regs = (i.rs1, i.rs2, i.rs3)
    if any(r in dirty for r in regs):
        return None
    vals = [prog.reg_inits.get(r, 0) for r in regs]
    return vals[0], vals[1], vals[2]


def build_arrays(prog: Program, base_dir: str = ".") -> dict[str, np.ndarray]:
    """Materialize declared arrays per their init directives."""
    out: dict[str, np.ndarray] = {}
    for decl in prog.arrays:
        npdt = decl.dtype.np_dtype
        if decl.init == "zeros":
            arr = np.zeros(decl.length, dtype=npdt)
        elif decl.init == "iota":
            arr = np.arange(decl.length, dtype=npdt)
        else:
            path = decl.init_path
            if not path.startswith("/"):
                path = f"{base_dir}/{path}"
            arr = np.fromfile(path, dtype=npdt, count=decl.length)
            if arr.size != decl.length:
                raise ValidationError(f"init file for '{decl.name}' holds "
                                      f"{arr.size} elements, expected {decl.length}")
        out[decl.name] = arr
    return out
