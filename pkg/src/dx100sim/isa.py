"""Instruction set: data types, ALU operations, the eight opcodes, and
their 192-bit binary encoding.

The bit layout is fixed and documented here (the hardware interface is
three 64-bit stores):

    word0: opcode[7:0] | dtype[11:8] | op[19:12] | base[35:20] | zero
    word1: td[7:0] | td2[15:8] | ts1[23:16] | ts2[31:24] | tc[39:32] | zero
    word2: rs1[7:0] | rs2[15:8] | rs3[23:16] | zero

Tile and register operand fields store ``index + 1`` so that 0 means
"absent"; dtype and op fields likewise start at 1.  Operand presence is
dictated per opcode and checked on both encode and decode.
"""

from dataclasses import dataclass, fields
from enum import Enum
from typing import Optional

import numpy as np

from .errors import DecodeError, EncodingError


class DType(Enum):
    u32 = 1
    i32 = 2
    f32 = 3
    u64 = 4
    i64 = 5
    f64 = 6

    @property
    def width(self) -> int:
        return 4 if self.value <= 3 else 8

    @property
    def is_float(self) -> bool:
        return self in (DType.f32, DType.f64)

    @property
    def is_signed(self) -> bool:
        return self in (DType.i32, DType.i64)

    @property
    def np_dtype(self):
        return {
            DType.u32: np.uint32, DType.i32: np.int32, DType.f32: np.float32,
            DType.u64: np.uint64, DType.i64: np.int64, DType.f64: np.float64,
        }[self]


class AluOp(Enum):
    ADD = 1
    SUB = 2
    MUL = 3
    MIN = 4
    MAX = 5
    AND = 6
    OR = 7
    XOR = 8
    SHR = 9
    SHL = 10
    LT = 11
    LE = 12
    GT = 13
    GE = 14
    EQ = 15

    @property
    def is_compare(self) -> bool:
        return self.value >= AluOp.LT.value


# Associative and commutative: the only ops whose folds may be reordered.
RMW_OPS = frozenset({AluOp.ADD, AluOp.MIN, AluOp.MAX, AluOp.AND, AluOp.OR, AluOp.XOR})


class Opcode(Enum):
    ILD = 1
    IST = 2
    IRMW = 3
    SLD = 4
    SST = 5
    ALUV = 6
    ALUS = 7
    RNG = 8


@dataclass(frozen=True)
class Instruction:
    opcode: Opcode
    dtype: Optional[DType] = None
    op: Optional[AluOp] = None
    base: Optional[int] = None
    td: Optional[int] = None
    td2: Optional[int] = None
    ts1: Optional[int] = None
    ts2: Optional[int] = None
    tc: Optional[int] = None
    rs1: Optional[int] = None
    rs2: Optional[int] = None
    rs3: Optional[int] = None

    def dest_tiles(self) -> tuple[int, ...]:
        out = tuple(t for t in (self.td, self.td2) if t is not None)
        return out

    def source_tiles(self) -> tuple[int, ...]:
        return tuple(t for t in (self.ts1, self.ts2, self.tc) if t is not None)


# required operands per opcode; `tc` is optional everywhere
_REQUIRED: dict[Opcode, tuple[str, ...]] = {
    Opcode.ILD: ("dtype", "base", "td", "ts1"),
    Opcode.IST: ("dtype", "base", "ts1", "ts2"),
    Opcode.IRMW: ("dtype", "op", "base", "ts1", "ts2"),
    Opcode.SLD: ("dtype", "base", "td", "rs1", "rs2", "rs3"),
    Opcode.SST: ("dtype", "base", "ts1", "rs1", "rs2", "rs3"),
    Opcode.ALUV: ("dtype", "op", "td", "ts1", "ts2"),
    Opcode.ALUS: ("dtype", "op", "td", "ts1", "rs1"),
    Opcode.RNG: ("td", "td2", "ts1", "ts2", "rs1"),
}
_ALL_OPERANDS = ("dtype", "op", "base", "td", "td2", "ts1", "ts2", "tc",
                 "rs1", "rs2", "rs3")

TILE_FIELDS = ("td", "td2", "ts1", "ts2", "tc")
REG_FIELDS = ("rs1", "rs2", "rs3")


def check_operands(instr: Instruction) -> Optional[str]:
    """Return a complaint string for a malformed operand set, else None."""
    req = _REQUIRED[instr.opcode]
    for name in _ALL_OPERANDS:
        if name == "tc":
            continue
        have = getattr(instr, name) is not None
        if name in req and not have:
            return f"{instr.opcode.name} requires operand {name.upper()}"
        if name not in req and have:
            return f"{instr.opcode.name} does not take operand {name.upper()}"
    if instr.opcode is Opcode.IRMW and instr.op not in RMW_OPS:
        return (f"IRMW op must be associative/commutative "
                f"({', '.join(sorted(o.name for o in RMW_OPS))}); got {instr.op.name}")
    if instr.op is not None and instr.dtype is not None:
        if instr.dtype.is_float and instr.op in (AluOp.SHR, AluOp.SHL):
            return f"{instr.op.name} undefined for float dtype {instr.dtype.name}"
    for name in TILE_FIELDS:
        v = getattr(instr, name)
        if v is not None and not (0 <= v < 255):
            return f"tile operand {name.upper()}={v} out of encodable range"
    for name in REG_FIELDS:
        v = getattr(instr, name)
        if v is not None and not (0 <= v < 255):
            return f"register operand {name.upper()}={v} out of encodable range"
    if instr.base is not None and not (0 <= instr.base < (1 << 16)):
        return f"BASE={instr.base} out of encodable range"
    return None


EncodedInstruction = tuple[int, int, int]

_W64 = (1 << 64) - 1


def encode(instr: Instruction) -> EncodedInstruction:
    complaint = check_operands(instr)
    if complaint is not None:
        raise EncodingError(complaint)
    w0 = instr.opcode.value & 0xFF
    w0 |= (instr.dtype.value if instr.dtype else 0) << 8
    w0 |= (instr.op.value if instr.op else 0) << 12
    w0 |= (instr.base if instr.base is not None else 0) << 20
    w1 = 0
    for i, name in enumerate(TILE_FIELDS):
        v = getattr(instr, name)
        w1 |= ((v + 1) if v is not None else 0) << (8 * i)
    w2 = 0
    for i, name in enumerate(REG_FIELDS):
        v = getattr(instr, name)
        w2 |= ((v + 1) if v is not None else 0) << (8 * i)
    return (w0 & _W64, w1 & _W64, w2 & _W64)


def decode(words) -> Instruction:
    words = tuple(words)
    if len(words) != 3:
        raise DecodeError(f"expected three 64-bit words, got {len(words)}")
    w0, w1, w2 = words
    for w in words:
        if not (0 <= w <= _W64):
            raise DecodeError("encoded word outside 64-bit range")
    try:
        opcode = Opcode(w0 & 0xFF)
    except ValueError:
        raise DecodeError(f"unknown opcode byte {w0 & 0xFF:#04x}") from None
    dt_nib = (w0 >> 8) & 0xF
    op_byte = (w0 >> 12) & 0xFF
    base = (w0 >> 20) & 0xFFFF
    if w0 >> 36:
        raise DecodeError("reserved bits set in word 0")
    if w1 >> 40:
        raise DecodeError("reserved bits set in word 1")
    if w2 >> 24:
        raise DecodeError("reserved bits set in word 2")
    kwargs = {}
    if dt_nib:
        try:
            kwargs["dtype"] = DType(dt_nib)
        except ValueError:
            raise DecodeError(f"unknown dtype nibble {dt_nib:#x}") from None
    if op_byte:
        try:
            kwargs["op"] = AluOp(op_byte)
        except ValueError:
            raise DecodeError(f"unknown ALU op byte {op_byte:#04x}") from None
    req = _REQUIRED[opcode]
    if "base" in req or base:
        kwargs["base"] = base
    for i, name in enumerate(TILE_FIELDS):
        v = (w1 >> (8 * i)) & 0xFF
        if v:
            kwargs[name] = v - 1
    for i, name in enumerate(REG_FIELDS):
        v = (w2 >> (8 * i)) & 0xFF
        if v:
            kwargs[name] = v - 1
    instr = Instruction(opcode=opcode, **kwargs)
    complaint = check_operands(instr)
    if complaint is not None:
        raise DecodeError(complaint)
    return instr


# ---------------------------------------------------------------------------
# word-level semantics shared by the functional units

def mask_of(dtype: DType) -> int:
    return (1 << (dtype.width * 8)) - 1


def raw_from_value(dtype: DType, value) -> int:
    """Pack a Python number into the tile's raw 64-bit word."""
    if dtype is DType.f32:
        return int(np.float32(value).view(np.uint32))
    if dtype is DType.f64:
        return int(np.float64(value).view(np.uint64))
    return int(value) & mask_of(dtype)


def value_from_raw(dtype: DType, raw: int):
    raw &= mask_of(dtype)
    if dtype is DType.f32:
        return float(np.uint32(raw).view(np.float32))
    if dtype is DType.f64:
        return float(np.uint64(raw).view(np.float64))
    if dtype.is_signed:
        bits = dtype.width * 8
        return raw - (1 << bits) if raw >> (bits - 1) else raw
    return raw


def apply_op(op: AluOp, dtype: DType, raw_a: int, raw_b: int) -> int:
    """One scalar ALU lane: raw word in, raw word out.

    Integer arithmetic wraps at the dtype width; shifts mask their count
    to the word size; signed right shift is arithmetic.  Bitwise ops on
    float dtypes act on the raw bit patterns.  Comparisons return the
    raw words 0 or 1.
    """
    m = mask_of(dtype)
    raw_a &= m
    raw_b &= m
    if op in (AluOp.AND, AluOp.OR, AluOp.XOR):
        if op is AluOp.AND:
            return raw_a & raw_b
        if op is AluOp.OR:
            return raw_a | raw_b
        return raw_a ^ raw_b
    a = value_from_raw(dtype, raw_a)
    b = value_from_raw(dtype, raw_b)
    if op.is_compare:
        if op is AluOp.LT:
            r = a < b
        elif op is AluOp.LE:
            r = a <= b
        elif op is AluOp.GT:
            r = a > b
        elif op is AluOp.GE:
            r = a >= b
        else:
            r = a == b
        return 1 if r else 0
    if dtype.is_float:
        ftype = np.float32 if dtype is DType.f32 else np.float64
        if op is AluOp.ADD:
            v = ftype(a) + ftype(b)
        elif op is AluOp.SUB:
            v = ftype(a) - ftype(b)
        elif op is AluOp.MUL:
            v = ftype(a) * ftype(b)
        elif op is AluOp.MIN:
            v = np.minimum(ftype(a), ftype(b))
        elif op is AluOp.MAX:
            v = np.maximum(ftype(a), ftype(b))
        else:
            raise EncodingError(f"{op.name} undefined for {dtype.name}")
        return raw_from_value(dtype, v)
    bits = dtype.width * 8
    if op is AluOp.ADD:
        v = a + b
    elif op is AluOp.SUB:
        v = a - b
    elif op is AluOp.MUL:
        v = a * b
    elif op is AluOp.MIN:
        v = min(a, b)
    elif op is AluOp.MAX:
        v = max(a, b)
    elif op is AluOp.SHR:
        v = a >> (raw_b & (bits - 1))   # arithmetic when signed
    else:  # SHL
        v = a << (raw_b & (bits - 1))
    return v & m
