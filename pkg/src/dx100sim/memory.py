"""Functional memory: registered arrays, address assignment, image files.

Arrays are registered up front (the analog of transferring page table
entries once per application) and placed at row-group-aligned bases in
declaration order, so an array's elements spread across every channel,
bank group, and bank before touching a second row index.  Virtual and
physical addresses are identical.  Data lives here as numpy arrays; the
DRAM and LLC models carry timing only.
"""

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, CapacityError, ValidationError
from .isa import DType
from .program import Program, build_arrays


@dataclass
class ArrayEntry:
    name: str
    base: int
    length: int
    dtype: DType
    writable: bool
    data: np.ndarray           # element view
    lines: np.ndarray          # uint8 view padded to whole cachelines


class MemoryImage:
    """Array table plus contents; the single point of functional truth."""

    def __init__(self, line_bytes: int, align_bytes: int, capacity: int):
        self.line_bytes = line_bytes
        self.align = max(align_bytes, line_bytes)
        self.capacity = capacity
        self.entries: list[ArrayEntry] = []
        self._by_name: dict[str, ArrayEntry] = {}
        self._next_base = 0

    @classmethod
    def from_program(cls, prog: Program, line_bytes: int, align_bytes: int,
                     capacity: int, base_dir: str = ".") -> "MemoryImage":
        img = cls(line_bytes, align_bytes, capacity)
        written = prog.written_arrays()
        arrays = build_arrays(prog, base_dir)
        for i, decl in enumerate(prog.arrays):
            img.register(decl.name, decl.dtype, arrays[decl.name],
                         writable=(i in written))
        return img

    def register(self, name: str, dtype: DType, data: np.ndarray,
                 writable: bool = False) -> ArrayEntry:
        if name in self._by_name:
            raise ValidationError(f"array '{name}' registered twice")
        data = np.ascontiguousarray(data, dtype=dtype.np_dtype)
        nbytes = data.nbytes
        padded = -(-nbytes // self.line_bytes) * self.line_bytes
        base = self._next_base
        if base + padded > self.capacity:
            raise CapacityError(f"array '{name}' ({nbytes} bytes) exceeds DRAM "
                                f"capacity at base {base:#x}")
        buf = np.zeros(padded, dtype=np.uint8)
        buf[:nbytes] = data.view(np.uint8)
        entry = ArrayEntry(name=name, base=base, length=data.size, dtype=dtype,
                           writable=writable, data=buf[:nbytes].view(dtype.np_dtype),
                           lines=buf)
        self.entries.append(entry)
        self._by_name[name] = entry
        self._next_base = base + max(padded, self.align)
        self._next_base = -(-self._next_base // self.align) * self.align
        return entry

    def __getitem__(self, name: str) -> ArrayEntry:
        return self._by_name[name]

    def entry_for(self, index: int) -> ArrayEntry:
        return self.entries[index]

    def element_addr(self, entry: ArrayEntry, idx: int) -> int:
        if not (0 <= idx < entry.length):
            raise BoundsError(f"index {idx} outside array '{entry.name}' "
                              f"of length {entry.length}")
        return entry.base + idx * entry.dtype.width

    def _locate(self, line_addr: int) -> tuple[ArrayEntry | None, int]:
        for e in self.entries:  # few arrays per program; linear is fine
            off = line_addr - e.base
            if 0 <= off < e.lines.nbytes:
                return e, off
        return None, 0

    def read_line(self, line_addr: int) -> np.ndarray:
        e, off = self._locate(line_addr)
        if e is None:
            return np.zeros(self.line_bytes, dtype=np.uint8)
        return e.lines[off:off + self.line_bytes].copy()

    def write_line(self, line_addr: int, data: np.ndarray) -> None:
        e, off = self._locate(line_addr)
        if e is None:
            return  # stores to unregistered space are dropped
        e.lines[off:off + self.line_bytes] = data

    # -- image files --------------------------------------------------------

    MAGIC = b"DX100IMG"

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(self.MAGIC)
        out.write(struct.pack("<II", 1, len(self.entries)))
        for e in self.entries:
            name = e.name.encode()
            out.write(struct.pack("<B", len(name)))
            out.write(name)
            out.write(struct.pack("<BBQ", e.dtype.value, int(e.writable), e.length))
            out.write(e.data.tobytes())
        return out.getvalue()

    @staticmethod
    def parse_bytes(blob: bytes) -> list[tuple[str, DType, bool, np.ndarray]]:
        if blob[:8] != MemoryImage.MAGIC:
            raise ValidationError("not a memory image file")
        version, count = struct.unpack_from("<II", blob, 8)
        if version != 1:
            raise ValidationError(f"unsupported image version {version}")
        off = 16
        out = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<B", blob, off)
            off += 1
            name = blob[off:off + nlen].decode()
            off += nlen
            dt_code, writable, length = struct.unpack_from("<BBQ", blob, off)
            off += 10
            dtype = DType(dt_code)
            nbytes = length * dtype.width
            data = np.frombuffer(blob[off:off + nbytes], dtype=dtype.np_dtype).copy()
            off += nbytes
            out.append((name, dtype, bool(writable), data))
        return out
