"""Desk-scale simulator of the DX100 data-access accelerator.

The package models the accelerator's four functional units (indirect
access, stream access, ALU, range fuser), its scratchpad and
instruction scoreboard, a shared LLC presence model, and a DDR4 memory
system with FR-FCFS scheduling, together with a sequential reference
executor and microbenchmark generators.
"""

from .config import (BaselineConfig, DramConfig, IndirectConfig, LlcConfig,
                     MaaConfig, RunConfig, load_config)
from .dram import AddressMapping, DramCoord, DramModel, MemRequest, map_address
from .engine import Engine, StatReport, baseline_run, run
from .isa import AluOp, DType, Instruction, Opcode, decode, encode
from .oracle import count_unique_lines, oracle_run
from .program import Program, Wait, format_program, parse, validate_program
from .workloads import ALLMISS_GRID, PatternSpec, gen_allmiss, gen_program

__version__ = "0.1.0"

__all__ = [
    "AddressMapping", "AluOp", "ALLMISS_GRID", "BaselineConfig", "DType",
    "DramConfig", "DramCoord", "DramModel", "Engine", "IndirectConfig",
    "Instruction", "LlcConfig", "MaaConfig", "MemRequest", "Opcode",
    "PatternSpec", "Program", "RunConfig", "StatReport", "Wait",
    "baseline_run", "count_unique_lines", "decode", "encode",
    "format_program", "gen_allmiss", "gen_program", "load_config",
    "map_address", "oracle_run", "parse", "run", "validate_program",
]
