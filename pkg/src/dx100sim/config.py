"""Run configuration: typed defaults plus a line-oriented key=value loader.

Keys are grouped by component: ``dram.*``, ``maa.*``, ``llc.*``,
``baseline.*``, ``indirect.*`` and the top-level ``seed``.  Every key has
a default (the DDR4-3200 2-channel system the simulator models); a config
file only overrides.  Unknown keys are rejected by name so typos do not
silently fall back to defaults.
"""

import os
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .events import FS_PER_NS, FS_PER_PS


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass
class DramConfig:
    channels: int = 2
    ranks: int = 1
    bank_groups: int = 4
    banks_per_group: int = 4
    rows: int = 4096
    columns_per_row: int = 128          # cachelines per row (8 KB row)
    cacheline_bytes: int = 64
    burst_length: int = 8
    tck: float = 625.0                  # ps
    trp: float = 12.5                   # ns
    trcd: float = 12.5                  # ns
    tras: float = 32.5                  # ns
    trtp: float = 7.5                   # ns
    tccd_s: float = 2.5                 # ns
    tccd_l: float = 5.0                 # ns
    request_buffer_size: int = 32       # per channel
    # low -> high significance; swappable policy
    mapping: str = "offset,channel,bank_group,bank,rank,column,row"

    def __post_init__(self):
        for name in ("channels", "ranks", "bank_groups", "banks_per_group",
                     "rows", "columns_per_row", "cacheline_bytes"):
            if not _is_pow2(getattr(self, name)):
                raise ConfigError(f"dram.{name} must be a power of two")
        if self.burst_length % 2 or self.burst_length <= 0:
            raise ConfigError("dram.burst_length must be a positive even count")
        if self.request_buffer_size <= 0:
            raise ConfigError("dram.request_buffer_size must be positive")

    # -- derived quantities (femtoseconds / bytes) --

    @property
    def tck_fs(self) -> int:
        return round(self.tck * FS_PER_PS)

    @property
    def trp_fs(self) -> int:
        return round(self.trp * FS_PER_NS)

    @property
    def trcd_fs(self) -> int:
        return round(self.trcd * FS_PER_NS)

    @property
    def tras_fs(self) -> int:
        return round(self.tras * FS_PER_NS)

    @property
    def trtp_fs(self) -> int:
        return round(self.trtp * FS_PER_NS)

    @property
    def tccd_s_fs(self) -> int:
        return round(self.tccd_s * FS_PER_NS)

    @property
    def tccd_l_fs(self) -> int:
        return round(self.tccd_l * FS_PER_NS)

    @property
    def transfer_fs(self) -> int:
        """Data-bus occupancy of one cacheline burst."""
        return (self.burst_length // 2) * self.tck_fs

    @property
    def banks(self) -> int:
        return self.bank_groups * self.banks_per_group

    @property
    def capacity_bytes(self) -> int:
        return (self.channels * self.ranks * self.banks * self.rows
                * self.columns_per_row * self.cacheline_bytes)

    @property
    def peak_channel_bw(self) -> float:
        """Bytes per second through one channel's data bus."""
        return self.cacheline_bytes / (self.transfer_fs * 1e-15)

    @property
    def peak_total_bw(self) -> float:
        return self.peak_channel_bw * self.channels

    @property
    def row_group_bytes(self) -> int:
        """Address span covered by one row index across every bank."""
        return (self.channels * self.ranks * self.banks
                * self.columns_per_row * self.cacheline_bytes)


@dataclass
class MaaConfig:
    clock_ghz: float = 3.2
    num_tiles: int = 32
    tile_size: int = 16384
    num_regs: int = 32
    row_table_rows: int = 64            # row entries per slice
    row_table_cols: int = 8             # column entries per row
    request_table_size: int = 128       # stream-unit outstanding lines
    alu_lanes: int = 16
    fill_per_cycle: int = 1
    respond_words_per_cycle: int = 4
    rng_pairs_per_cycle: int = 16
    dispatch_cycles: int = 3            # three 64b stores per instruction
    spd_unit_latency: int = 2           # cycles, functional-unit port
    spd_core_latency: int = 20          # cycles, core-side read path
    rng_cursor_outer_reg: int = 30
    rng_cursor_inner_reg: int = 31

    def __post_init__(self):
        if self.num_tiles <= 0 or self.tile_size <= 0:
            raise ConfigError("maa.num_tiles/tile_size must be positive")
        if not (0 <= self.rng_cursor_outer_reg < self.num_regs
                and 0 <= self.rng_cursor_inner_reg < self.num_regs):
            raise ConfigError("maa.rng_cursor_*_reg out of register-file range")

    @property
    def cycle_fs(self) -> int:
        fs = 1e6 / self.clock_ghz
        if abs(fs - round(fs)) > 1e-9:
            raise ConfigError("maa.clock_ghz must give an integer femtosecond period")
        return round(fs)


@dataclass
class LlcConfig:
    size_bytes: int = 8 * 1024 * 1024
    associativity: int = 16
    line_bytes: int = 64
    latency_cycles: int = 42            # in accelerator clock cycles
    mshrs: int = 256

    def __post_init__(self):
        if self.size_bytes % (self.associativity * self.line_bytes):
            raise ConfigError("llc.size_bytes must be a whole number of sets")

    @property
    def num_sets(self) -> int:
        return self.size_bytes // (self.associativity * self.line_bytes)


@dataclass
class BaselineConfig:
    cores: int = 1
    max_outstanding: int = 10           # per core


@dataclass
class IndirectConfig:
    drain_policy: str = "slice"         # "slice" or "row"

    def __post_init__(self):
        if self.drain_policy not in ("slice", "row"):
            raise ConfigError("indirect.drain_policy must be 'slice' or 'row'")


@dataclass
class RunConfig:
    dram: DramConfig = field(default_factory=DramConfig)
    maa: MaaConfig = field(default_factory=MaaConfig)
    llc: LlcConfig = field(default_factory=LlcConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    indirect: IndirectConfig = field(default_factory=IndirectConfig)
    seed: int = 0


_GROUPS = {
    "dram": DramConfig,
    "maa": MaaConfig,
    "llc": LlcConfig,
    "baseline": BaselineConfig,
    "indirect": IndirectConfig,
}


def _coerce(raw: str, typ):
    raw = raw.strip()
    if typ is int:
        return int(raw, 0)
    if typ is float:
        return float(raw)
    if typ is str:
        return raw
    raise ConfigError(f"unsupported config field type {typ}")


def parse_config_text(text: str, path: str = "<config>") -> RunConfig:
    """Parse ``key = value`` lines (``#`` comments) into a RunConfig."""
    overrides: dict[str, dict] = {g: {} for g in _GROUPS}
    seed = RunConfig.seed
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "seed":
            seed = _coerce(raw, int)
            continue
        if "." not in key:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        group, name = key.split(".", 1)
        cls = _GROUPS.get(group)
        if cls is None:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        fld = {f.name: f for f in fields(cls)}.get(name)
        if fld is None:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        overrides[group][name] = _coerce(raw, fld.type if isinstance(fld.type, type)
                                         else {"int": int, "float": float, "str": str}[fld.type])
    cfg = RunConfig(seed=seed, **{g: _GROUPS[g](**kw) for g, kw in overrides.items()})
    return cfg


def load_config(path: str | None) -> RunConfig:
    """Load a config file (or defaults) and apply the DX_SIM_SEED override."""
    if path is None:
        cfg = RunConfig()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = parse_config_text(fh.read(), path)
    env_seed = os.environ.get("DX_SIM_SEED")
    if env_seed is not None:
        cfg.seed = int(env_seed, 0)
    return cfg
