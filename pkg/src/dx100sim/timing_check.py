"""Offline legality checker for DRAM command traces.

Replays ("cmd", t, ch, rank, bg, bank, name, row, col) records and
re-derives every pairwise constraint directly from the configuration,
independently of the scheduler that produced the trace.  Returns a list
of human-readable violations; an empty list means the trace is legal.
"""

from .config import DramConfig

_NEG = -(1 << 62)


def check_command_trace(records, cfg: DramConfig) -> list[str]:
    violations: list[str] = []
    banks: dict[tuple, dict] = {}
    chans: dict[int, dict] = {}
    last_t = _NEG

    def bank_state(key):
        st = banks.get(key)
        if st is None:
            st = banks[key] = {"open": None, "act": _NEG, "pre": _NEG, "col": _NEG}
        return st

    def chan_state(ch):
        st = chans.get(ch)
        if st is None:
            st = chans[ch] = {"cmd": _NEG, "col": _NEG, "bg": None, "bus": _NEG}
        return st

    for rec in records:
        if rec[0] != "cmd":
            continue
        _, t, ch, rank, bg, bank, name, row, col = rec
        if t < last_t:
            violations.append(f"t={t}: trace not time-ordered")
        last_t = t
        bs = bank_state((ch, rank, bg, bank))
        cs = chan_state(ch)
        where = f"t={t} ch={ch} bg={bg} ba={bank}"
        if t - cs["cmd"] < cfg.tck_fs:
            violations.append(f"{where}: {name} within one tCK of previous command")
        cs["cmd"] = t
        if name == "ACT":
            if bs["open"] is not None:
                violations.append(f"{where}: ACT with row {bs['open']} still open")
            if t - bs["pre"] < cfg.trp_fs:
                violations.append(f"{where}: ACT violates tRP "
                                  f"({(t - bs['pre']) / 1e6:.3f} ns)")
            bs["open"], bs["act"], bs["col"] = row, t, _NEG
        elif name == "PRE":
            if bs["open"] is None:
                violations.append(f"{where}: PRE on closed bank")
            if t - bs["act"] < cfg.tras_fs:
                violations.append(f"{where}: PRE violates tRAS")
            if bs["col"] != _NEG and t - bs["col"] < cfg.trtp_fs:
                violations.append(f"{where}: PRE violates tRTP")
            bs["open"] = None
            bs["pre"] = t
        elif name in ("RD", "WR"):
            if bs["open"] != row:
                violations.append(f"{where}: {name} row {row} but open row {bs['open']}")
            if t - bs["act"] < cfg.trcd_fs:
                violations.append(f"{where}: {name} violates tRCD")
            if cs["col"] != _NEG:
                gap = cfg.tccd_l_fs if bg == cs["bg"] else cfg.tccd_s_fs
                if t - cs["col"] < gap:
                    kind = "tCCD_L" if bg == cs["bg"] else "tCCD_S"
                    violations.append(f"{where}: {name} violates {kind}")
            if t < cs["bus"]:
                violations.append(f"{where}: {name} overlaps previous data burst")
            bs["col"] = t
            cs["col"], cs["bg"] = t, bg
            cs["bus"] = t + cfg.transfer_fs
        else:
            violations.append(f"{where}: unknown command {name}")
    return violations
