"""Command-line front door.

    dx100sim run <prog.dx> [--config F] [--out CSV] [--trace JSONL]
                 [--dump-tiles BIN] [--out-image IMG]
    dx100sim gen <kind> --spec F --out-dir DIR
    dx100sim verify <prog.dx> [--config F]
    dx100sim sweep [--spec F] [--jobs N] [--out CSV] [--config F]

`verify` runs the program through both the event-driven simulator and
the reference executor and exits nonzero on any state mismatch.
`sweep` runs the all-miss pattern grid, two CSV rows per cell (dx100 and
baseline).  The environment variable DX_SIM_SEED overrides the seed.
"""

import argparse
import json
import multiprocessing
import os
import sys
from dataclasses import replace

from . import engine as engine_mod
from .config import RunConfig, load_config
from .errors import DxError
from .isa import DType
from .memory import MemoryImage
from .oracle import compare_states, oracle_run
from .program import format_program, parse
from .workloads import ALLMISS_GRID, KINDS, PatternSpec, gen_program

TRACE_FIELDS = {
    "cmd": ("channel", "rank", "bank_group", "bank", "cmd", "row", "column"),
    "fill": ("instr", "line", "h"),
    "ireq": ("instr", "line", "h"),
    "iresp": ("instr", "line", "words"),
    "reactivate": ("instr", "channel", "rank", "bank_group", "bank", "row"),
    "capacity_drain": ("instr", "channel", "rank", "bank_group", "bank", "rows"),
}


def _load_program(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    prog, diags = parse(text)
    if prog is None:
        for lineno, msg in diags:
            print(f"{path}:{lineno}: error: {msg}", file=sys.stderr)
        raise SystemExit(1)
    return prog


def _write_trace(trace: list, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace:
            kind, t = rec[0], rec[1]
            names = TRACE_FIELDS.get(kind)
            body = dict(zip(names, rec[2:])) if names else {"args": list(rec[2:])}
            fh.write(json.dumps({"kind": kind, "t": t, **body},
                               separators=(",", ":")) + "\n")


def _base_dir(path: str) -> str:
    head = path.rsplit("/", 1)
    return head[0] if len(head) == 2 else "."


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    prog = _load_program(args.program)
    trace = [] if args.trace else None
    memory = MemoryImage.from_program(prog, cfg.dram.cacheline_bytes,
                                      cfg.dram.row_group_bytes,
                                      cfg.dram.capacity_bytes,
                                      base_dir=_base_dir(args.program))
    memory, spd, report = engine_mod.run(prog, cfg, memory, trace)
    row = report.csv_row({"program": args.program, "mode": "dx100",
                          "seed": cfg.seed})
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            engine_mod.write_csv([row], fh)
    else:
        engine_mod.write_csv([row], sys.stdout)
    if args.trace:
        _write_trace(trace, args.trace)
    if args.dump_tiles:
        with open(args.dump_tiles, "wb") as fh:
            fh.write(spd.dump_bytes())
    if args.out_image:
        with open(args.out_image, "wb") as fh:
            fh.write(memory.to_bytes())
    return 0


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    prog = _load_program(args.program)
    base_dir = _base_dir(args.program)
    memory = MemoryImage.from_program(prog, cfg.dram.cacheline_bytes,
                                      cfg.dram.row_group_bytes,
                                      cfg.dram.capacity_bytes, base_dir=base_dir)
    arrays = {e.name: e.data.copy() for e in memory.entries}
    memory, spd, _ = engine_mod.run(prog, cfg, memory)
    ostate = oracle_run(prog, arrays, cfg.maa.num_tiles, cfg.maa.tile_size,
                        (cfg.maa.rng_cursor_outer_reg,
                         cfg.maa.rng_cursor_inner_reg))
    problems = compare_states(memory, spd, ostate, prog)
    if problems:
        for p in problems:
            print(f"MISMATCH: {p}", file=sys.stderr)
        return 1
    print(f"verify: {args.program}: simulator matches the reference executor")
    return 0


def _parse_spec_file(path: str | None) -> tuple[PatternSpec, list]:
    spec = PatternSpec()
    cells = list(ALLMISS_GRID)
    explicit_cells = []
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise DxError(f"{path}:{lineno}: expected 'key = value'")
                key, val = (s.strip() for s in line.split("=", 1))
                if key == "unique_indices":
                    spec = replace(spec, unique_indices=int(val))
                elif key == "rows_per_bank":
                    spec = replace(spec, rows_per_bank=int(val))
                elif key == "rbh_target":
                    spec = replace(spec, rbh_target=float(val))
                elif key in ("chi", "bgi"):
                    spec = replace(spec, **{key: val in ("on", "true", "1")})
                elif key == "seed":
                    spec = replace(spec, seed=int(val))
                elif key == "dtype":
                    spec = replace(spec, dtype=DType[val])
                elif key == "cell":
                    rbh, chi, bgi = (s.strip() for s in val.split(","))
                    explicit_cells.append((float(rbh), chi == "on", bgi == "on"))
                else:
                    raise DxError(f"{path}:{lineno}: unknown spec key '{key}'")
    return spec, (explicit_cells or cells)


def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    spec, _ = _parse_spec_file(args.spec)
    env_seed = os.environ.get("DX_SIM_SEED")
    if env_seed is not None:
        spec = replace(spec, seed=int(env_seed, 0))
    wl = gen_program(args.kind, spec, cfg)
    outdir = args.out_dir.rstrip("/")
    os.makedirs(outdir, exist_ok=True)
    for decl in wl.program.arrays:
        decl.init = "file"
        decl.init_path = f"{decl.name}.bin"
        wl.arrays[decl.name].tofile(f"{outdir}/{decl.name}.bin")
    with open(f"{outdir}/{args.kind}.dx", "w", encoding="utf-8") as fh:
        fh.write(format_program(wl.program))
    with open(f"{outdir}/baseline_trace.jsonl", "w", encoding="utf-8") as fh:
        for core, tr in enumerate(wl.baseline_traces):
            for kind, line, *dep in tr:
                fh.write(json.dumps({"core": core, "kind": kind,
                                     "line": line}) + "\n")
    print(f"gen: wrote {args.kind}.dx plus {len(wl.program.arrays)} arrays "
          f"to {outdir}/")
    return 0


def sweep_cell(packed) -> list[dict]:
    cell_idx, kind, spec, cfg = packed
    rbh, chi, bgi = (spec.rbh_target, spec.chi, spec.bgi)
    wl = gen_program(kind, spec, cfg)
    meta = {"program": f"cell{cell_idx}", "kind": kind, "seed": spec.seed,
            "rbh_target": rbh, "chi": "on" if chi else "off",
            "bgi": "on" if bgi else "off"}
    memory = wl.image(cfg)
    _, _, rep = engine_mod.run(wl.program, cfg, memory)
    dx_row = rep.csv_row({**meta, "mode": "dx100"})
    brep = engine_mod.baseline_run(wl.baseline_traces, cfg)
    b_row = brep.csv_row({**meta, "mode": "baseline"})
    return [dx_row, b_row]


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    spec, cells = _parse_spec_file(args.spec)
    work = []
    for i, (rbh, chi, bgi) in enumerate(cells):
        cell_spec = replace(spec, rbh_target=rbh, chi=chi, bgi=bgi)
        work.append((i, args.kind, cell_spec, cfg))
    if args.jobs > 1:
        with multiprocessing.Pool(args.jobs) as pool:
            results = pool.map(sweep_cell, work)
    else:
        results = [sweep_cell(w) for w in work]
    rows = [r for pair in results for r in pair]
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            engine_mod.write_csv(rows, fh)
    else:
        engine_mod.write_csv(rows, sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dx100sim",
                                description="DX100 accelerator simulator")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="simulate a program")
    pr.add_argument("program")
    pr.add_argument("--config")
    pr.add_argument("--out", help="stats CSV path (default: stdout)")
    pr.add_argument("--trace", help="JSON-lines event trace path")
    pr.add_argument("--dump-tiles", help="binary scratchpad dump path")
    pr.add_argument("--out-image", help="final memory image path")
    pr.set_defaults(fn=cmd_run)

    pg = sub.add_parser("gen", help="generate a microbenchmark workload")
    pg.add_argument("kind", choices=KINDS)
    pg.add_argument("--spec", required=True)
    pg.add_argument("--out-dir", required=True)
    pg.add_argument("--config")
    pg.set_defaults(fn=cmd_gen)

    pv = sub.add_parser("verify", help="differential run against the oracle")
    pv.add_argument("program")
    pv.add_argument("--config")
    pv.set_defaults(fn=cmd_verify)

    ps = sub.add_parser("sweep", help="run the all-miss ordering grid")
    ps.add_argument("--spec")
    ps.add_argument("--kind", default="gather_full", choices=KINDS)
    ps.add_argument("--jobs", type=int, default=1)
    ps.add_argument("--out", help="stats CSV path (default: stdout)")
    ps.add_argument("--config")
    ps.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
