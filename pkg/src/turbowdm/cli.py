"""Command-line front end: run campaigns, sweep overrides, emit tables."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .metrics import read_records_ndjson, write_records_ndjson


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="config file or preset name (desk.cfg, paper.cfg)")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep cells")
    p.add_argument("--seed", type=int, default=None, help="override base seed")


def _execute(cfg, out_dir: Path, jobs: int) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    records, summary, failures = harness.run_campaign(cfg, jobs=jobs)
    write_records_ndjson(out_dir / "records.ndjson", records)
    harness.emit_tables(summary, out_dir)
    for row in summary:
        print(
            f"P={row['power_dbm']:+5.1f} dBm spans={row['n_spans']:3d} "
            f"{row['mode']:10s} iter={row['iteration']} "
            f"BER={row['ber']:.3e} SNR={row['snr_db']:6.2f} dB "
            f"GMI={row['gmi_bits_per_4d']:5.2f} b/4D"
        )
    if failures:
        for key, err in failures:
            print(f"FAILED cell {key}: {err}", file=sys.stderr)
        return 1
    return 0


def cmd_run(args) -> int:
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    return _execute(cfg, Path(args.out), args.jobs)


def cmd_sweep(args) -> int:
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    if args.power_dbm:
        cfg = replace(cfg, power_dbm_list=tuple(args.power_dbm))
    if args.spans:
        cfg = replace(cfg, span_list=tuple(args.spans))
    if args.modes:
        cfg = replace(cfg, modes=tuple(args.modes))
    return _execute(cfg, Path(args.out), args.jobs)


def cmd_tables(args) -> int:
    records = read_records_ndjson(args.results)
    rows = harness.aggregate(records)
    if args.figure == "power":
        rows = [r for r in rows]
    elif args.figure == "spans":
        rows = [r for r in rows]
    paths = harness.emit_tables(rows, Path(args.out))
    for p in paths:
        print(p)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    ap = argparse.ArgumentParser(prog="turbowdm")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="run the campaign defined by a config file")
    _add_common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run with sweep-axis overrides")
    _add_common(p_sweep)
    p_sweep.add_argument("--power-dbm", type=float, nargs="+")
    p_sweep.add_argument("--spans", type=int, nargs="+")
    p_sweep.add_argument("--modes", nargs="+", choices=harness.MODES)
    p_sweep.set_defaults(fn=cmd_sweep)

    p_tab = sub.add_parser("tables", help="emit plot-ready CSV tables from results")
    p_tab.add_argument("--results", required=True, help="records.ndjson from a run")
    p_tab.add_argument("--out", default="tables")
    p_tab.add_argument("--figure", choices=("power", "spans", "all"), default="all")
    p_tab.set_defaults(fn=cmd_tables)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
