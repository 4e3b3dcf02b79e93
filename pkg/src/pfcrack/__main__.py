"""Command line interface: ``python -m pfcrack {run,generate-reference,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bench import (EXPERIMENTS, config_from_dict, generate_reference, markdown_table, read_rows,
                    run_pipeline)
from .reconstruct import VARIANTS

log = logging.getLogger("pfcrack")


def _levels(text: str):
    """``"0,1,3"`` or ``"0-3"``."""
    out = []
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pfcrack", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment over mesh levels")
    run.add_argument("experiment", nargs="?", choices=EXPERIMENTS, help="experiment id (overrides the config)")
    run.add_argument("--config", type=Path, help="JSON config file")
    run.add_argument("--levels", type=_levels, help="levels, e.g. 0-3 or 0,2")
    run.add_argument("--variant", action="append", choices=VARIANTS, help="reconstruction variant (repeatable)")
    run.add_argument("--out", help="output directory")
    run.add_argument("--h0", type=float, help="coarsest crack mesh size")
    run.add_argument("--cod-method", choices=("integral", "point"), help="COD used to build the crack outline")
    run.add_argument("--geometry", choices=("exact", "reconstructed"), help="stokes-ellipse geometry")
    run.add_argument("--vtk", action="store_true", help="write VTK snapshots")

    ref = sub.add_parser("generate-reference", help="FSI point values on the exact opened ellipse")
    ref.add_argument("--levels", type=_levels, default=[0, 1, 2])
    ref.add_argument("--h0", type=float, default=0.008)
    ref.add_argument("--out", default="reference")
    ref.add_argument("--config", type=Path, help="JSON file whose 'fsi' entry overrides FSI parameters")

    rep = sub.add_parser("report", help="convert results CSV files to Markdown tables")
    rep.add_argument("csv", nargs="+", type=Path)
    rep.add_argument("--columns", help="comma separated column subset")
    rep.add_argument("--out", type=Path, help="write to this file instead of stdout")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "run":
        data = json.loads(args.config.read_text(encoding="utf-8")) if args.config else {}
        overrides = {"experiment": args.experiment, "levels": args.levels, "variants": args.variant,
                     "out": args.out, "h0": args.h0, "cod_method": args.cod_method, "geometry": args.geometry}
        data.update({k: v for k, v in overrides.items() if v is not None})
        if args.vtk:
            data["vtk"] = True
        cfg = config_from_dict(data)
        res = run_pipeline(cfg, log=log.info)
        failed = [r["level"] for r in res["rows"] if r["status"] != "ok"]
        log.info("results written to %s", Path(cfg.out) / "results.csv")
        return 1 if failed else 0
    if args.command == "generate-reference":
        fsi = {}
        if args.config:
            fsi = json.loads(args.config.read_text(encoding="utf-8")).get("fsi", {})
        generate_reference(args.levels, args.h0, args.out, fsi, log=log.info)
        return 0
    cols = args.columns.split(",") if args.columns else None
    parts = []
    for path in args.csv:
        parts.append(f"### {path}\n\n" + markdown_table(read_rows(path), cols) + "\n")
    text = "\n".join(parts)
    if args.out:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
