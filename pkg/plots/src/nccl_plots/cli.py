"""``nccl-plots render`` — batch-render charts for a runs directory.

Reliability diagrams come from each ``<runs>/<config>/<seed>/
reliability_bins.csv``; comparison charts come from any ``*.csv`` placed
at the top level of the runs directory (the output of ``nccl-lab compare
--out``). Run directories are never written to.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import render_comparison, render_reliability

KINDS = ("reliability", "compare")


def cmd_render(args) -> int:
    root = Path(args.runs)
    out = Path(args.out)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    for kind in kinds:
        if kind not in KINDS:
            print(f"unknown kind {kind!r}; choose from "
                  f"{','.join(KINDS)}", file=sys.stderr)
            return 2
    written: list[Path] = []
    if "reliability" in kinds:
        for bins_csv in sorted(root.glob("*/*/reliability_bins.csv")):
            config_id, seed = bins_csv.parent.parent.name, \
                bins_csv.parent.name
            written += render_reliability(
                bins_csv, out, prefix=f"{config_id}-{seed}-")
    if "compare" in kinds:
        for table in sorted(root.glob("*.csv")):
            written += render_comparison(table, out,
                                         prefix=f"{table.stem}-")
    if not written:
        print(f"no renderable inputs under {root}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nccl-plots",
        description="Render charts from nccl-lab run artifacts")
    sub = parser.add_subparsers(dest="command", required=True)
    p_render = sub.add_parser("render", help="render charts for a runs dir")
    p_render.add_argument("--runs", required=True,
                          help="runs root directory")
    p_render.add_argument("--out", default="plots_out",
                          help="image output directory")
    p_render.add_argument("--kinds", default="reliability,compare",
                          help="comma list: reliability,compare")
    p_render.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
