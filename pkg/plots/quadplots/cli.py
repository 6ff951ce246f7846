"""CLI: plot --run <dir> --figs 2,3,4 --out <dir>"""

from __future__ import annotations

import argparse
import sys

from .figures import PlotJob, SchemaError, render


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="plot", description=__doc__)
    ap.add_argument("--run", required=True,
                    help="run directory (single variant or comparison root)")
    ap.add_argument("--figs", default="2,3,4",
                    help="comma-separated figure numbers (2, 3, 4)")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--fmt", default="png", choices=["png", "svg"])
    ap.add_argument("--dpi", type=int, default=120)
    args = ap.parse_args(argv)

    try:
        figures = tuple(int(f) for f in args.figs.split(",") if f.strip())
        job = PlotJob(run_dir=args.run, out_dir=args.out, figures=figures,
                      fmt=args.fmt, dpi=args.dpi)
        for path in render(job):
            print(path)
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
