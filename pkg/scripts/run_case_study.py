#!/usr/bin/env python3
"""Run the 25-second benchmark comparison of the three controller variants
and print the report.  Equivalent to `quadcascade compare --outdir runs/case_study`."""

import argparse
import sys
from pathlib import Path

from quadcascade.harness import ExperimentConfig, compare_variants


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outdir", default="runs/case_study")
    ap.add_argument("--horizon", type=float, default=25.0)
    ap.add_argument("--variants", nargs="+",
                    default=["coupled", "decoupled", "baseline"])
    args = ap.parse_args(argv)

    config = ExperimentConfig(variants=tuple(args.variants),
                              horizon=args.horizon, outdir=args.outdir,
                              max_solver_failures=100)
    results, errors = compare_variants(config)
    print((Path(args.outdir) / "report.md").read_text())
    for name, msg in errors.items():
        print(f"variant {name} failed: {msg}", file=sys.stderr)
    return 1 if errors else 0


if __name__ == "__main__":
    sys.exit(main())
