"""Command-line entry points: run, compare, certify, audit.

Configs are JSON key-value files mirroring ExperimentConfig; any field can
also be left at its default.  See README for the output file schemas.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .certificates import build_certificate
from .harness import (ExperimentConfig, audit_run, compare_variants, prepare,
                      run_closed_loop, write_run)


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_json(args.config)
    else:
        cfg = ExperimentConfig()
    if args.outdir:
        cfg.outdir = args.outdir
    if getattr(args, "variant", None):
        cfg.variants = (args.variant,)
    return cfg


def cmd_run(args) -> int:
    cfg = _load_config(args)
    setup = prepare(cfg)
    for variant in cfg.variants:
        metrics, logs = run_closed_loop(setup, variant)
        write_run(Path(cfg.outdir), variant, metrics, logs, setup)
        print(f"{variant}: RMSE {np.round(metrics.rmse_xyz, 3).tolist()} "
              f"combined {metrics.rmse_combined:.3f} m, "
              f"avg solve {metrics.avg_solve_time * 1e3:.2f} ms")
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    results, errors = compare_variants(cfg)
    print((Path(cfg.outdir) / "report.md").read_text())
    for name, msg in errors.items():
        print(f"variant {name} failed: {msg}", file=sys.stderr)
    return 0 if results and not errors else 1


def cmd_certify(args) -> int:
    cfg = _load_config(args)
    setup = prepare(cfg)
    cert = setup.cert
    out = Path(args.out) if args.out else Path(cfg.outdir) / "certificate.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(cert.to_json())
    print(f"certificate written to {out}")
    for name, value in cert.residuals.items():
        print(f"  {name}: {value:.3e}")
    print(f"  rho_star: {cert.rho_star:.6f}  (saturation level "
          f"{cert.sat_level:.6f})")
    print(f"  feasibility condition holds: {setup.schedule.feasible}")
    return 0


def cmd_audit(args) -> int:
    ok_all = True
    for run_dir in args.run_dirs:
        print(f"audit {run_dir}")
        results = audit_run(run_dir)
        for name, (ok, detail) in results.items():
            print(f"  [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
            ok_all &= ok
    return 0 if ok_all else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadcascade",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="closed-loop run of one or more variants")
    pr.add_argument("--config", help="JSON config file")
    pr.add_argument("--outdir", help="output directory override")
    pr.add_argument("--variant", choices=["coupled", "decoupled", "baseline"])
    pr.set_defaults(fn=cmd_run)

    pc = sub.add_parser("compare", help="run all variants and write report.md")
    pc.add_argument("--config", help="JSON config file")
    pc.add_argument("--outdir", help="output directory override")
    pc.set_defaults(fn=cmd_compare)

    py = sub.add_parser("certify", help="build and validate the certificate")
    py.add_argument("--config", help="JSON config file")
    py.add_argument("--outdir", help="output directory override")
    py.add_argument("--out", help="certificate JSON path")
    py.set_defaults(fn=cmd_certify)

    pa = sub.add_parser("audit", help="re-check logged run directories")
    pa.add_argument("run_dirs", nargs="+", help="run directories (outdir/variant)")
    pa.set_defaults(fn=cmd_audit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
