"""Figure analogues from run CSVs: 3D trajectory, position errors, and
desired accelerations with the admissible envelopes."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

REQUIRED = {
    "states.csv": ["t", "px", "py", "pz", "adx", "ady", "adz", "rho"],
    "reference.csv": ["t", "px", "py", "pz"],
}

SQRT3 = np.sqrt(3.0)


class SchemaError(RuntimeError):
    """Missing file, empty file, or missing column in a run directory."""


@dataclass
class PlotJob:
    run_dir: Path
    out_dir: Path
    figures: tuple = (2, 3, 4)
    fmt: str = "png"
    dpi: int = 120
    style: dict = field(default_factory=dict)


def load_csv(path: Path):
    if not path.exists():
        raise SchemaError(f"missing file: {path}")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        raise SchemaError(f"empty file: {path}")
    return header, data


def load_run(run_dir: Path):
    """Columns of one variant run as name -> array maps."""
    out = {}
    for fname, needed in REQUIRED.items():
        header, data = load_csv(run_dir / fname)
        for col in needed:
            if col not in header:
                raise SchemaError(f"{run_dir / fname}: missing column {col!r}")
        out[fname] = {c: data[:, i] for i, c in enumerate(header)}
    return out


def find_variants(run_dir: Path):
    """A run dir is either a single run (has states.csv) or a comparison
    root whose subdirectories are runs."""
    run_dir = Path(run_dir)
    if (run_dir / "states.csv").exists():
        return {run_dir.name or "run": run_dir}
    subs = {p.name: p for p in sorted(run_dir.iterdir())
            if p.is_dir() and (p / "states.csv").exists()}
    if not subs:
        raise SchemaError(f"no states.csv under {run_dir}")
    return subs


def fig_trajectory_3d(runs, out_path, dpi):
    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    first = True
    for name, data in runs.items():
        st, rf = data["states.csv"], data["reference.csv"]
        if first:
            # altitude is -z in the NED world frame
            ax.plot(rf["px"], rf["py"], -rf["pz"], "k--", lw=1.2,
                    label="reference")
            first = False
        ax.plot(st["px"], st["py"], -st["pz"], lw=1.0, label=name)
        ax.scatter([st["px"][0]], [st["py"][0]], [-st["pz"][0]],
                   color="black", s=25, zorder=5)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_zlabel("altitude [m]")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


def fig_position_errors(runs, out_path, dpi):
    fig, axes = plt.subplots(3, 1, figsize=(6, 6), sharex=True)
    labels = ["x", "y", "z"]
    for name, data in runs.items():
        st, rf = data["states.csv"], data["reference.csv"]
        t = st["t"]
        for i, lab in enumerate(labels):
            axes[i].plot(t, rf["p" + lab] - st["p" + lab], lw=0.9, label=name)
    for i, lab in enumerate(labels):
        axes[i].set_ylabel(f"p{lab} error [m]")
        axes[i].grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    axes[2].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(out_path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


def fig_desired_accelerations(runs, out_path, dpi):
    n = len(runs)
    fig, axes = plt.subplots(1, n, figsize=(4.2 * n, 3.6), squeeze=False)
    for col, (name, data) in enumerate(runs.items()):
        ax = axes[0][col]
        st = data["states.csv"]
        t, rho = st["t"], st["rho"]
        for comp, lab in zip(("adx", "ady", "adz"), ("x", "y", "z")):
            ax.plot(t, st[comp], lw=0.8, label=f"a_d {lab}")
        ax.plot(t, rho / SQRT3, "r--", lw=1.0, label="± rho/sqrt(3)")
        ax.plot(t, -rho / SQRT3, "r--", lw=1.0)
        ax.plot(t, rho, "k:", lw=1.0, label="± rho")
        ax.plot(t, -rho, "k:", lw=1.0)
        ax.set_title(name, fontsize=10)
        ax.set_xlabel("t [s]")
        ax.grid(alpha=0.3)
        if col == 0:
            ax.set_ylabel("desired acceleration [m/s$^2$]")
            ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(out_path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


RENDERERS = {
    2: ("trajectory_3d", fig_trajectory_3d),
    3: ("position_errors", fig_position_errors),
    4: ("desired_accelerations", fig_desired_accelerations),
}


def render(job: PlotJob):
    """Render the selected figures; returns the list of written files."""
    variants = find_variants(Path(job.run_dir))
    runs = {name: load_run(path) for name, path in variants.items()}
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for fig_no in job.figures:
        if fig_no not in RENDERERS:
            raise ValueError(f"unknown figure {fig_no}; choose from 2, 3, 4")
        name, fn = RENDERERS[fig_no]
        out_path = out_dir / f"fig{fig_no}_{name}.{job.fmt}"
        fn(runs, out_path, job.dpi)
        written.append(out_path)
    return written
