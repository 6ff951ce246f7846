"""Closed-loop experiment harness: reference -> outer MPC -> attitude
command -> inner loop -> plant, with CSV logging, metrics, and the
three-variant comparison report.

Loop timing: the MPC runs every h seconds on the measured translational
errors plus the internal (a_d, eta) filter states; the plant is sub-stepped
at h/substeps with the thrust/torque recomputed at every sub-step from the
exact continuous filter response under the held input.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import outer_model as om
from .certificates import Certificate, build_certificate
from .mpc import MpcConfig, OuterLoopMpc, variant_constraints
from .outer_model import (DiscreteModel, EmptyInputSetError, compute_rho_star,
                          discretize)
from .reference import (FlatTrajectory, build_rho_schedule, circular_profile,
                        flat_to_reference, hover_profile, scaled_profile)
from .so3 import exp_so3
from .vehicle import (AttitudeCommand, InnerLoopGains, PlantParams, QuadState,
                      flatness_attitude, inner_loop_torque, integrate_rk4)

STATE_COLUMNS = (
    ["t", "px", "py", "pz", "vx", "vy", "vz"]
    + [f"R{i}{j}" for i in range(1, 4) for j in range(1, 4)]
    + ["wx", "wy", "wz", "T", "taux", "tauy", "tauz",
       "adx", "ady", "adz", "rho"]
)
REFERENCE_COLUMNS = (
    ["t", "px", "py", "pz", "vx", "vy", "vz"]
    + [f"R{i}{j}" for i in range(1, 4) for j in range(1, 4)]
    + ["wx", "wy", "wz", "T", "taux", "tauy", "tauz", "psi", "rho"]
)
DIAG_COLUMNS = ["k", "solve_time", "iterations", "kkt_residual", "cost",
                "active_faces", "converged", "cert_set_margin"]


@dataclass
class ExperimentConfig:
    variants: tuple = ("coupled", "decoupled", "baseline")
    trajectory: str = "circular"        # circular | hover
    trajectory_scale: float = 1.0
    h: float = 0.05
    gamma: float = 0.1
    N: int = 20
    Q_diag: tuple = (100, 1, 1, 1, 100, 1, 1, 1, 80, 1, 1, 1)
    R_diag: tuple = (0.01, 0.01, 0.1)
    kw_scale: float = 30.0
    kr_scale: float = 70.0
    k_gains: tuple = (4.5, 5.0, 5.5)
    delta: float = 1.0
    horizon: float = 25.0
    substeps: int = 50
    p_offset: tuple = (1.0, 1.0, 1.0)   # initial position = pbar(0) + offset
    v0: tuple = (0.0, 0.0, 0.0)
    attitude_axis_angle: tuple = (0.0, 0.0, 0.0)
    kkt_tol: float = 1e-6
    max_iter: int = 100
    warm_start: bool = True
    max_solver_failures: int = 5
    seed: int = 0
    outdir: str = "runs/out"

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("h must be positive")
        steps = self.horizon / self.h
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("horizon must be a multiple of h")
        if len(self.Q_diag) != 12:
            raise ValueError("Q_diag must have 12 entries (per-axis blocks)")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("variants", "Q_diag", "R_diag", "k_gains", "p_offset",
                    "v0", "attitude_axis_angle"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def mpc_config(self, variant: str) -> MpcConfig:
        return MpcConfig(N=self.N, Q=np.diag(self.Q_diag),
                         R=np.diag(self.R_diag), variant=variant,
                         kkt_tol=self.kkt_tol, max_iter=self.max_iter,
                         warm_start=self.warm_start)

    def plant_params(self) -> PlantParams:
        return PlantParams(delta=self.delta, gamma=self.gamma)

    def trajectory_profile(self) -> FlatTrajectory:
        if self.trajectory == "circular":
            traj = circular_profile(horizon=self.horizon)
        elif self.trajectory == "hover":
            traj = hover_profile(horizon=self.horizon)
        else:
            raise ValueError(f"unknown trajectory {self.trajectory!r}")
        if self.trajectory_scale != 1.0:
            traj = scaled_profile(traj, self.trajectory_scale)
        return traj


@dataclass
class RunMetrics:
    variant: str
    rmse_xyz: list
    rmse_combined: float
    avg_solve_time: float
    max_solve_time: float
    avg_iterations: float
    max_kkt_residual: float
    max_constraint_violation: float
    max_sphere_violation: float
    thrust_min: float
    thrust_max: float
    thrust_clamped_steps: int
    solver_failures: int
    all_converged: bool
    initial_pos_error: float
    final_pos_error: float
    pos_error_decreased: bool

    def to_dict(self):
        return asdict(self)


class SolverFailureError(RuntimeError):
    pass


@dataclass
class RunSetup:
    """Everything shared between variants for one experiment config."""

    config: ExperimentConfig
    params: PlantParams
    traj: FlatTrajectory
    model: DiscreteModel
    schedule: om.RhoSchedule
    cert: Certificate
    ref_table: list           # ReferencePoint at every sub-sample time
    times: np.ndarray


def prepare(config: ExperimentConfig) -> RunSetup:
    """Build model, schedule, certificate and the reference table once."""
    params = config.plant_params()
    traj = config.trajectory_profile()
    model = discretize(config.gamma, config.h, params.D)
    # schedule must cover the final MPC window: K + N + 1 intervals
    sched_span = config.horizon + (config.N + 2) * config.h
    schedule = build_rho_schedule(traj, params, config.delta, config.h,
                                  sched_span, config.gamma)
    rho_star = compute_rho_star(schedule.rho_k, model.alpha, model.beta)
    cert = build_certificate(model.Ad, model.Bd, np.diag(config.Q_diag),
                             np.diag(config.R_diag), rho_star)
    n_steps = int(round(config.horizon / config.h))
    dt = config.h / config.substeps
    times = np.arange(n_steps * config.substeps + 1) * dt
    ref_table = [flat_to_reference(traj, params, float(t)) for t in times]
    return RunSetup(config=config, params=params, traj=traj, model=model,
                    schedule=schedule, cert=cert, ref_table=ref_table,
                    times=times)


def _initial_state(setup: RunSetup) -> QuadState:
    cfg = setup.config
    p0 = setup.ref_table[0].pbar + np.asarray(cfg.p_offset, dtype=float)
    v0 = np.asarray(cfg.v0, dtype=float)
    R0 = exp_so3(np.asarray(cfg.attitude_axis_angle, dtype=float))
    return QuadState(p=p0, v=v0, R=R0, omega=np.zeros(3))


def pack_outer_state(p_err, v_err, a_d, eta) -> np.ndarray:
    x = np.empty(12)
    x[om.IDX_P] = p_err
    x[om.IDX_V] = v_err
    x[om.IDX_AD] = a_d
    x[om.IDX_ETA] = eta
    return x


def run_closed_loop(setup: RunSetup, variant: str):
    """Run one variant over the full horizon; returns (metrics, logs).

    ``logs`` maps names to arrays: states (per sub-sample), reference,
    mpc diagnostics (per sample), and the step-0 slab geometry per sample.
    """
    cfg = setup.config
    params = setup.params
    model = setup.model
    gamma = cfg.gamma
    gains = InnerLoopGains.from_scales(params.J, cfg.kw_scale, cfg.kr_scale,
                                       cfg.k_gains)
    controller = OuterLoopMpc(cfg.mpc_config(variant), setup.cert, model,
                              setup.schedule)
    n_steps = int(round(cfg.horizon / cfg.h))
    dt = cfg.h / cfg.substeps

    state = _initial_state(setup)
    a_d = np.zeros(3)
    eta = np.zeros(3)

    n_rows = n_steps * cfg.substeps + 1
    state_log = np.empty((n_rows, len(STATE_COLUMNS)))
    ref_log = np.empty((n_rows, len(REFERENCE_COLUMNS)))
    diag_log = np.empty((n_steps, len(DIAG_COLUMNS)))
    geom_rows = []
    thrust_clamped = 0

    def log_row(idx, t, T, tau, ad_t):
        ref = setup.ref_table[idx]
        rho_t = setup.schedule.rho_of_t(t)
        state_log[idx] = [t, *state.p, *state.v, *state.R.ravel(),
                          *state.omega, T, *tau, *ad_t, rho_t]
        ref_log[idx] = [t, *ref.pbar, *ref.vbar, *ref.Rbar.ravel(),
                        *ref.wbar, ref.Tbar, *ref.taubar, ref.psi, rho_t]

    for k in range(n_steps):
        ref_k = setup.ref_table[k * cfg.substeps]
        x_k = pack_outer_state(ref_k.pbar - state.p, ref_k.vbar - state.v,
                               a_d, eta)
        u, diag, _sol = controller.mpc_step(x_k, k)
        if controller.failures > cfg.max_solver_failures:
            raise SolverFailureError(
                f"{controller.failures} non-converged solves by sample {k}")
        diag_log[k] = [k, diag.solve_time, diag.iterations, diag.kkt_residual,
                       diag.cost, diag.active_faces, float(diag.converged),
                       diag.cert_set_margin]
        try:
            slab = variant_constraints(variant, setup.schedule.rho_k[k],
                                       setup.schedule.rho_k[k + 1], x_k,
                                       model, controller.rho_min_run)
            geom_rows.append([k, setup.schedule.rho_k[k], *slab.lo, *slab.up])
        except EmptyInputSetError:
            nf = 6 if variant == "coupled" else 3
            geom_rows.append([k, setup.schedule.rho_k[k]] + [np.nan] * (2 * nf))

        for q in range(cfg.substeps):
            idx = k * cfg.substeps + q
            t = float(setup.times[idx])
            # exact continuous filter response under the held input
            ts = t - k * cfg.h
            al = np.exp(-ts / gamma)
            be = (ts / gamma) * np.exp(-ts / gamma)
            ad_t = al * a_d + be * eta + (1.0 - al - be) * u
            eta_t = al * eta + (1.0 - al) * u
            ad_dot = -(ad_t - eta_t) / gamma
            eta_dot = -(eta_t - u) / gamma
            ad_ddot = -(ad_dot - eta_dot) / gamma

            ref_t = setup.ref_table[idx]
            cmd = flatness_attitude(ad_t, ad_dot, ad_ddot, ref_t)
            T = float(np.clip(cmd.T, 0.0, params.Tmax))
            if T != cmd.T:
                thrust_clamped += 1
            tau = inner_loop_torque(state, ref_t, cmd, gains, params)
            log_row(idx, t, T, tau, ad_t)
            state = integrate_rk4(state, params, T, tau, dt)

        a_d, eta = model.ad_next(a_d, eta, u), model.eta_next(eta, u)

    # terminal row: filter states already advanced to t = horizon; the last
    # held input still shapes the derivatives
    final_ref = setup.ref_table[-1]
    ad_dot = -(a_d - eta) / gamma
    eta_dot = -(eta - u) / gamma
    cmd = flatness_attitude(a_d, ad_dot, -(ad_dot - eta_dot) / gamma, final_ref)
    tau = inner_loop_torque(state, final_ref, cmd, gains, params)
    log_row(n_rows - 1, float(setup.times[-1]),
            float(np.clip(cmd.T, 0.0, params.Tmax)), tau, a_d)

    logs = {
        "states": state_log,
        "reference": ref_log,
        "mpc_diag": diag_log,
        "geometry": np.asarray(geom_rows),
    }
    metrics = compute_metrics(setup, variant, logs, thrust_clamped,
                              controller.failures)
    return metrics, logs


def compute_metrics(setup: RunSetup, variant: str, logs: dict,
                    thrust_clamped: int, failures: int) -> RunMetrics:
    cfg = setup.config
    sub = cfg.substeps
    st, rf, dg = logs["states"], logs["reference"], logs["mpc_diag"]

    grid = np.arange(0, st.shape[0], sub)          # h-grid rows
    perr = rf[grid, 1:4] - st[grid, 1:4]
    rmse = np.sqrt(np.mean(perr**2, axis=0))
    combined = float(np.linalg.norm(rmse))

    c = STATE_COLUMNS.index
    ad = st[:, c("adx"):c("adx") + 3]
    rho = st[:, c("rho")]
    viol = _ad_violation(variant, ad, rho, setup)
    sphere = float(np.max(np.linalg.norm(ad, axis=1) - rho))

    pos_err_norm = np.linalg.norm(rf[:, 1:4] - st[:, 1:4], axis=1)
    return RunMetrics(
        variant=variant,
        rmse_xyz=[float(r) for r in rmse],
        rmse_combined=combined,
        avg_solve_time=float(np.mean(dg[:, 1])),
        max_solve_time=float(np.max(dg[:, 1])),
        avg_iterations=float(np.mean(dg[:, 2])),
        max_kkt_residual=float(np.max(dg[:, 3])),
        max_constraint_violation=viol,
        max_sphere_violation=sphere,
        thrust_min=float(np.min(st[:, c("T")])),
        thrust_max=float(np.max(st[:, c("T")])),
        thrust_clamped_steps=thrust_clamped,
        solver_failures=failures,
        all_converged=bool(np.all(dg[:, 6] > 0.5)),
        initial_pos_error=float(pos_err_norm[0]),
        final_pos_error=float(pos_err_norm[-1]),
        pos_error_decreased=bool(pos_err_norm[-1] < 0.1 * pos_err_norm[0]),
    )


def _ad_violation(variant: str, ad: np.ndarray, rho: np.ndarray,
                  setup: RunSetup) -> float:
    """Largest violation of the variant's a_d constraint over all rows."""
    if variant == "coupled":
        vals = ad @ om.FACES.T
        return float(np.max(np.abs(vals) - rho[:, None]))
    if variant == "decoupled":
        return float(np.max(np.abs(ad) - rho[:, None] / np.sqrt(3.0)))
    level = float(np.min(setup.schedule.rho_k)) / np.sqrt(3.0)
    return float(np.max(np.abs(ad) - level))


def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(rows, dtype=float)
    np.savetxt(path, arr, fmt="%.12g", delimiter=",",
               header=",".join(header), comments="")


def write_run(outdir: Path, variant: str, metrics: RunMetrics, logs: dict,
              setup: RunSetup):
    """Write states.csv, reference.csv, mpc_diag.csv, geometry.csv and
    metrics.json for one variant run."""
    d = Path(outdir) / variant
    write_csv(d / "states.csv", STATE_COLUMNS, logs["states"])
    write_csv(d / "reference.csv", REFERENCE_COLUMNS, logs["reference"])
    write_csv(d / "mpc_diag.csv", DIAG_COLUMNS, logs["mpc_diag"])
    nf = 6 if variant == "coupled" else 3
    geom_cols = (["k", "rho"] + [f"lo{j}" for j in range(1, nf + 1)]
                 + [f"up{j}" for j in range(1, nf + 1)])
    write_csv(d / "geometry.csv", geom_cols, logs["geometry"])
    payload = {
        "metrics": metrics.to_dict(),
        "config": asdict(setup.config),
        "rho_star": setup.cert.rho_star,
        "rho_min_run": float(np.min(setup.schedule.rho_k)),
        "certificate_residuals": setup.cert.residuals,
    }
    (d / "metrics.json").write_text(json.dumps(payload, indent=2))


def compare_variants(config: ExperimentConfig, setup: RunSetup = None):
    """Run every configured variant on identical initial conditions and
    write the comparison report; per-variant errors do not abort the rest."""
    setup = prepare(config) if setup is None else setup
    outdir = Path(config.outdir)
    results = {}
    errors = {}
    for variant in config.variants:
        try:
            metrics, logs = run_closed_loop(setup, variant)
            write_run(outdir, variant, metrics, logs, setup)
            results[variant] = metrics
        except Exception as exc:            # keep the other variants running
            errors[variant] = f"{type(exc).__name__}: {exc}"
    report = render_report(config, setup, results, errors)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.md").write_text(report)
    summary_rows = [[m.rmse_xyz[0], m.rmse_xyz[1], m.rmse_xyz[2],
                     m.rmse_combined, m.avg_solve_time * 1e3]
                    for m in results.values()]
    if summary_rows:
        write_csv(outdir / "summary.csv",
                  ["rmse_x", "rmse_y", "rmse_z", "rmse_combined",
                   "avg_solve_ms"], summary_rows)
    return results, errors


def render_report(config: ExperimentConfig, setup: RunSetup, results: dict,
                  errors: dict) -> str:
    lines = ["# Variant comparison", ""]
    lines.append(f"Trajectory: `{config.trajectory}` over {config.horizon} s, "
                 f"h = {config.h} s, N = {config.N}, gamma = {config.gamma}.")
    lines.append(f"Initial conditions: p(0) = pbar(0) + {list(config.p_offset)} m, "
                 f"v(0) = {list(config.v0)} m/s, R(0) = exp({list(config.attitude_axis_angle)}), "
                 f"omega(0) = 0, a_d(0) = eta(0) = 0 "
                 "(reference start conditions are a modelling choice recorded here).")
    lines.append(f"rho* = {setup.cert.rho_star:.4f} m/s^2; "
                 f"feasibility condition holds: {setup.schedule.feasible}.")
    lines.append("")
    lines.append("| variant | RMSE x | RMSE y | RMSE z | combined | avg solve [ms] | iters | converged |")
    lines.append("|---|---|---|---|---|---|---|---|")
    for name, m in results.items():
        lines.append(
            f"| {name} | {m.rmse_xyz[0]:.3f} | {m.rmse_xyz[1]:.3f} | "
            f"{m.rmse_xyz[2]:.3f} | {m.rmse_combined:.3f} | "
            f"{m.avg_solve_time * 1e3:.2f} | {m.avg_iterations:.1f} | "
            f"{'yes' if m.all_converged else 'NO'} |")
    for name, msg in errors.items():
        lines.append(f"| {name} | run failed: {msg} | | | | | | |")
    lines.append("")
    lines.append("Constraint audit (max violation over all sub-samples; "
                 "<= 0 means satisfied):")
    lines.append("")
    for name, m in results.items():
        extra = ""
        if name == "coupled":
            ok = m.max_sphere_violation <= 1e-6
            extra = (f"; |a_d| <= rho(t) at all sub-samples: "
                     f"{'yes' if ok else 'VIOLATED'} "
                     f"(max excess {m.max_sphere_violation:.2e})")
        lines.append(f"- {name}: face violation {m.max_constraint_violation:.2e}"
                     f"; thrust in [{m.thrust_min:.2f}, {m.thrust_max:.2f}] "
                     f"(clamped {m.thrust_clamped_steps} sub-steps){extra}")
    lines.append("")
    lines.append("Timing is indicative (interpreter, desk hardware); the "
                 "decoupled variant is solved as one 12-state problem with "
                 "separable constraints, so its solve time is not comparable "
                 "to per-axis implementations.")
    lines.append("")
    return "\n".join(lines)


def read_csv(path: Path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def audit_run(run_dir) -> dict:
    """Re-check a logged run directory against the constraint invariants.

    Returns {check_name: (ok, detail)}; every check must pass for a clean
    audit.  Works purely from the CSV/JSON artifacts.
    """
    run_dir = Path(run_dir)
    payload = json.loads((run_dir / "metrics.json").read_text())
    variant = payload["metrics"]["variant"]
    cfg = payload["config"]
    rho_star = payload["rho_star"]
    Tmax = PlantParams().Tmax

    cols, st = read_csv(run_dir / "states.csv")
    ad = st[:, cols.index("adx"):cols.index("adx") + 3]
    rho = st[:, cols.index("rho")]
    T = st[:, cols.index("T")]
    results = {}

    results["thrust_bounds"] = (
        bool(np.all(T >= -1e-12) and np.all(T <= Tmax + 1e-9)),
        f"T in [{T.min():.4g}, {T.max():.4g}], limit {Tmax}")

    Rflat = st[:, cols.index("R11"):cols.index("R11") + 9]
    ortho = 0.0
    for row in Rflat[:: max(1, len(Rflat) // 500)]:
        R = row.reshape(3, 3)
        ortho = max(ortho, float(np.linalg.norm(R.T @ R - np.eye(3), "fro")))
    results["rotation_orthogonality"] = (ortho <= 1e-8,
                                         f"max |R'R - I|_F = {ortho:.3g}")

    if variant == "coupled":
        face_viol = float(np.max(np.abs(ad @ om.FACES.T) - rho[:, None]))
        sphere_viol = float(np.max(np.linalg.norm(ad, axis=1) - rho))
        results["ad_dodecahedron"] = (face_viol <= 1e-6,
                                      f"max face excess {face_viol:.3g}")
        results["ad_sphere"] = (sphere_viol <= 1e-6,
                                f"max |a_d| - rho = {sphere_viol:.3g}")
    else:
        if variant == "decoupled":
            lvl = rho / np.sqrt(3.0)
            viol = float(np.max(np.abs(ad) - lvl[:, None]))
        else:
            lvl = payload["rho_min_run"] / np.sqrt(3.0)
            viol = float(np.max(np.abs(ad) - lvl))
        results["ad_cube"] = (viol <= 1e-6, f"max axis excess {viol:.3g}")

    _, dg = read_csv(run_dir / "mpc_diag.csv")
    conv = dg[:, 6] > 0.5
    kkt_ok = bool(np.all(dg[conv, 3] <= cfg["kkt_tol"] * (1 + 1e-9)))
    results["kkt_residuals"] = (
        kkt_ok, f"max converged KKT {dg[conv, 3].max():.3g}, "
                f"{int((~conv).sum())} non-converged solves")
    if variant == "coupled":
        margin = float(np.min(dg[:, 7]))
        results["certified_set_inside"] = (
            margin >= -1e-9,
            f"min slack of dodecahedron(rho*={rho_star:.3f}) is {margin:.3g}")

    _, gm = read_csv(run_dir / "geometry.csv")
    nf = (gm.shape[1] - 2) // 2
    lo, up = gm[:, 2:2 + nf], gm[:, 2 + nf:]
    results["slab_nonempty"] = (bool(np.all(lo <= up + 1e-12)),
                                f"min up - lo = {np.min(up - lo):.3g}")
    return results


def elapsed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
