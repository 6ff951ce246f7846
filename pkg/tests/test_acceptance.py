"""Acceptance gate: every exit criterion, at its stated tolerance, with one
printed pass line per criterion (run with ``pytest -s`` to see them)."""

import time

import numpy as np
import pytest

from quadcascade import outer_model as om
from quadcascade.certificates import build_certificate, lyapunov_decrease_check
from quadcascade.harness import read_csv
from quadcascade.mpc import MpcConfig, OuterLoopMpc, solve, terminal_cost
from quadcascade.outer_model import (FACES, compute_rho_star,
                                     dodecahedron_vertices,
                                     feasibility_condition)

PHI = om.PHI


def ok(name, detail=""):
    print(f"ACCEPTANCE {name}: PASS {detail}")


def test_certificate_validity(model, weights):
    t0 = time.perf_counter()
    cert = build_certificate(model.Ad, model.Bd, *weights, rho_star=6.6)
    elapsed = time.perf_counter() - t0
    Acl = model.Ad + model.Bd @ cert.K

    lmi = np.max(np.linalg.eigvalsh(model.Ad.T @ cert.Mc @ model.Ad - cert.Mc))
    assert lmi <= 1e-8
    lyap = np.linalg.norm(Acl.T @ cert.Mq @ Acl - cert.Mq + np.eye(12), "fro")
    assert lyap <= 1e-6
    kap = np.max(np.linalg.eigvalsh(cert.kappa * model.Bd.T @ cert.Mc @ model.Bd
                                    - np.eye(3)))
    assert kap < 0
    assert elapsed < 1.0
    ok("certificate-validity",
       f"(lmi {lmi:.1e}, lyap {lyap:.1e}, kappa margin {kap:.2f}, "
       f"built in {elapsed * 1e3:.0f} ms)")


def test_lyapunov_decrease(cert, model):
    u_max = cert.rho_star / np.sqrt(3.0)
    worst = -np.inf
    fails = 0
    for scale in (1.0, 10.0, 1e4):
        rng = np.random.default_rng(int(scale) + 1)
        for _ in range(1000):
            x = rng.normal(size=12)
            x *= scale / np.linalg.norm(x)
            d = lyapunov_decrease_check(cert, model.Ad, model.Bd, x, u_max)
            worst = max(worst, d / (1 + np.linalg.norm(x) ** 3))
            fails += d > 0
    assert fails == 0
    ok("lyapunov-decrease", f"(3000 states, worst scaled Delta {worst:.2e})")


def test_zoh_exactness(model):
    from scipy.signal import cont2discrete
    A = np.zeros((12, 12))
    B = np.zeros((12, 3))
    for ax, d in enumerate([0.26, 0.28, 0.42]):
        i = 4 * ax
        A[i, i + 1] = 1.0
        A[i + 1, i + 1], A[i + 1, i + 2] = -d, 1.0
        A[i + 2, i + 2], A[i + 2, i + 3] = -10.0, 10.0
        A[i + 3, i + 3] = -10.0
        B[i + 3, ax] = 10.0
    Ad, Bd, *_ = cont2discrete((A, B, np.eye(12), 0 * B), 0.05, method="zoh")
    err = max(np.max(np.abs(Ad - model.Ad)), np.max(np.abs(Bd - model.Bd)))
    assert err <= 1e-12

    a, b = np.exp(-0.5), 0.5 * np.exp(-0.5)
    for ax in range(3):
        r = 4 * ax + 2
        assert model.Ad[r, r] == a and model.Ad[r, r + 1] == b
        assert model.Ad[r + 1, r + 1] == a
        assert model.Bd[r, ax] == pytest.approx(1 - a - b, rel=1e-15)
        assert model.Bd[r + 1, ax] == pytest.approx(1 - a, rel=1e-15)
    ok("zoh-exactness", f"(max deviation from expm {err:.1e})")


def test_geometry():
    assert abs(1 / PHI + 1 / PHI**2 - 1.0) <= 1e-12
    rho = 7.3
    verts = dodecahedron_vertices(rho)
    assert np.max(np.abs(np.linalg.norm(verts, axis=1) - rho)) <= 1e-9
    assert np.max(np.abs(verts @ FACES.T)) <= rho + 1e-9
    # cube vertices sit exactly on faces
    cube = rho / np.sqrt(3.0) * np.array([[sx, sy, sz] for sx in (-1, 1)
                                          for sy in (-1, 1) for sz in (-1, 1)])
    assert np.max(np.abs(cube @ FACES.T)) == pytest.approx(rho, abs=1e-12)

    rng = np.random.default_rng(100)
    pts = rng.uniform(-rho, rho, size=(400000, 3))
    pts = pts[np.all(np.abs(pts @ FACES.T) <= rho, axis=1)][:100000]
    assert pts.shape[0] == 100000
    fails = int(np.sum(np.linalg.norm(pts, axis=1) > rho))
    assert fails == 0
    ok("geometry", f"(100000 members inside the sphere, 0 failures)")


def test_state_to_input_mapping_oracles(model):
    rng = np.random.default_rng(200)
    rho_now, rho_next = 9.0, 8.4
    viol_ad = viol_eta = -np.inf
    for _ in range(10000):
        x = np.zeros(12)
        for idx in (om.IDX_AD, om.IDX_ETA):
            v = rng.uniform(-1.0, 1.0, 3) * rho_now / np.sqrt(3.0)
            x[idx] = v
        sa = om.map_ad_constraint(model, x, rho_next)
        se = om.map_eta_constraint(model, x, rho_next)
        u = _sample(rng, sa, rho_now)
        ad1 = model.ad_next(x[om.IDX_AD], x[om.IDX_ETA], u)
        viol_ad = max(viol_ad, om.dodecahedron_set(rho_next).violation(ad1))
        u = _sample(rng, se, rho_now)
        eta1 = model.eta_next(x[om.IDX_ETA], u)
        viol_eta = max(viol_eta, om.dodecahedron_set(rho_next).violation(eta1))
    assert viol_ad <= 1e-9 and viol_eta <= 1e-9
    ok("state-to-input-mapping",
       f"(10000 pairs, worst violations {viol_ad:.1e} / {viol_eta:.1e})")


def _sample(rng, slab, box):
    for _ in range(200):
        u = rng.uniform(-3 * box, 3 * box, 3)
        if slab.contains(u):
            return u
    return 0.5 * (slab.lo + slab.up) @ np.linalg.pinv(slab.faces).T


def test_feasibility_and_constant_inner_set(bench_setup, case_study):
    model = bench_setup.model
    rho_k = bench_setup.schedule.rho_k
    assert model.alpha + model.beta == pytest.approx(0.9098, abs=1e-4)
    assert feasibility_condition(rho_k, model.alpha, model.beta)
    rho_star = compute_rho_star(rho_k, model.alpha, model.beta)
    assert rho_star > 0

    header, diag = read_csv(case_study["outdir"] / "coupled" / "mpc_diag.csv")
    margin = np.min(diag[:, header.index("cert_set_margin")])
    assert margin >= -1e-9
    ok("feasibility-and-rho-star",
       f"(alpha+beta {model.alpha + model.beta:.4f}, rho* {rho_star:.3f}, "
       f"min face slack of the constant set {margin:.2e})")


def test_intersample_and_thrust(case_study):
    m = case_study["results"]["coupled"]
    header, st = read_csv(case_study["outdir"] / "coupled" / "states.csv")
    c = header.index
    ad = st[:, c("adx"):c("adx") + 3]
    rho = st[:, c("rho")]
    viol = float(np.max(np.abs(ad @ FACES.T) - rho[:, None]))
    assert viol <= 1e-6
    T = st[:, c("T")]
    assert np.all(T >= 0.0) and np.all(T <= 45.21)
    assert m.thrust_clamped_steps == 0
    ok("intersample-and-thrust",
       f"(50 sub-samples per interval, worst face excess {viol:.2e}, "
       f"thrust in [{T.min():.2f}, {T.max():.2f}])")


def test_mpc_solver_quality(cert, bench_setup, case_study):
    # every converged solve in every logged variant meets the KKT tolerance
    worst = 0.0
    for variant in ("coupled", "decoupled", "baseline"):
        header, diag = read_csv(case_study["outdir"] / variant / "mpc_diag.csv")
        conv = diag[:, header.index("converged")] > 0.5
        kkts = diag[conv, header.index("kkt_residual")]
        worst = max(worst, float(kkts.max()))
    assert worst <= 1e-6

    # small-instance oracle equivalence (N = 1 dense Newton, N = 2 box)
    from oracles import dense_newton_n1, enumeration_n2
    model = bench_setup.model
    config = MpcConfig(N=1, kkt_tol=1e-9, max_iter=200)
    rng = np.random.default_rng(77)
    worst_n1 = 0.0
    for _ in range(3):
        x0 = rng.normal(size=12)
        u_star = dense_newton_n1(cert, model, config.R, x0)
        sol = solve(config, cert, model, x0, np.array([200.0, 200.0]))
        assert sol.converged
        worst_n1 = max(worst_n1, float(np.max(np.abs(sol.U[0] - u_star))))
    assert worst_n1 <= 1e-6

    config2 = MpcConfig(variant="baseline", N=2, kkt_tol=1e-7, max_iter=200)
    x0 = np.zeros(12)
    x0[om.IDX_V] = [0.0, 1.2, 0.0]
    u_star, _, _ = enumeration_n2(cert, model, config2.Q, config2.R, x0, 3.0)
    sol = solve(config2, cert, model, x0, np.full(3, 3.0), rho_min_run=3.0)
    assert sol.converged
    worst_n2 = float(np.max(np.abs(sol.U.ravel() - u_star)))
    assert worst_n2 <= 1e-6

    # terminal-cost gradient against central finite differences
    rng = np.random.default_rng(78)
    worst_fd = 0.0
    for _ in range(5):
        x = rng.normal(size=12) * 2.0
        _, g, _ = terminal_cost(cert, x)
        eps = 1e-6
        for j in range(12):
            e = np.zeros(12)
            e[j] = eps
            fd = (terminal_cost(cert, x + e)[0]
                  - terminal_cost(cert, x - e)[0]) / (2 * eps)
            worst_fd = max(worst_fd, abs(fd - g[j]) / max(1.0, abs(g[j])))
    assert worst_fd <= 1e-6
    ok("mpc-solver",
       f"(max converged KKT {worst:.2e}, oracle gaps N1 {worst_n1:.1e} / "
       f"N2 {worst_n2:.1e}, gradient FD {worst_fd:.1e})")


def test_mpc_descent_regulation(hover_setup):
    config = MpcConfig(kkt_tol=1e-9, max_iter=200)
    model = hover_setup.model
    # constant-rho schedule long enough for 200 receding-horizon windows
    level = float(hover_setup.schedule.rho_k[0])
    sched = om.RhoSchedule(rho_of_t=lambda t: level / 0.999,
                           rho_k=np.full(200 + config.N + 2, level),
                           delta=1.0, Tmax=45.21, h=0.05, feasible=True)
    ctrl = OuterLoopMpc(config, hover_setup.cert, model, sched)
    x = np.zeros(12)
    x[om.IDX_P] = [1.0, 1.0, 1.0]
    x[om.IDX_V] = [0.5, -0.5, 0.5]
    prev_cost = prev_stage = None
    worst = -np.inf
    for k in range(200):
        u, diag, _ = ctrl.mpc_step(x, k)
        if prev_cost is not None:
            slack = diag.cost - prev_cost + prev_stage
            worst = max(worst, slack)
            assert slack <= 1e-6
        prev_cost = diag.cost
        prev_stage = float(x @ config.Q @ x)
        x = model.propagate(x, u)
    ok("mpc-descent", f"(200 steps, worst descent slack {worst:.2e})")


def test_case_study_reproduction(case_study):
    results = case_study["results"]
    c = results["coupled"].rmse_combined
    d = results["decoupled"].rmse_combined
    b = results["baseline"].rmse_combined
    assert c < d < b, f"ordering violated: {c:.3f}, {d:.3f}, {b:.3f}"
    assert 0.65 * 1.22 <= c <= 1.35 * 1.22, f"C-MPC RMSE {c:.3f} outside band"
    assert case_study["wall_time"] < 300.0
    ok("case-study",
       f"(combined RMSE {c:.3f} < {d:.3f} < {b:.3f}; "
       f"C-MPC within [{0.65 * 1.22:.2f}, {1.35 * 1.22:.2f}]; "
       f"full comparison in {case_study['wall_time']:.0f} s)")


def test_inner_loop_decay(bench_setup):
    from quadcascade.reference import flat_to_reference, hover_profile
    from quadcascade.so3 import exp_so3, rotation_angle
    from quadcascade.vehicle import (InnerLoopGains, PlantParams, QuadState,
                                     attitude_error, flatness_attitude,
                                     inner_loop_torque, integrate_rk4)
    params = PlantParams()
    gains = InnerLoopGains.from_scales(params.J)   # 30 J, 70 J, (4.5, 5, 5.5)
    traj = hover_profile()
    st = QuadState(p=np.array([0.0, 0.0, -10.0]), v=np.zeros(3),
                   R=exp_so3(np.deg2rad(30.0) * np.array([1.0, 0.0, 0.0])),
                   omega=np.zeros(3))
    dt = 1e-3
    settled_at = None
    for i in range(2000):
        ref = flat_to_reference(traj, params, i * dt)
        cmd = flatness_attitude(np.zeros(3), np.zeros(3), np.zeros(3), ref)
        tau = inner_loop_torque(st, ref, cmd, gains, params)
        st = integrate_rk4(st, params, min(max(cmd.T, 0.0), params.Tmax),
                           tau, dt)
        R_e, _ = attitude_error(st, ref, cmd)
        if settled_at is None and rotation_angle(R_e) < 1e-3:
            settled_at = (i + 1) * dt
    assert settled_at is not None and settled_at <= 2.0
    ref = flat_to_reference(traj, params, 2.0)
    cmd = flatness_attitude(np.zeros(3), np.zeros(3), np.zeros(3), ref)
    R_e, _ = attitude_error(st, ref, cmd)
    angle = rotation_angle(R_e)
    assert angle < 1e-3
    ok("inner-loop-decay",
       f"(30 deg settles below 1e-3 rad at t = {settled_at:.3f} s, "
       f"final angle {angle:.1e} rad)")


def test_timing_report(case_study):
    # indicative only: reported, not asserted
    lines = []
    for variant, m in case_study["results"].items():
        lines.append(f"{variant} avg {m.avg_solve_time * 1e3:.1f} ms "
                     f"(max {m.max_solve_time * 1e3:.0f} ms, "
                     f"avg {m.avg_iterations:.1f} iterations)")
    ok("timing-report", "(" + "; ".join(lines) + "; target < 50 ms)")
