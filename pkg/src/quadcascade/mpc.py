"""Outer-loop MPC: convex program with stage-quadratic cost, a
quadratic-plus-cubic terminal cost, and per-stage affine face constraints.

Three controller variants share one solver and differ only in the face
matrix and bound levels:

* ``coupled``   -- six dodecahedron faces at radius rho, with the two
  state-set memberships mapped onto the inputs (time-varying, coupled);
* ``decoupled`` -- per-axis bounds at rho/sqrt(3) (time-varying cube);
* ``baseline``  -- per-axis bounds at the run minimum of rho/sqrt(3)
  (time-invariant cube).

The solver is an in-house primal-dual interior-point method with
Mehrotra-style predictor/corrector steps.  The Newton systems are solved by
a Riccati backward sweep over the stages (the multiple-shooting transcription
keeps all predicted states as variables; dynamics equalities are eliminated
exactly), so each iteration costs O(N (nx + nu)^3).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .certificates import Certificate
from .outer_model import (AXIS_FACES, FACES, IDX_AD, IDX_ETA, DiscreteModel,
                          EmptyInputSetError, SlabSet, unified_input_set)

VARIANTS = ("coupled", "decoupled", "baseline")

# number of extra centrality correctors per iteration
GONDZIO_CORRECTORS = 2

# how far warm starts are pulled toward the saturated feedback rollout
WARM_BLEND = 0.01


@dataclass
class MpcConfig:
    N: int = 20
    Q: np.ndarray = field(default_factory=lambda: np.diag(
        [100, 1, 1, 1, 100, 1, 1, 1, 80, 1, 1, 1.0]))
    R: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01, 0.1]))
    variant: str = "coupled"
    kkt_tol: float = 1e-6
    max_iter: int = 100
    warm_start: bool = True

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if np.any(np.linalg.eigvalsh(self.Q) <= 0) or np.any(np.linalg.eigvalsh(self.R) <= 0):
            raise ValueError("Q and R must be positive definite")
        if self.kkt_tol <= 0 or self.max_iter <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class MpcSolution:
    U: np.ndarray            # N x nu
    X: np.ndarray            # (N+1) x nx
    cost: float
    kkt_residual: float
    iterations: int
    solve_time: float
    converged: bool
    slacks: np.ndarray       # N x nc, h - (Gx x + Gu u)


class MpcInfeasibleError(RuntimeError):
    """Should not occur when the feasibility condition holds; indicates a
    configuration error upstream."""


def terminal_cost(cert: Certificate, x):
    """Value, gradient and Hessian of V(x) = theta [x'Mq x + lam (x'Mc x)^1.5].

    The Hessian's singular factor is defined as 0 at x = 0 (V is C^2).
    """
    x = np.asarray(x, dtype=float)
    Mq, Mc, lam, th = cert.Mq, cert.Mc, cert.lam, cert.theta
    c = float(x @ Mc @ x)
    value = th * (float(x @ Mq @ x) + lam * c**1.5)
    mcx = Mc @ x
    sq = np.sqrt(c)
    grad = th * (2.0 * Mq @ x + 3.0 * lam * sq * mcx)
    if c > 0.0:
        hess = th * (2.0 * Mq + 3.0 * lam * (sq * Mc + np.outer(mcx, mcx) / sq))
    else:
        hess = th * 2.0 * Mq
    return value, grad, hess


def variant_faces(variant: str) -> np.ndarray:
    return FACES if variant == "coupled" else AXIS_FACES


def variant_levels(variant: str, rhos: np.ndarray, rho_min_run: float) -> np.ndarray:
    """Per-stage bound levels for a window of rho values."""
    rhos = np.asarray(rhos, dtype=float)
    if variant == "coupled":
        return rhos
    if variant == "decoupled":
        return rhos / np.sqrt(3.0)
    return np.full_like(rhos, rho_min_run / np.sqrt(3.0))


def variant_constraints(variant: str, rho_now: float, rho_next: float, x_i,
                        model: DiscreteModel, rho_min_run: Optional[float] = None
                        ) -> SlabSet:
    """Numeric input set at a given state, per variant (audit view)."""
    faces = variant_faces(variant)
    if variant == "baseline":
        if rho_min_run is None:
            raise ValueError("baseline needs the run-minimum rho")
        lvl = rho_min_run / np.sqrt(3.0)
        return unified_input_set(model, x_i, lvl, lvl, faces)
    if variant == "decoupled":
        rho_now, rho_next = rho_now / np.sqrt(3.0), rho_next / np.sqrt(3.0)
    return unified_input_set(model, x_i, rho_now, rho_next, faces)


def stage_rows(model: DiscreteModel, faces: np.ndarray, level_i: float,
               level_ip1: float):
    """Affine rows G_x x_i + G_u u_i <= rhs for one prediction step.

    Three families per face and sign: the direct input bound at level_i and
    the two next-state memberships (a_d, eta) at level_ip1 written through
    the closed-form one-step maps, so every row is affine in (x_i, u_i).
    """
    a, b = model.alpha, model.beta
    nf = faces.shape[0]
    F_ad = np.zeros((nf, 12))
    F_ad[:, IDX_AD] = faces
    F_eta = np.zeros((nf, 12))
    F_eta[:, IDX_ETA] = faces

    rows_x = [np.zeros((nf, 12)), np.zeros((nf, 12)),
              a * F_ad + b * F_eta, -(a * F_ad + b * F_eta),
              a * F_eta, -a * F_eta]
    rows_u = [faces, -faces,
              (1.0 - a - b) * faces, -(1.0 - a - b) * faces,
              (1.0 - a) * faces, -(1.0 - a) * faces]
    rhs = np.concatenate([np.full(2 * nf, level_i), np.full(4 * nf, level_ip1)])
    return np.vstack(rows_x), np.vstack(rows_u), rhs


def _fraction_to_boundary(v, dv, tau):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, tau * float(np.min(-v[neg] / dv[neg])))


def _solve_spd(E, rhs):
    try:
        return np.linalg.solve(E, rhs)
    except np.linalg.LinAlgError:
        # near-singular from extreme barrier weights; tiny Tikhonov retry
        bump = 1e-12 * max(float(np.trace(E)), 1.0)
        return np.linalg.solve(E + bump * np.eye(E.shape[0]), rhs)


def solve(config: MpcConfig, cert: Certificate, model: DiscreteModel,
          x0, rhos, rho_min_run: Optional[float] = None,
          warm: Optional[tuple] = None) -> MpcSolution:
    """Solve one receding-horizon problem from state x0.

    ``rhos`` holds rho_{i|k} for i = 0..N (length N+1); ``warm`` is an
    optional (X, U) pair used as the primal starting point.  Cold starts
    roll out the saturated certificate feedback, which is feasible for
    every constraint variant and keeps the terminal state (hence the
    cubic terminal gradient) moderate.
    """
    t_start = time.perf_counter()
    N = config.N
    Ad, Bd = model.Ad, model.Bd
    nx, nu = Ad.shape[0], Bd.shape[1]
    x0 = np.asarray(x0, dtype=float)
    rhos = np.asarray(rhos, dtype=float)
    if rhos.shape[0] != N + 1:
        raise ValueError("need N+1 rho values")

    faces = variant_faces(config.variant)
    levels = variant_levels(config.variant, rhos,
                            rhos.min() if rho_min_run is None else rho_min_run)
    nc = 6 * faces.shape[0]
    Gx = np.empty((N, nc, nx))
    Gu = np.empty((N, nc, nu))
    hv = np.empty((N, nc))
    for i in range(N):
        Gx[i], Gu[i], hv[i] = stage_rows(model, faces, levels[i], levels[i + 1])

    # dynamics-feasible primal start; warm starts are blended a little
    # toward the (always feasible) saturated certificate feedback so the
    # initial point is strictly interior rather than on the boundary
    X = np.empty((N + 1, nx))
    X[0] = x0
    sat = cert.sat_level
    U = np.empty((N, nu))
    if warm is not None:
        Uw = np.array(warm[1], dtype=float)
        blend = WARM_BLEND
        for i in range(N):
            U[i] = (1 - blend) * Uw[i] + blend * np.clip(cert.K @ X[i], -sat, sat)
            X[i + 1] = Ad @ X[i] + Bd @ U[i]
    else:
        for i in range(N):
            U[i] = np.clip(cert.K @ X[i], -sat, sat)
            X[i + 1] = Ad @ X[i] + Bd @ U[i]

    def eval_g(Xv, Uv):
        return (np.einsum("icx,ix->ic", Gx, Xv[:N])
                + np.einsum("icu,iu->ic", Gu, Uv))

    gval = eval_g(X, U)
    scale = max(float(np.median(hv)), 1e-6)
    s = np.maximum(hv - gval, 0.01 * scale)

    Q2, R2 = 2.0 * config.Q, 2.0 * config.R

    # duals start at the scale needed to balance the bare gradient; a tiny
    # start forces the central path to climb many orders of magnitude
    adj0 = terminal_cost(cert, X[N])[1]
    stat0 = 0.0
    for i in range(N - 1, -1, -1):
        stat0 = max(stat0, float(np.abs(R2 @ U[i] + Bd.T @ adj0).max()))
        adj0 = Q2 @ X[i] + Ad.T @ adj0
    z = np.full_like(s, max(1.0, stat0 / (nc * scale)))
    mu = float((s * z).mean())

    def kkt_residual(gval_, gN_):
        # stationarity via the adjoint recursion that zeroes the state
        # equations exactly, plus primal violation and mean centrality
        adj = gN_
        stat = 0.0
        for i in range(N - 1, -1, -1):
            ru = R2 @ U[i] + Gu[i].T @ z[i] + Bd.T @ adj
            stat = max(stat, float(np.abs(ru).max()))
            adj = Q2 @ X[i] + Gx[i].T @ z[i] + Ad.T @ adj
        pviol = max(0.0, float((gval_ - hv).max()))
        return stat, pviol, max(stat, pviol, mu)

    best = None
    kkt = np.inf
    converged = False
    steps = 0
    stalls = 0

    while True:
        _, gN, HN = terminal_cost(cert, X[N])
        stat_last, pviol_last, kkt = kkt_residual(gval, gN)
        if best is None or kkt < best[0]:
            best = (kkt, X.copy(), U.copy())
        if kkt <= config.kkt_tol:
            converged = True
            break
        if steps >= config.max_iter:
            break
        steps += 1

        rineq = gval + s - hv
        s = np.maximum(s, 1e-280)      # keep divisions representable
        z = np.maximum(z, 1e-280)
        W = np.clip(z / s, 1e-10, 1e12)

        # matrix Riccati sweep, shared by predictor and corrector
        P = HN
        Ks = np.empty((N, nu, nx))
        Es = np.empty((N, nu, nu))
        Gts = np.empty((N, nx, nu))
        for i in range(N - 1, -1, -1):
            Wi = W[i][:, None]
            Hxx = Q2 + Gx[i].T @ (Wi * Gx[i])
            Huu = R2 + Gu[i].T @ (Wi * Gu[i])
            Hxu = Gx[i].T @ (Wi * Gu[i])
            PB = P @ Bd
            F = Hxx + Ad.T @ (P @ Ad)
            Gm = Hxu + Ad.T @ PB
            E = Huu + Bd.T @ PB
            Ki = -_solve_spd(E, Gm.T)
            Ei = _solve_spd(E, np.eye(nu))
            P = F + Gm @ Ki
            P = 0.5 * (P + P.T)
            Ks[i], Es[i], Gts[i] = Ki, Ei, Gm

        def newton_step(target, corr, homogeneous=False):
            # target multipliers z+dz = (target - corr)/s - W ds with
            # ds = -rineq - (Gx dx + Gu du) substituted into stationarity;
            # the homogeneous form solves for a pure centrality adjustment
            # (zero gradient/feasibility right-hand sides)
            y = (target - corr) / s
            if not homogeneous:
                y = y + W * rineq
            pv = np.zeros(nx) if homogeneous else gN
            kv = np.empty((N, nu))
            for i in range(N - 1, -1, -1):
                f = Gx[i].T @ y[i] + Ad.T @ pv
                e = Gu[i].T @ y[i] + Bd.T @ pv
                if not homogeneous:
                    f = f + Q2 @ X[i]
                    e = e + R2 @ U[i]
                kv[i] = -(Es[i] @ e)
                pv = f + Gts[i] @ kv[i]
            dX = np.zeros((N + 1, nx))
            dU = np.empty((N, nu))
            for i in range(N):
                dU[i] = Ks[i] @ dX[i] + kv[i]
                dX[i + 1] = Ad @ dX[i] + Bd @ dU[i]
            dg = (np.einsum("icx,ix->ic", Gx, dX[:N])
                  + np.einsum("icu,iu->ic", Gu, dU))
            ds = -dg if homogeneous else -rineq - dg
            dz = (target - corr) / s - W * ds
            if not homogeneous:
                dz = dz - z
            return dX, dU, ds, dz

        if mu <= 0.5 * config.kkt_tol and pviol_last <= config.kkt_tol:
            # barrier already tight enough; polish stationarity with pure
            # Newton steps that hold the complementarity products (the
            # cubic terminal term re-excites stationarity quadratically,
            # so plain recentering dithers here)
            dX, dU, ds, dz = newton_step(s * z, 0.0)
            a = min(_fraction_to_boundary(s.ravel(), ds.ravel(), 0.9999),
                    _fraction_to_boundary(z.ravel(), dz.ravel(), 0.9999))
            X = X + a * dX
            U = U + a * dU
            s = s + a * ds
            z = z + a * dz
            gval = eval_g(X, U)
            mu = float((s * z).mean())
            continue

        # predictor (affine direction); equal primal/dual steps keep the
        # iterates near the central path
        dXa, dUa, dsa, dza = newton_step(0.0, 0.0)
        a_aff = min(_fraction_to_boundary(s.ravel(), dsa.ravel(), 1.0),
                    _fraction_to_boundary(z.ravel(), dza.ravel(), 1.0))
        mu_aff = float(((s + a_aff * dsa) * (z + a_aff * dza)).mean())
        sigma = min(1.0, max((mu_aff / mu) ** 3, 1e-4)) if mu > 0 else 0.0
        if stat_last <= 0.01 * mu and pviol_last <= 0.01 * mu:
            # essentially on the central path; force the barrier down even
            # when blocked affine steps make the Mehrotra estimate timid
            sigma = min(sigma, 0.1)

        # corrector with a safeguarded per-coordinate target (the raw
        # second-order term is unreliable when affine steps are short); the
        # barrier floor keeps slacks of active rows representable
        tau = max(0.99, 1.0 - mu)
        mu_target = max(sigma * mu, 0.01 * config.kkt_tol)
        target = np.clip(mu_target - dsa * dza, 0.1 * mu_target,
                         10.0 * mu_target)
        dX, dU, ds, dz = newton_step(target, 0.0)
        a = min(_fraction_to_boundary(s.ravel(), ds.ravel(), tau),
                _fraction_to_boundary(z.ravel(), dz.ravel(), tau))

        # extra centrality correctors: pull outlier products back toward
        # sigma*mu so single coordinates stop blocking the step
        for _extra in range(GONDZIO_CORRECTORS):
            if a >= 0.995:
                break
            a_try = min(1.0, a + 0.3)
            prod = (s + a_try * ds) * (z + a_try * dz)
            t = np.clip(prod, 0.1 * sigma * mu, 10.0 * sigma * mu)
            dX2, dU2, ds2, dz2 = newton_step(t - prod, 0.0, homogeneous=True)
            a_new = min(_fraction_to_boundary(s.ravel(), (ds + ds2).ravel(), tau),
                        _fraction_to_boundary(z.ravel(), (dz + dz2).ravel(), tau))
            if a_new < a + 0.03:
                break
            dX, dU, ds, dz = dX + dX2, dU + dU2, ds + ds2, dz + dz2
            a = a_new

        X = X + a * dX
        U = U + a * dU
        s = s + a * ds
        z = z + a * dz
        gval = eval_g(X, U)
        mu = float((s * z).mean())
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(z))):
            break
        stalls = stalls + 1 if a < 1e-8 else 0
        if stalls >= 3:
            break

    if not converged and best is not None:
        kkt, X, U = best

    cost = terminal_cost(cert, X[N])[0]
    for i in range(N):
        cost += float(X[i] @ config.Q @ X[i] + U[i] @ config.R @ U[i])
    slacks = hv - eval_g(X, U)
    return MpcSolution(U=U, X=X, cost=float(cost), kkt_residual=float(kkt),
                       iterations=steps, solve_time=time.perf_counter() - t_start,
                       converged=bool(converged), slacks=slacks)


@dataclass
class StepDiagnostics:
    k: int
    solve_time: float
    iterations: int
    kkt_residual: float
    cost: float
    active_faces: int
    converged: bool
    cert_set_margin: float


class OuterLoopMpc:
    """Receding-horizon controller wrapping the solver with warm starts."""

    def __init__(self, config: MpcConfig, cert: Certificate,
                 model: DiscreteModel, schedule):
        self.config = config
        self.cert = cert
        self.model = model
        self.schedule = schedule
        self.rho_min_run = float(np.min(schedule.rho_k))
        self._prev: Optional[MpcSolution] = None
        self.failures = 0

    def reset(self):
        self._prev = None
        self.failures = 0

    def _warm(self):
        if not self.config.warm_start or self._prev is None:
            return None
        X, U = self._prev.X, self._prev.U
        Xw = np.vstack([X[1:], X[-1]])
        Uw = np.vstack([U[1:], U[-1]])
        return Xw, Uw

    def mpc_step(self, x_k, k: int):
        """Solve at sample k and return (u_applied, diagnostics)."""
        rhos = self.schedule.window(k, self.config.N)
        sol = solve(self.config, self.cert, self.model, x_k, rhos,
                    rho_min_run=self.rho_min_run, warm=self._warm())
        if not sol.converged:
            self.failures += 1
        self._prev = sol

        # active faces of the step-0 input set (bit j: face j at either bound)
        try:
            slab = variant_constraints(self.config.variant, rhos[0], rhos[1],
                                       x_k, self.model, self.rho_min_run)
            vals = slab.values(sol.U[0])
            mask = 0
            for j in range(len(vals)):
                if vals[j] >= slab.up[j] - 1e-6 or vals[j] <= slab.lo[j] + 1e-6:
                    mask |= 1 << j
        except EmptyInputSetError:
            mask = -1

        margin = np.nan
        if self.config.variant == "coupled":
            margin = self._cert_set_margin(sol, rhos)
        diag = StepDiagnostics(k=k, solve_time=sol.solve_time,
                               iterations=sol.iterations,
                               kkt_residual=sol.kkt_residual, cost=sol.cost,
                               active_faces=mask, converged=sol.converged,
                               cert_set_margin=float(margin))
        return sol.U[0].copy(), diag, sol

    def _cert_set_margin(self, sol: MpcSolution, rhos) -> float:
        """Worst slack of the certified dodecahedron (radius rho*) inside the
        time-varying unified sets along the predicted trajectory."""
        rs = self.cert.rho_star
        worst = np.inf
        for i in range(self.config.N):
            slab = unified_input_set(self.model, sol.X[i], rhos[i], rhos[i + 1])
            worst = min(worst, float(np.min(slab.up - rs)),
                        float(np.min(-rs - slab.lo)))
        return worst
