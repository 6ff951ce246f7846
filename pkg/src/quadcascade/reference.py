"""Feasible reference generation from analytic flat profiles.

A flat profile supplies position (derivatives up to snap) and heading
(derivatives up to second order); differential flatness then determines the
full reference tuple (pbar, vbar, Rbar, wbar, Tbar, taubar).  The thrust
vector follows from the translational dynamics,

    Tbar zbar_B = g z_G - abar - D vbar,

and the attitude/heading frame plus its analytic derivatives give wbar,
wbar_dot and the torque that balances the rotational dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .outer_model import (InfeasibleReferenceError, RhoSchedule,
                          feasibility_condition, rho_interval_min)
from .so3 import hat, heading_frame


@dataclass(frozen=True)
class FlatTrajectory:
    """Analytic position/heading profile with hand-coded derivatives.

    position(t, order) returns the order-th time derivative of the position
    (orders 0..4), heading(t, order) the heading derivatives (orders 0..2).
    """

    position: Callable[[float, int], np.ndarray]
    heading: Callable[[float, int], float]
    horizon: float


@dataclass(frozen=True)
class ReferencePoint:
    """Full feasible-reference tuple at one time instant."""

    t: float
    pbar: np.ndarray
    vbar: np.ndarray
    Rbar: np.ndarray
    wbar: np.ndarray
    wbar_dot: np.ndarray
    Tbar: float
    taubar: np.ndarray
    zbar_B: np.ndarray
    psi: float
    psi_dot: float
    psi_ddot: float
    # thrust vector f = Tbar zbar_B and its first two derivatives, needed by
    # the attitude-command conversion of the desired acceleration
    f: np.ndarray
    f_dot: np.ndarray
    f_ddot: np.ndarray


def circular_profile(radius=2.0, omega_xy=4.0, z0=-10.0, z_amp=2.0,
                     omega_z=2.0, psi_rate=0.2, horizon=25.0) -> FlatTrajectory:
    """Built-in benchmark profile: horizontal circle with vertical bobbing.

    Defaults give p(t) = [2 cos 4t, 2 sin 4t, -10 + 2 sin 2t], psi = 0.2 t.
    """

    def position(t, order=0):
        wx, wz = omega_xy, omega_z
        c, s = np.cos(wx * t), np.sin(wx * t)
        cz, sz = np.cos(wz * t), np.sin(wz * t)
        if order == 0:
            return np.array([radius * c, radius * s, z0 + z_amp * sz])
        if order == 1:
            return np.array([-radius * wx * s, radius * wx * c, z_amp * wz * cz])
        if order == 2:
            return np.array([-radius * wx**2 * c, -radius * wx**2 * s,
                             -z_amp * wz**2 * sz])
        if order == 3:
            return np.array([radius * wx**3 * s, -radius * wx**3 * c,
                             -z_amp * wz**3 * cz])
        if order == 4:
            return np.array([radius * wx**4 * c, radius * wx**4 * s,
                             z_amp * wz**4 * sz])
        raise ValueError("position derivatives available up to order 4")

    def heading(t, order=0):
        if order == 0:
            return psi_rate * t
        if order == 1:
            return psi_rate
        if order == 2:
            return 0.0
        raise ValueError("heading derivatives available up to order 2")

    return FlatTrajectory(position=position, heading=heading, horizon=horizon)


def hover_profile(point=(0.0, 0.0, -10.0), psi=0.0, horizon=25.0) -> FlatTrajectory:
    p0 = np.asarray(point, dtype=float)

    def position(t, order=0):
        return p0.copy() if order == 0 else np.zeros(3)

    def heading(t, order=0):
        return psi if order == 0 else 0.0

    return FlatTrajectory(position=position, heading=heading, horizon=horizon)


def scaled_profile(traj: FlatTrajectory, factor: float) -> FlatTrajectory:
    """Position profile scaled by a factor (heading unchanged)."""
    return FlatTrajectory(
        position=lambda t, order=0: factor * traj.position(t, order),
        heading=traj.heading,
        horizon=traj.horizon,
    )


def flat_to_reference(traj: FlatTrajectory, params, t: float,
                      check_margins: bool = True) -> ReferencePoint:
    """Reference tuple at time t; raises if the thrust margin is violated.

    ``params`` needs g, D (drag diagonal), J, A_aero, C_aero, tau_g, Tmax
    and delta (margin used as epsilon_1 = epsilon_2).
    """
    D = np.asarray(params.D, dtype=float)
    z_G = np.array([0.0, 0.0, 1.0])

    pbar = traj.position(t, 0)
    vbar = traj.position(t, 1)
    abar = traj.position(t, 2)
    jbar = traj.position(t, 3)
    sbar = traj.position(t, 4)
    psi = float(traj.heading(t, 0))
    psi_d = float(traj.heading(t, 1))
    psi_dd = float(traj.heading(t, 2))

    f = params.g * z_G - abar - D * vbar
    f_dot = -jbar - D * abar
    f_ddot = -sbar - D * jbar
    if np.linalg.norm(f) <= 0.0:
        raise InfeasibleReferenceError("zero thrust vector on the reference")

    Tbar, _, Rbar, wbar, wbar_dot = heading_frame(f, f_dot, f_ddot, psi, psi_d, psi_dd)
    if check_margins and not params.delta < Tbar < params.Tmax - params.delta:
        raise InfeasibleReferenceError(
            f"Tbar = {Tbar:.4g} outside ({params.delta:.3g}, "
            f"{params.Tmax - params.delta:.4g}) at t = {t:.4g}")

    J = np.asarray(params.J, dtype=float)
    taubar = (J @ wbar_dot - hat(J @ wbar) @ wbar + np.asarray(params.tau_g)
              + np.asarray(params.A_aero) @ (Rbar.T @ vbar)
              + np.asarray(params.C_aero) @ wbar)

    return ReferencePoint(
        t=t, pbar=pbar, vbar=vbar, Rbar=Rbar, wbar=wbar, wbar_dot=wbar_dot,
        Tbar=Tbar, taubar=taubar, zbar_B=Rbar[:, 2], psi=psi, psi_dot=psi_d,
        psi_ddot=psi_dd, f=f, f_dot=f_dot, f_ddot=f_ddot)


def reference_thrust(traj: FlatTrajectory, params) -> Callable[[float], float]:
    """Tbar(t) without building the full reference point."""
    D = np.asarray(params.D, dtype=float)
    z_G = np.array([0.0, 0.0, 1.0])

    def Tbar(t):
        f = params.g * z_G - traj.position(t, 2) - D * traj.position(t, 1)
        return float(np.linalg.norm(f))

    return Tbar


def build_rho_schedule(traj: FlatTrajectory, params, delta: float, h: float,
                       horizon: float, gamma: float) -> RhoSchedule:
    """rho(t) callable plus per-interval minima on the h-grid over [0, horizon].

    Checks reference feasibility along the way and records whether the
    consecutive-interval feasibility condition holds for the given (h, gamma).
    """
    Tbar = reference_thrust(traj, params)
    Tmax = params.Tmax

    def rho(t):
        r = min(Tbar(t) - delta, Tmax - Tbar(t))
        if r <= 0.0:
            raise InfeasibleReferenceError(
                f"rho(t) = {r:.4g} <= 0 at t = {t:.4g} (Tbar = {Tbar(t):.4g})")
        return r

    n_k = int(np.ceil(horizon / h - 1e-9))
    rho_k = np.array([rho_interval_min(rho, k * h, (k + 1) * h) for k in range(n_k)])
    alpha = np.exp(-h / gamma)
    beta = (h / gamma) * np.exp(-h / gamma)
    feasible = feasibility_condition(rho_k, alpha, beta)
    return RhoSchedule(rho_of_t=rho, rho_k=rho_k, delta=delta, Tmax=Tmax,
                       h=h, feasible=feasible)
