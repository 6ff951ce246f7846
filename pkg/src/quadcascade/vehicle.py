"""Nonlinear quadcopter plant, flatness-based attitude commands, and the
geometric inner-loop torque law.

World frame is NED (gravity along +z, altitude is -z); R maps body to world
and the thrust, normalized by mass, acts along -z_B:

    p' = v
    v' = g z_G - T z_B - D v
    R' = R S(omega)
    J omega' = S(J omega) omega - tau_g - A R'v - C omega + tau
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .reference import ReferencePoint
from .so3 import exp_so3, hat, heading_frame, project_so3, rotation_angle

Z_G = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class PlantParams:
    g: float = 9.81
    # inertia is given in gram-meter^2; stored here in kg m^2
    J: np.ndarray = field(default_factory=lambda: 1e-3 * np.diag([2.5, 2.1, 4.3]))
    D: np.ndarray = field(default_factory=lambda: np.array([0.26, 0.28, 0.42]))
    A_aero: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(3))
    C_aero: np.ndarray = field(default_factory=lambda: 0.5 * np.eye(3))
    tau_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    Tmax: float = 45.21
    delta: float = 1.0
    gamma: float = 0.1


@dataclass
class QuadState:
    p: np.ndarray
    v: np.ndarray
    R: np.ndarray
    omega: np.ndarray

    def copy(self):
        return QuadState(self.p.copy(), self.v.copy(), self.R.copy(),
                         self.omega.copy())


@dataclass(frozen=True)
class AttitudeCommand:
    """World-frame attitude command derived from the desired acceleration.

    Rd e3 is parallel to the commanded thrust vector a_d + Tbar zbar_B;
    omega_d / omega_d_dot are the body rates of Rd(t).
    """

    T: float
    Rd: np.ndarray
    omega_d: np.ndarray
    omega_d_dot: np.ndarray


@dataclass(frozen=True)
class InnerLoopGains:
    K_omega: np.ndarray
    K_R: np.ndarray
    k: np.ndarray

    @classmethod
    def from_scales(cls, J, kw_scale=30.0, kr_scale=70.0, k=(4.5, 5.0, 5.5)):
        J = np.asarray(J, dtype=float)
        return cls(K_omega=kw_scale * J, K_R=kr_scale * J, k=np.asarray(k, dtype=float))


def plant_derivative(state: QuadState, params: PlantParams, T: float, tau):
    """Time derivatives (p_dot, v_dot, R_dot, omega_dot) of the rigid body."""
    R, omega, v = state.R, state.omega, state.v
    p_dot = v
    v_dot = params.g * Z_G - T * R[:, 2] - params.D * v
    R_dot = R @ hat(omega)
    Jw = np.asarray(params.J) @ omega
    omega_dot = np.linalg.solve(params.J, (
        hat(Jw) @ omega - params.tau_g - params.A_aero @ (R.T @ v)
        - params.C_aero @ omega + np.asarray(tau)))
    return p_dot, v_dot, R_dot, omega_dot


def _flat_deriv(state, params, T, tau):
    # derivatives of the flat states (p, v, omega) only; rotation handled
    # separately by the exponential map
    _, v_dot, _, omega_dot = plant_derivative(state, params, T, tau)
    return state.v, v_dot, omega_dot


def integrate_rk4(state: QuadState, params: PlantParams, T: float, tau,
                  dt: float) -> QuadState:
    """One classical RK4 step; the rotation advances by the exponential map
    of the RK4-weighted average body rate and is polar-reprojected to SO(3).
    """
    p, v, R, w = state.p, state.v, state.R, state.omega

    k1p, k1v, k1w = _flat_deriv(state, params, T, tau)
    s2 = QuadState(p + 0.5 * dt * k1p, v + 0.5 * dt * k1v,
                   R @ exp_so3(0.5 * dt * w), w + 0.5 * dt * k1w)
    k2p, k2v, k2w = _flat_deriv(s2, params, T, tau)
    s3 = QuadState(p + 0.5 * dt * k2p, v + 0.5 * dt * k2v,
                   R @ exp_so3(0.5 * dt * s2.omega), w + 0.5 * dt * k2w)
    k3p, k3v, k3w = _flat_deriv(s3, params, T, tau)
    s4 = QuadState(p + dt * k3p, v + dt * k3v,
                   R @ exp_so3(dt * s3.omega), w + dt * k3w)
    k4p, k4v, k4w = _flat_deriv(s4, params, T, tau)

    p_new = p + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    v_new = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    w_new = w + dt / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
    w_avg = (w + 2 * s2.omega + 2 * s3.omega + s4.omega) / 6.0
    R_new = project_so3(R @ exp_so3(dt * w_avg))
    return QuadState(p_new, v_new, R_new, w_new)


def flatness_attitude(a_d, a_d_dot, a_d_ddot, ref: ReferencePoint) -> AttitudeCommand:
    """Convert a desired acceleration (plus two derivatives) into an
    attitude command.

    The commanded thrust vector is f = a_d + Tbar zbar_B; T = |f|, the
    desired frame comes from the z-axis/heading construction evaluated at
    the reference heading, and the body rates follow from its analytic
    derivatives.
    """
    f = np.asarray(a_d, dtype=float) + ref.f
    f_dot = np.asarray(a_d_dot, dtype=float) + ref.f_dot
    f_ddot = np.asarray(a_d_ddot, dtype=float) + ref.f_ddot
    T, _, Rd, omega_d, omega_d_dot = heading_frame(
        f, f_dot, f_ddot, ref.psi, ref.psi_dot, ref.psi_ddot)
    return AttitudeCommand(T=T, Rd=Rd, omega_d=omega_d, omega_d_dot=omega_d_dot)


def relative_command(ref: ReferencePoint, cmd: AttitudeCommand):
    """Desired rotation/rates expressed relative to the reference attitude.

    Rd_rel = Rbar' Rd; its body rate is omega_d - Rd_rel' wbar and the rate
    derivative follows from differentiating that transport.
    """
    Rd_rel = ref.Rbar.T @ cmd.Rd
    omega_d_rel = cmd.omega_d - Rd_rel.T @ ref.wbar
    omega_d_rel_dot = (cmd.omega_d_dot + hat(omega_d_rel) @ (Rd_rel.T @ ref.wbar)
                       - Rd_rel.T @ ref.wbar_dot)
    return Rd_rel, omega_d_rel, omega_d_rel_dot


def attitude_error(state: QuadState, ref: ReferencePoint, cmd: AttitudeCommand):
    """Error rotation R_e = Rd_rel' Rtilde and rate error omega_e."""
    R_tilde = ref.Rbar.T @ state.R
    Rd_rel, omega_d_rel, _ = relative_command(ref, cmd)
    R_e = Rd_rel.T @ R_tilde
    omega_e = state.omega - R_tilde.T @ ref.wbar - R_e.T @ omega_d_rel
    return R_e, omega_e


def restoring_term(R_e, k):
    """sum_i k_i (e_i x R_e' e_i), the attitude feedback direction."""
    out = np.zeros(3)
    eye = np.eye(3)
    for i in range(3):
        out += k[i] * np.cross(eye[i], R_e.T[:, i])
    return out


def inner_loop_torque(state: QuadState, ref: ReferencePoint,
                      cmd: AttitudeCommand, gains: InnerLoopGains,
                      params: PlantParams):
    """Feedback/feedforward torque of the geometric attitude controller.

    Cancels the body torque terms, feeds the reference rotational dynamics
    forward through Rtilde, applies the transport terms of the desired
    frame, and closes the loop so that

        J omega_e' = -K_omega omega_e + K_R sum_i k_i (e_i x R_e' e_i).
    """
    J = np.asarray(params.J, dtype=float)
    R, omega, v = state.R, state.omega, state.v
    R_tilde = ref.Rbar.T @ R
    Rd_rel, omega_d_rel, omega_d_rel_dot = relative_command(ref, cmd)
    R_e = Rd_rel.T @ R_tilde
    omega_e = omega - R_tilde.T @ ref.wbar - R_e.T @ omega_d_rel

    feedback = -gains.K_omega @ omega_e + gains.K_R @ restoring_term(R_e, gains.k)
    cancel = -hat(J @ omega) @ omega + params.tau_g + params.A_aero @ (R.T @ v) \
        + params.C_aero @ omega
    ref_ff = J @ (R_tilde.T @ np.linalg.solve(J, (
        hat(J @ ref.wbar) @ ref.wbar - params.tau_g
        - params.A_aero @ (ref.Rbar.T @ ref.vbar)
        - params.C_aero @ ref.wbar + ref.taubar)))
    transport = J @ ((hat(omega) @ R_tilde.T - R_tilde.T @ hat(ref.wbar)) @ ref.wbar
                     + hat(omega_e) @ (R_e.T @ omega_d_rel)
                     - R_e.T @ omega_d_rel_dot)
    return feedback + cancel + ref_ff - transport


def so3_drift(R) -> float:
    """Frobenius distance of R'R from the identity."""
    return float(np.linalg.norm(R.T @ R - np.eye(3), "fro"))


def attitude_error_angle(R_e) -> float:
    return rotation_angle(R_e)
