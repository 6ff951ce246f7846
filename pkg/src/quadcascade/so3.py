"""Rotation-matrix helpers: skew maps, exponential map, polar projection,
and the z-axis/heading frame construction with analytic derivatives.

The frame construction takes a (nonvanishing) thrust-direction vector f and a
heading angle psi, together with their first two time derivatives, and returns
the rotation R = [x_B y_B z_B] with z_B = f/|f|, plus body rate and body-rate
derivative consistent with R(t).  It is shared by the reference generator
(f = g z_G - abar - D vbar, zero acceleration error) and the attitude command
converter (f = a_d + Tbar zbar_B).
"""

from __future__ import annotations

import numpy as np


def hat(a):
    """Skew-symmetric matrix S(a) with S(a) b = a x b."""
    return np.array([
        [0.0, -a[2], a[1]],
        [a[2], 0.0, -a[0]],
        [-a[1], a[0], 0.0],
    ])


def vee(S):
    """Inverse of hat for a skew-symmetric matrix."""
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def skew_part(M):
    return 0.5 * (M - M.T)


def exp_so3(phi):
    """Rodrigues formula for expm(hat(phi))."""
    angle = np.linalg.norm(phi)
    S = hat(phi)
    if angle < 1e-12:
        # second-order series; error O(angle^3) is below double roundoff here
        return np.eye(3) + S + 0.5 * (S @ S)
    c1 = np.sin(angle) / angle
    c2 = (1.0 - np.cos(angle)) / angle**2
    return np.eye(3) + c1 * S + c2 * (S @ S)


def project_so3(M):
    """Nearest rotation matrix (polar factor, det forced to +1)."""
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return R


def rotation_angle(R):
    """Geodesic angle of a rotation matrix, in [0, pi]."""
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


class DegenerateHeadingError(ValueError):
    """Thrust axis parallel to the heading direction; frame is undefined."""


def _unit_with_derivs(w, wd, wdd):
    # y = w/|w| with first and second derivatives
    n = np.linalg.norm(w)
    y = w / n
    nd = y @ wd
    yd = (wd - nd * y) / n
    ndd = yd @ wd + y @ wdd
    ydd = (wdd - 2.0 * nd * yd - ndd * y) / n
    return y, yd, ydd, n


def heading_frame(f, f_dot, f_ddot, psi, psi_dot, psi_ddot):
    """Rotation + body rates from a thrust-axis vector and heading angle.

    Returns (T, T_dot, R, omega, omega_dot) where T = |f|, z_B = f/T, the
    x_B axis has heading angle psi when projected on the horizontal plane,
    R_dot = R S(omega) and omega_dot is the analytic derivative of omega.

    Raises DegenerateHeadingError when z_B is (near) parallel to the
    horizontal heading direction, where the construction is singular.
    """
    z, zd, zdd, T = _unit_with_derivs(f, f_dot, f_ddot)
    Td = z @ f_dot

    cp, sp = np.cos(psi), np.sin(psi)
    xc = np.array([cp, sp, 0.0])
    xcd = psi_dot * np.array([-sp, cp, 0.0])
    xcdd = psi_ddot * np.array([-sp, cp, 0.0]) + psi_dot**2 * np.array([-cp, -sp, 0.0])

    w = np.cross(z, xc)
    if np.linalg.norm(w) < 1e-6:
        raise DegenerateHeadingError("thrust axis parallel to heading direction")
    wd = np.cross(zd, xc) + np.cross(z, xcd)
    wdd = np.cross(zdd, xc) + 2.0 * np.cross(zd, xcd) + np.cross(z, xcdd)
    y, yd, ydd, _ = _unit_with_derivs(w, wd, wdd)

    x = np.cross(y, z)
    xd = np.cross(yd, z) + np.cross(y, zd)
    xdd = np.cross(ydd, z) + 2.0 * np.cross(yd, zd) + np.cross(y, zdd)

    R = np.column_stack([x, y, z])
    Rd = np.column_stack([xd, yd, zd])
    Rdd = np.column_stack([xdd, ydd, zdd])

    omega = vee(skew_part(R.T @ Rd))
    # R^T Rdd = S(omega)^2 + S(omega_dot); the first term is symmetric
    omega_dot = vee(skew_part(R.T @ Rdd))
    return float(T), float(Td), R, omega, omega_dot
