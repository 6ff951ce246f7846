"""Twelve-state translational error model and its constraint geometry.

State layout is per-axis blocks ``[p_err, v_err, a_d, eta]`` for x, y, z in
turn, i.e. index 4*axis + (0..3).  The continuous model per axis is

    p_err' = v_err
    v_err' = -d * v_err + a_d
    a_d'   = -(a_d - eta) / gamma
    eta'   = -(eta - s) / gamma

with s the held input.  Exact ZOH discretization gives the closed forms
a_d+ = alpha a_d + beta eta + (1-alpha-beta) s and eta+ = alpha eta +
(1-alpha) s with alpha = exp(-h/gamma), beta = (h/gamma) exp(-h/gamma).

The admissible-acceleration geometry is a dodecahedron inscribed in the
sphere of radius rho: six face functionals sqrt(3)/PHI^2 * u_m +/-
sqrt(3)/PHI * u_n over the cyclic index pairs (1,2), (2,3), (3,1), each
bounded by rho in absolute value.  The cube |u_i| <= rho/sqrt(3) is the
largest cube inside it (decoupled constraints).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import block_diag, expm

PHI = (1.0 + np.sqrt(5.0)) / 2.0

# index helpers into the 12-vector
IDX_P = np.array([0, 4, 8])
IDX_V = np.array([1, 5, 9])
IDX_AD = np.array([2, 6, 10])
IDX_ETA = np.array([3, 7, 11])

#: 6x3 face matrix of the dodecahedron: rows j=1..6 pair (m,n) in
#: {(1,2),(2,3),(3,1)} with sign (-1)^(j+1) on the second coefficient.
FACES = np.zeros((6, 3))
for _j, (_m, _n) in enumerate([(0, 1), (0, 1), (1, 2), (1, 2), (2, 0), (2, 0)]):
    FACES[_j, _m] = np.sqrt(3.0) / PHI**2
    FACES[_j, _n] = (1.0 if _j % 2 == 0 else -1.0) * np.sqrt(3.0) / PHI
FACES.setflags(write=False)

#: 3x3 face matrix of the axis-aligned (decoupled) box |u_i| <= level.
AXIS_FACES = np.eye(3)
AXIS_FACES.setflags(write=False)


class InfeasibleReferenceError(ValueError):
    """rho(t) <= 0: the reference violates the thrust feasibility margins."""


class EmptyInputSetError(RuntimeError):
    """The unified input set has lo > up on some face (Theorem-2 violation)."""


@dataclass(frozen=True)
class DiscreteModel:
    """Exact ZOH discretization of the 12-state error model."""

    Ad: np.ndarray
    Bd: np.ndarray
    h: float
    gamma: float
    alpha: float
    beta: float
    D: np.ndarray

    def propagate(self, x, u):
        return self.Ad @ x + self.Bd @ u

    def ad_next(self, a_d, eta, u):
        """Closed-form one-step map of the a_d block."""
        return self.alpha * a_d + self.beta * eta + (1.0 - self.alpha - self.beta) * u

    def eta_next(self, eta, u):
        return self.alpha * eta + (1.0 - self.alpha) * u


@dataclass(frozen=True)
class SlabSet:
    """Paired lower/upper bounds on a fixed set of face functionals.

    ``faces`` is the row matrix of functionals (6x3 dodecahedron rows or
    3x3 axis rows); membership means lo_j <= faces[j] @ u <= up_j for all j.
    """

    faces: np.ndarray
    lo: np.ndarray
    up: np.ndarray

    def values(self, u):
        return self.faces @ np.asarray(u, dtype=float)

    def contains(self, u, tol=0.0):
        v = self.values(u)
        return bool(np.all(v <= self.up + tol) and np.all(v >= self.lo - tol))

    def violation(self, u):
        """Largest constraint violation (<= 0 means member)."""
        v = self.values(u)
        return float(max(np.max(v - self.up), np.max(self.lo - v)))

    def is_empty(self):
        return bool(np.any(self.lo > self.up))


@dataclass
class RhoSchedule:
    """Admissible-radius schedule rho(t) and its per-interval minima."""

    rho_of_t: Callable[[float], float]
    rho_k: np.ndarray              # rho_{0|k} on the h-grid, k = 0..K-1
    delta: float
    Tmax: float
    h: float
    feasible: bool = field(default=False)

    def interval_min(self, k: int) -> float:
        return float(self.rho_k[k])

    def window(self, k: int, n: int) -> np.ndarray:
        """rho_{i|k} for i = 0..n (length n+1)."""
        return self.rho_k[k:k + n + 1]


def discretize(gamma: float, h: float, D) -> DiscreteModel:
    """Exact ZOH discretization via the matrix exponential of [[A, B], [0, 0]].

    Per-axis 4x4 blocks are identical up to the drag coefficient.
    """
    if gamma <= 0 or h <= 0:
        raise ValueError("gamma and h must be positive")
    D = np.asarray(D, dtype=float)
    if D.ndim == 2:
        D = np.diag(D)
    if np.any(D <= 0):
        raise ValueError("drag coefficients must be positive")

    blocks_A, blocks_B = [], []
    for d in D:
        Ac = np.array([
            [0.0, 1.0, 0.0, 0.0],
            [0.0, -d, 1.0, 0.0],
            [0.0, 0.0, -1.0 / gamma, 1.0 / gamma],
            [0.0, 0.0, 0.0, -1.0 / gamma],
        ])
        Bc = np.array([[0.0], [0.0], [0.0], [1.0 / gamma]])
        M = np.zeros((5, 5))
        M[:4, :4] = Ac
        M[:4, 4:] = Bc
        E = expm(M * h)
        blocks_A.append(E[:4, :4])
        blocks_B.append(E[:4, 4:])

    Ad = block_diag(*blocks_A)
    Bd = np.zeros((12, 3))
    for a in range(3):
        Bd[4 * a:4 * a + 4, a] = blocks_B[a][:, 0]

    alpha = float(np.exp(-h / gamma))
    beta = float((h / gamma) * np.exp(-h / gamma))
    return DiscreteModel(Ad=Ad, Bd=Bd, h=h, gamma=gamma, alpha=alpha, beta=beta, D=D)


def rho_of_t(Tbar_of_t, Tmax: float, delta: float, t: float) -> float:
    """Admissible acceleration radius min(Tbar(t) - delta, Tmax - Tbar(t))."""
    Tb = float(Tbar_of_t(t))
    rho = min(Tb - delta, Tmax - Tb)
    if rho <= 0.0:
        raise InfeasibleReferenceError(
            f"rho(t) = {rho:.4g} <= 0 at t = {t:.4g} (Tbar = {Tb:.4g})")
    return rho


def rho_interval_min(rho_fn, t_lo: float, t_hi: float, n_grid: int = 101,
                     safety: float = 0.999) -> float:
    """Grid minimum of rho over [t_lo, t_hi], shrunk by a safety factor.

    The grid includes both endpoints; the 0.999 factor absorbs grid error.
    """
    if not t_lo < t_hi:
        raise ValueError("t_lo must be < t_hi")
    ts = np.linspace(t_lo, t_hi, max(n_grid, 2))
    return safety * min(float(rho_fn(t)) for t in ts)


def dodecahedron_set(rho: float) -> SlabSet:
    """Symmetric dodecahedron with circumscribed sphere of radius rho."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    up = np.full(6, float(rho))
    return SlabSet(faces=FACES, lo=-up, up=up)


def cube_set(level: float) -> SlabSet:
    """Axis-aligned cube |u_i| <= level (the decoupled constraint region)."""
    up = np.full(3, float(level))
    return SlabSet(faces=AXIS_FACES, lo=-up, up=up)


def dodecahedron_vertices(rho: float) -> np.ndarray:
    """The 20 vertices of dodecahedron_set(rho), all at distance rho.

    Eight cube vertices (+-1, +-1, +-1) and twelve points of the cyclic
    family (0, +-PHI, +-1/PHI), scaled by rho/sqrt(3).
    """
    verts = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                verts.append([sx, sy, sz])
    base = [0.0, PHI, 1.0 / PHI]
    for shift in range(3):
        for s1 in (-1, 1):
            for s2 in (-1, 1):
                v = [0.0, s1 * PHI, s2 / PHI]
                verts.append(np.roll(v, shift))
    return rho / np.sqrt(3.0) * np.asarray(verts)


def _face_vals(x_block):
    """Apply the six face functionals to one 3-vector block."""
    return FACES @ np.asarray(x_block, dtype=float)


def map_ad_constraint(model: DiscreteModel, x_i, rho_next: float,
                      faces=None) -> SlabSet:
    """Input bounds that keep the next-step a_d block inside the face set.

    For each face j the admissible input functional range is
    (1-alpha-beta)^-1 [ +-rho_next - alpha c_j.a_d - beta c_j.eta ].
    """
    a, b = model.alpha, model.beta
    if not 1.0 - a - b > 0.0:
        raise ValueError("alpha + beta must be < 1 (h > 0)")
    faces = FACES if faces is None else faces
    x_i = np.asarray(x_i, dtype=float)
    fa = faces @ x_i[IDX_AD]
    fe = faces @ x_i[IDX_ETA]
    scale = 1.0 / (1.0 - a - b)
    up = scale * (rho_next - a * fa - b * fe)
    lo = scale * (-rho_next - a * fa - b * fe)
    return SlabSet(faces=faces, lo=lo, up=up)


def map_eta_constraint(model: DiscreteModel, x_i, rho_next: float,
                       faces=None) -> SlabSet:
    """Input bounds that keep the next-step eta block inside the face set."""
    a = model.alpha
    if not a < 1.0:
        raise ValueError("alpha must be < 1 (h > 0)")
    faces = FACES if faces is None else faces
    x_i = np.asarray(x_i, dtype=float)
    fe = faces @ x_i[IDX_ETA]
    scale = 1.0 / (1.0 - a)
    up = scale * (rho_next - a * fe)
    lo = scale * (-rho_next - a * fe)
    return SlabSet(faces=faces, lo=lo, up=up)


def unified_input_set(model: DiscreteModel, x_i, rho_now: float,
                      rho_next: float, faces=None) -> SlabSet:
    """Intersection of the direct input set with both mapped state sets.

    Raises EmptyInputSetError when some face has lo > up, which the
    feasibility condition is supposed to preclude; an empty set here
    indicates a configuration error upstream.
    """
    faces = FACES if faces is None else faces
    sa = map_ad_constraint(model, x_i, rho_next, faces)
    se = map_eta_constraint(model, x_i, rho_next, faces)
    lo = np.maximum(np.maximum(sa.lo, se.lo), -rho_now)
    up = np.minimum(np.minimum(sa.up, se.up), rho_now)
    out = SlabSet(faces=faces, lo=lo, up=up)
    if out.is_empty():
        j = int(np.argmax(lo - up))
        raise EmptyInputSetError(
            f"face {j}: lo = {lo[j]:.6g} > up = {up[j]:.6g} "
            f"(rho_now = {rho_now:.6g}, rho_next = {rho_next:.6g})")
    return out


def feasibility_condition(rho_k: Sequence[float], alpha: float, beta: float) -> bool:
    """True iff rho(k+1) > (alpha + beta) rho(k) over the whole schedule."""
    r = np.asarray(rho_k, dtype=float)
    if np.any(r <= 0):
        raise ValueError("rho schedule must be positive")
    return bool(np.all(r[1:] > (alpha + beta) * r[:-1]))


def compute_rho_star(rho_k: Sequence[float], alpha: float, beta: float) -> float:
    """Largest constant dodecahedron radius inside every unified input set.

    rho* = min( (1-a-b)^-1 min_k [rho(k+1) - (a+b) rho(k)],
                (1-a)^-1   min_k [rho(k+1) - a rho(k)],
                min_k rho(k) ).
    """
    r = np.asarray(rho_k, dtype=float)
    if not feasibility_condition(r, alpha, beta):
        raise InfeasibleReferenceError(
            "rho(k+1) > (alpha+beta) rho(k) fails; rho* would be <= 0")
    t1 = np.min(r[1:] - (alpha + beta) * r[:-1]) / (1.0 - alpha - beta)
    t2 = np.min(r[1:] - alpha * r[:-1]) / (1.0 - alpha)
    t3 = np.min(r)
    return float(min(t1, t2, t3))


def intersample_ad(model: DiscreteModel, a_d, eta, u, dt):
    """a_d(t_k + dt) under the held input u (exact continuous solution)."""
    a = np.exp(-dt / model.gamma)
    b = (dt / model.gamma) * np.exp(-dt / model.gamma)
    return a * np.asarray(a_d) + b * np.asarray(eta) + (1.0 - a - b) * np.asarray(u)


def intersample_check(model: DiscreteModel, x_k, u_k, rho_fn, t_k: float,
                      n_sub: int = 20, tol: float = 1e-9) -> bool:
    """Dodecahedron membership of a_d(t) at n_sub points inside one interval."""
    x_k = np.asarray(x_k, dtype=float)
    a_d, eta = x_k[IDX_AD], x_k[IDX_ETA]
    for q in range(1, n_sub + 1):
        dt = model.h * q / (n_sub + 1)
        at = intersample_ad(model, a_d, eta, u_k, dt)
        if not dodecahedron_set(float(rho_fn(t_k + dt))).contains(at, tol=tol):
            return False
    return True


def slab_csv_rows(schedule: RhoSchedule, slabs: Sequence[SlabSet]):
    """Rows (k, rho_k, lo_1..lo_J, up_1..up_J) for offline geometry dumps."""
    rows = []
    for k, s in enumerate(slabs):
        rows.append([k, schedule.rho_k[k], *s.lo, *s.up])
    return rows
