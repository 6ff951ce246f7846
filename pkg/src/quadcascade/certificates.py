"""Stability certificate for the marginally stable outer-loop model.

The bundle collects the two Lyapunov matrices (M_c for the open marginal
system, M_q for the small-gain closed loop), the small-gain feedback
(kappa, K), the cubic-term weight lambda, the terminal-cost scale theta,
and the saturation data (L_u, rho_star).  Every quantity is validated by
residual checks so a certificate object is evidence, not just numbers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import schur, solve_sylvester


class CertificateError(RuntimeError):
    """Construction failed or a validity residual is out of tolerance."""


@dataclass(frozen=True)
class Certificate:
    Mc: np.ndarray          # SPD, Ad' Mc Ad - Mc <= 0
    Mq: np.ndarray          # SPD, Acl' Mq Acl - Mq = -I
    K: np.ndarray           # small-gain feedback, 3x12
    kappa: float
    lam: float              # weight of the cubic Lyapunov term
    theta: float            # terminal-cost scale
    Lu: float
    rho_star: float
    residuals: dict = field(default_factory=dict)

    @property
    def sat_level(self) -> float:
        """Component-wise saturation bound rho*/sqrt(3) (inscribed cube)."""
        return self.rho_star / np.sqrt(3.0)

    def W(self, x) -> float:
        """Global Lyapunov function x'Mq x + lam (x'Mc x)^(3/2)."""
        x = np.asarray(x, dtype=float)
        return float(x @ self.Mq @ x + self.lam * (x @ self.Mc @ x) ** 1.5)

    def to_json(self) -> str:
        doc = {
            "Mc": self.Mc.ravel().tolist(),
            "Mq": self.Mq.ravel().tolist(),
            "K": self.K.ravel().tolist(),
            "kappa": self.kappa,
            "lam": self.lam,
            "theta": self.theta,
            "Lu": self.Lu,
            "rho_star": self.rho_star,
            "residuals": self.residuals,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Certificate":
        doc = json.loads(text)
        n = int(round(len(doc["Mc"]) ** 0.5))
        return cls(
            Mc=np.array(doc["Mc"]).reshape(n, n),
            Mq=np.array(doc["Mq"]).reshape(n, n),
            K=np.array(doc["K"]).reshape(-1, n),
            kappa=doc["kappa"],
            lam=doc["lam"],
            theta=doc["theta"],
            Lu=doc["Lu"],
            rho_star=doc["rho_star"],
            residuals=doc["residuals"],
        )


def solve_discrete_lyapunov(A, tol: float = 1e-14, max_iter: int = 200):
    """Solve A' M A - M = -I by the squaring (doubling) iteration.

    M = sum_k (A')^k A^k; each pass adds A_j' M A_j and squares A_j, so the
    partial sums double in order.  Requires spectral radius < 1.
    """
    A = np.asarray(A, dtype=float)
    M = np.eye(A.shape[0])
    Aj = A.copy()
    prev_inc = np.inf
    for _ in range(max_iter):
        inc = Aj.T @ M @ Aj
        inc_norm = np.linalg.norm(inc, "fro")
        if not np.isfinite(inc_norm) or inc_norm > max(prev_inc * 4.0, 1e12):
            raise CertificateError("Lyapunov iteration diverged (spectral radius >= 1?)")
        M = M + inc
        if inc_norm <= tol * np.linalg.norm(M, "fro"):
            return 0.5 * (M + M.T)
        Aj = Aj @ Aj
        prev_inc = max(inc_norm, 1e-300)
    raise CertificateError("Lyapunov iteration did not converge")


def compute_Mc(Ad, unit_tol: float = 1e-8):
    """SPD matrix with Ad' Mc Ad - Mc <= 0 for a marginally stable Ad.

    Real Schur form with the unit-circle invariant subspace ordered first;
    identity weight on that subspace, a discrete Lyapunov solve (RHS -I) on
    the strictly stable complement, decoupled by a Sylvester solve and
    recombined through the inverse similarity.
    """
    Ad = np.atleast_2d(np.asarray(Ad, dtype=float))
    n = Ad.shape[0]
    eigs = np.linalg.eigvals(Ad)
    if np.any(np.abs(eigs) > 1.0 + unit_tol):
        raise CertificateError(
            f"eigenvalue outside the closed unit disk: max |lambda| = {np.abs(eigs).max():.12g}")

    T, Z, k = schur(Ad, output="real",
                    sort=lambda re, im: re * re + im * im >= (1.0 - unit_tol) ** 2)
    if k == 0:
        return solve_discrete_lyapunov(Ad)

    T11, T12, T22 = T[:k, :k], T[:k, k:], T[k:, k:]
    # semisimple unit-circle block must be orthogonal for the identity weight
    if np.linalg.norm(T11.T @ T11 - np.eye(k), "fro") > 1e-8:
        raise CertificateError("defective (non-semisimple) unit-circle eigenvalue")

    M_tilde = np.eye(n)
    if k < n:
        Y = solve_sylvester(T11, -T22, -T12)       # T11 Y - Y T22 = -T12
        S = np.eye(n)
        S[:k, k:] = Y
        P = Z @ S
        M_tilde[k:, k:] = solve_discrete_lyapunov(T22)
    else:
        P = Z
    Pinv = np.linalg.inv(P)
    Mc = Pinv.T @ M_tilde @ Pinv
    Mc = 0.5 * (Mc + Mc.T)

    res = np.max(np.linalg.eigvalsh(Ad.T @ Mc @ Ad - Mc))
    if res > 1e-8:
        raise CertificateError(f"Mc residual {res:.3g} exceeds 1e-8")
    return Mc


def compute_small_gain(Ad, Bd, Mc, margin: float = 0.9):
    """Stabilizing small gain: kappa = margin / lam_max(Bd' Mc Bd), K = -kappa Bd' Mc Ad."""
    Ad = np.atleast_2d(np.asarray(Ad, dtype=float))
    Bd = np.asarray(Bd, dtype=float).reshape(Ad.shape[0], -1)
    lmax = float(np.max(np.linalg.eigvalsh(Bd.T @ Mc @ Bd)))
    if lmax <= 0.0:
        raise CertificateError("Bd' Mc Bd is singular (degenerate input)")
    kappa = margin / lmax
    K = -kappa * (Bd.T @ Mc @ Ad)
    sr = np.max(np.abs(np.linalg.eigvals(Ad + Bd @ K)))
    if sr >= 1.0:
        raise CertificateError(f"closed loop not Schur stable (spectral radius {sr:.6g})")
    return kappa, K


def compute_Mq(Acl, tol: float = 1e-10):
    """SPD solution of Acl' Mq Acl - Mq = -I, verified to Frobenius residual tol."""
    Acl = np.atleast_2d(np.asarray(Acl, dtype=float))
    Mq = solve_discrete_lyapunov(Acl)
    res = np.linalg.norm(Acl.T @ Mq @ Acl - Mq + np.eye(Acl.shape[0]), "fro")
    if res > tol:
        raise CertificateError(f"Mq residual {res:.3g} exceeds {tol:.1g}")
    return Mq


def build_certificate(Ad, Bd, Q, R, rho_star: float) -> Certificate:
    """Assemble and validate the full stability bundle.

    L_u = 1.1 sqrt(3) / rho* (so L_u rho*/sqrt(3) = 1.1 > 1),
    lambda = 2 kappa L_u sigma_max(Ad' Mq Bd) / sqrt(lam_min(Mc)),
    theta  = lam_max(Q + kappa^2 Ad' Mc Bd R Bd' Mc Ad), taken with equality.
    """
    if rho_star <= 0.0:
        raise CertificateError("rho_star must be positive")
    Ad = np.atleast_2d(np.asarray(Ad, dtype=float))
    Bd = np.asarray(Bd, dtype=float).reshape(Ad.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))

    Mc = compute_Mc(Ad)
    kappa, K = compute_small_gain(Ad, Bd, Mc)
    Acl = Ad + Bd @ K
    Mq = compute_Mq(Acl)

    Lu = 1.1 * np.sqrt(3.0) / rho_star
    smax = float(np.max(np.linalg.svd(Ad.T @ Mq @ Bd, compute_uv=False)))
    lam = 2.0 * kappa * Lu * smax / np.sqrt(np.min(np.linalg.eigvalsh(Mc)))
    G = Ad.T @ Mc @ Bd
    theta = float(np.max(np.linalg.eigvalsh(Q + kappa**2 * G @ R @ G.T)))

    residuals = {
        "mc_lmi": float(np.max(np.linalg.eigvalsh(Ad.T @ Mc @ Ad - Mc))),
        "mq_lyapunov": float(np.linalg.norm(Acl.T @ Mq @ Acl - Mq + np.eye(Ad.shape[0]), "fro")),
        "kappa_margin": float(np.max(np.linalg.eigvalsh(kappa * (Bd.T @ Mc @ Bd) - np.eye(Bd.shape[1])))),
        "closed_loop_radius": float(np.max(np.abs(np.linalg.eigvals(Acl)))),
    }
    cert = Certificate(Mc=Mc, Mq=Mq, K=K, kappa=kappa, lam=float(lam),
                       theta=theta, Lu=float(Lu), rho_star=float(rho_star),
                       residuals=residuals)
    validate_certificate(cert, Ad, Bd, Q, R)
    return cert


def validate_certificate(cert: Certificate, Ad, Bd, Q, R) -> None:
    """Re-check every certificate invariant; raise CertificateError on failure."""
    Ad = np.atleast_2d(np.asarray(Ad, dtype=float))
    Bd = np.asarray(Bd, dtype=float).reshape(Ad.shape[0], -1)
    n = Ad.shape[0]
    Acl = Ad + Bd @ cert.K

    if np.max(np.linalg.eigvalsh(Ad.T @ cert.Mc @ Ad - cert.Mc)) > 1e-8:
        raise CertificateError("Mc LMI residual exceeds 1e-8")
    if np.max(np.linalg.eigvalsh(cert.kappa * (Bd.T @ cert.Mc @ Bd) - np.eye(Bd.shape[1]))) >= 0.0:
        raise CertificateError("kappa Bd' Mc Bd is not strictly below identity")
    if np.linalg.norm(Acl.T @ cert.Mq @ Acl - cert.Mq + np.eye(n), "fro") > 1e-6:
        raise CertificateError("Mq Lyapunov residual exceeds 1e-6")
    if not cert.Lu * cert.rho_star / np.sqrt(3.0) > 1.0:
        raise CertificateError("Lu rho*/sqrt(3) must exceed 1")
    G = Ad.T @ cert.Mc @ Bd
    theta_min = np.max(np.linalg.eigvalsh(np.asarray(Q) + cert.kappa**2 * G @ np.asarray(R) @ G.T))
    if cert.theta < theta_min - 1e-9 * max(1.0, abs(theta_min)):
        raise CertificateError("theta is below its lower bound")
    if np.min(np.linalg.eigvalsh(cert.Mc)) <= 0 or np.min(np.linalg.eigvalsh(cert.Mq)) <= 0:
        raise CertificateError("Mc or Mq not positive definite")


def lyapunov_decrease_check(cert: Certificate, Ad, Bd, x, u_max: float) -> float:
    """Delta = W(Ad x + Bd sat(Kx)) - W(x) + |x|^2; <= 0 for a valid bundle."""
    x = np.asarray(x, dtype=float)
    u = np.clip(cert.K @ x, -u_max, u_max)
    x_next = np.asarray(Ad) @ x + np.asarray(Bd) @ u
    return cert.W(x_next) - cert.W(x) + float(x @ x)
