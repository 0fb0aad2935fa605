"""Linear noise approximation: macroscopic ODE and covariance dynamics.

The concentration vector phi (8 proportions) follows dphi/dt = S a(phi),
and the concentration-scale covariance C follows

    dC/dt = C A^T + A C + B,

with A the Jacobian of the macroscopic right-hand side and
B = S diag(a(phi)) S^T.  Both are propagated jointly by an embedded
adaptive Dormand-Prince 4(5) pair over the 8 + 36 (upper triangle)
coupled equations, with the triangle storage keeping C exactly symmetric.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import FixedConstants, KineticParams, propensities

__all__ = [
    "IntegratorConfig",
    "LnaDivergenceError",
    "macroscopic_rhs",
    "jacobian_A",
    "diffusion_B",
    "covariance_rhs",
    "integrate_lna",
    "floor_covariance",
]

_TRIU = np.triu_indices(8)
_NY = 8 + 36


class LnaDivergenceError(RuntimeError):
    """Integration exceeded its step budget or produced non-finite values."""


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = 0.25      # years
    max_steps: int = 10_000

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_step <= 0 or self.max_steps <= 0:
            raise ValueError("max_step and max_steps must be positive")


def macroscopic_rhs(phi, theta: KineticParams, k: FixedConstants) -> np.ndarray:
    """Time derivative of the 8 compartment proportions."""
    phi = np.asarray(phi, dtype=float)
    return _phi_rhs(phi, theta.beta1, theta.beta2, theta.sigma1, theta.sigma2,
                    k.gamma, k.mu)


def jacobian_A(phi, theta: KineticParams, k: FixedConstants) -> np.ndarray:
    """Analytic Jacobian of ``macroscopic_rhs`` with respect to phi."""
    phi = np.asarray(phi, dtype=float)
    return _jac_A(phi, theta.beta1, theta.beta2, theta.sigma1, theta.sigma2,
                  k.gamma, k.mu)


def diffusion_B(phi, theta: KineticParams, k: FixedConstants) -> np.ndarray:
    """Diffusion matrix S diag(a(phi)) S^T at concentration scale.

    Built generically from the stoichiometric matrix and the propensity
    vector; the hand-written entries used inside the integrator kernel are
    tested against this construction.
    """
    from .model import _build_stoichiometry
    S = _build_stoichiometry().astype(float)
    a = propensities(phi, theta, k, omega=1.0)
    return (S * a) @ S.T


def covariance_rhs(C, A, B) -> np.ndarray:
    """Right-hand side C A^T + A C + B of the covariance ODE."""
    AC = A @ C
    return AC + AC.T + B


@njit(cache=True)
def _phi_rhs(phi, b1, b2, s1, s2, g, mu):
    lam1 = phi[1] + phi[6]
    lam2 = phi[3] + phi[4]
    f = np.empty(8)
    f[0] = mu - b2 * lam2 * phi[0] - b1 * lam1 * phi[0] - mu * phi[0]
    f[1] = b1 * lam1 * phi[0] - (g + mu) * phi[1]
    f[2] = g * phi[1] - s2 * b2 * lam2 * phi[2] - mu * phi[2]
    f[3] = b2 * lam2 * phi[0] - (g + mu) * phi[3]
    f[4] = s2 * b2 * lam2 * phi[2] - (g + mu) * phi[4]
    f[5] = g * phi[3] - mu * phi[5] - s1 * b1 * lam1 * phi[5]
    f[6] = s1 * b1 * lam1 * phi[5] - (g + mu) * phi[6]
    f[7] = g * phi[6] + g * phi[4] - mu * phi[7]
    return f


@njit(cache=True)
def _jac_A(phi, b1, b2, s1, s2, g, mu):
    lam1 = phi[1] + phi[6]
    lam2 = phi[3] + phi[4]
    A = np.zeros((8, 8))
    A[0, 0] = -(b2 * lam2 + b1 * lam1 + mu)
    A[0, 1] = -b1 * phi[0]
    A[0, 3] = -b2 * phi[0]
    A[0, 4] = -b2 * phi[0]
    A[0, 6] = -b1 * phi[0]

    A[1, 0] = b1 * lam1
    A[1, 1] = b1 * phi[0] - (g + mu)
    A[1, 6] = b1 * phi[0]

    A[2, 1] = g
    A[2, 2] = -(s2 * b2 * lam2 + mu)
    A[2, 3] = -s2 * b2 * phi[2]
    A[2, 4] = -s2 * b2 * phi[2]

    A[3, 0] = b2 * lam2
    A[3, 3] = b2 * phi[0] - (g + mu)
    A[3, 4] = b2 * phi[0]

    A[4, 2] = s2 * b2 * lam2
    A[4, 3] = s2 * b2 * phi[2]
    A[4, 4] = s2 * b2 * phi[2] - (g + mu)

    A[5, 1] = -s1 * b1 * phi[5]
    A[5, 3] = g
    A[5, 5] = -(s1 * b1 * lam1 + mu)
    A[5, 6] = -s1 * b1 * phi[5]

    A[6, 1] = s1 * b1 * phi[5]
    A[6, 5] = s1 * b1 * lam1
    A[6, 6] = s1 * b1 * phi[5] - (g + mu)

    A[7, 4] = g
    A[7, 6] = g
    A[7, 7] = -mu
    return A


@njit(cache=True)
def _diff_B(phi, b1, b2, s1, s2, g, mu):
    lam1 = phi[1] + phi[6]
    lam2 = phi[3] + phi[4]
    a2 = b2 * lam2 * phi[0]
    a3 = b1 * lam1 * phi[0]
    a8 = s2 * b2 * lam2 * phi[2]
    a14 = s1 * b1 * lam1 * phi[5]
    B = np.zeros((8, 8))
    B[0, 0] = mu + a2 + a3 + mu * phi[0]
    B[0, 1] = -a3
    B[0, 3] = -a2
    B[1, 1] = a3 + (g + mu) * phi[1]
    B[1, 2] = -g * phi[1]
    B[2, 2] = g * phi[1] + mu * phi[2] + a8
    B[2, 4] = -a8
    B[3, 3] = a2 + (g + mu) * phi[3]
    B[3, 5] = -g * phi[3]
    B[4, 4] = a8 + (g + mu) * phi[4]
    B[4, 7] = -g * phi[4]
    B[5, 5] = g * phi[3] + mu * phi[5] + a14
    B[5, 6] = -a14
    B[6, 6] = a14 + (g + mu) * phi[6]
    B[6, 7] = -g * phi[6]
    B[7, 7] = g * phi[4] + g * phi[6] + mu * phi[7]
    # mirror to the lower triangle
    for i in range(8):
        for j in range(i + 1, 8):
            B[j, i] = B[i, j]
    return B


@njit(cache=True)
def _joint_rhs(y, b1, b2, s1, s2, g, mu):
    phi = y[:8]
    f = np.empty(_NY)
    f[:8] = _phi_rhs(phi, b1, b2, s1, s2, g, mu)
    A = _jac_A(phi, b1, b2, s1, s2, g, mu)
    B = _diff_B(phi, b1, b2, s1, s2, g, mu)
    C = np.empty((8, 8))
    idx = 8
    for i in range(8):
        for j in range(i, 8):
            C[i, j] = y[idx]
            C[j, i] = y[idx]
            idx += 1
    AC = A @ C
    dC = AC + AC.T + B
    idx = 8
    for i in range(8):
        for j in range(i, 8):
            f[idx] = dC[i, j]
            idx += 1
    return f


@njit(cache=True)
def _dopri5(y0, t0, t1, b1, b2, s1, s2, g, mu,
            rtol, atol, max_step, max_steps):
    """Embedded Dormand-Prince 4(5) on the joint phi/C system.

    Returns (y, status, n_steps) with status 0 on success, 1 when the step
    budget is exhausted, 2 on non-finite values.
    """
    n = y0.shape[0]
    y = y0.copy()
    t = t0
    h = min(max_step, t1 - t0)
    k1 = _joint_rhs(y, b1, b2, s1, s2, g, mu)
    steps = 0
    while t < t1:
        if steps >= max_steps:
            return y, 1, steps
        if t + h > t1:
            h = t1 - t
        y2 = y + h * (0.2 * k1)
        k2 = _joint_rhs(y2, b1, b2, s1, s2, g, mu)
        y3 = y + h * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2)
        k3 = _joint_rhs(y3, b1, b2, s1, s2, g, mu)
        y4 = y + h * (44.0 / 45.0 * k1 - 56.0 / 15.0 * k2 + 32.0 / 9.0 * k3)
        k4 = _joint_rhs(y4, b1, b2, s1, s2, g, mu)
        y5 = y + h * (19372.0 / 6561.0 * k1 - 25360.0 / 2187.0 * k2
                      + 64448.0 / 6561.0 * k3 - 212.0 / 729.0 * k4)
        k5 = _joint_rhs(y5, b1, b2, s1, s2, g, mu)
        y6 = y + h * (9017.0 / 3168.0 * k1 - 355.0 / 33.0 * k2
                      + 46732.0 / 5247.0 * k3 + 49.0 / 176.0 * k4
                      - 5103.0 / 18656.0 * k5)
        k6 = _joint_rhs(y6, b1, b2, s1, s2, g, mu)
        ynew = y + h * (35.0 / 384.0 * k1 + 500.0 / 1113.0 * k3
                        + 125.0 / 192.0 * k4 - 2187.0 / 6784.0 * k5
                        + 11.0 / 84.0 * k6)
        k7 = _joint_rhs(ynew, b1, b2, s1, s2, g, mu)
        # difference between the 5th and embedded 4th order solutions
        err = h * ((35.0 / 384.0 - 5179.0 / 57600.0) * k1
                   + (500.0 / 1113.0 - 7571.0 / 16695.0) * k3
                   + (125.0 / 192.0 - 393.0 / 640.0) * k4
                   + (-2187.0 / 6784.0 + 92097.0 / 339200.0) * k5
                   + (11.0 / 84.0 - 187.0 / 2100.0) * k6
                   - 1.0 / 40.0 * k7)
        errnorm = 0.0
        for i in range(n):
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            e = err[i] / sc
            errnorm += e * e
        errnorm = np.sqrt(errnorm / n)
        steps += 1
        if not np.isfinite(errnorm):
            return y, 2, steps
        if errnorm <= 1.0:
            t += h
            y = ynew
            k1 = k7  # FSAL
            if errnorm == 0.0:
                factor = 5.0
            else:
                factor = min(5.0, max(0.2, 0.9 * errnorm ** -0.2))
        else:
            factor = max(0.2, 0.9 * errnorm ** -0.2)
        h = min(h * factor, max_step)
    return y, 0, steps


def _pack(phi, C):
    y = np.empty(_NY)
    y[:8] = phi
    y[8:] = C[_TRIU]
    return y


def _unpack(y):
    phi = y[:8].copy()
    C = np.zeros((8, 8))
    C[_TRIU] = y[8:]
    C = C + C.T - np.diag(np.diag(C))
    return phi, C


def integrate_lna(phi0, C0, t0: float, t1: float, theta: KineticParams,
                  k: FixedConstants, cfg: IntegratorConfig = IntegratorConfig()):
    """Propagate (phi, C) from t0 to t1; returns the pair at t1.

    Raises :class:`LnaDivergenceError` when the step budget is exhausted or
    the solution leaves the finite range; callers treat this as log-likelihood
    minus infinity.
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    phi0 = np.asarray(phi0, dtype=float)
    C0 = np.asarray(C0, dtype=float)
    if t1 == t0:
        return phi0.copy(), C0.copy()
    y0 = _pack(phi0, C0)
    y, status, _ = _dopri5(y0, float(t0), float(t1),
                           theta.beta1, theta.beta2, theta.sigma1, theta.sigma2,
                           k.gamma, k.mu,
                           cfg.rel_tol, cfg.abs_tol, cfg.max_step, cfg.max_steps)
    if status != 0 or not np.all(np.isfinite(y)):
        raise LnaDivergenceError(
            f"LNA integration failed (status {status}) on [{t0}, {t1}]"
        )
    return _unpack(y)


def floor_covariance(C, rel_tol: float = 1e-9) -> np.ndarray:
    """Clip tiny negative eigenvalues of a nominally-PSD matrix to zero.

    Raises ValueError when an eigenvalue is more negative than ``rel_tol``
    times the spectral radius (genuinely broken covariance, not roundoff).
    """
    C = np.asarray(C, dtype=float)
    C = 0.5 * (C + C.T)
    w, V = np.linalg.eigh(C)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w[0] < -rel_tol * scale:
        raise ValueError(f"covariance indefinite: min eigenvalue {w[0]:.3e}")
    w = np.clip(w, 0.0, None)
    return (V * w) @ V.T
