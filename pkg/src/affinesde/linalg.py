"""Small dense linear algebra for the drift matrix.

Spectral abscissa / radius, the Lyapunov solve A^T M + M A = -I, matrix
exponentials, and fundamental solutions Psi'(t) = A(t) Psi(t) including the
Floquet monodromy matrix Psi(T) for periodic drifts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

from .model import ConstantDrift, PeriodicDrift, eval_drift


class StabilityError(ValueError):
    """Raised when an operation requires a stable drift and gets none."""


def spectral_abscissa(A) -> float:
    """Largest real part among the eigenvalues of A."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix entries must be finite")
    return float(np.max(np.linalg.eigvals(A).real))


def spectral_radius(C) -> float:
    """Largest eigenvalue modulus of C."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if not np.all(np.isfinite(C)):
        raise ValueError("matrix entries must be finite")
    return float(np.max(np.abs(np.linalg.eigvals(C))))


@dataclass(frozen=True)
class LyapunovSolution:
    M: np.ndarray
    residual: float


def solve_lyapunov(A) -> LyapunovSolution:
    """Solve A^T M + M A = -I for the positive definite M.

    Uses the Kronecker-vectorised linear system; requires the spectral
    abscissa of A to be negative (otherwise no positive definite solution
    exists and a StabilityError is raised).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    if spectral_abscissa(A) >= 0:
        raise StabilityError("Lyapunov solve requires all eigenvalues of A "
                             "to have negative real parts")
    I = np.eye(d)
    K = np.kron(I, A.T) + np.kron(A.T, I)
    m = np.linalg.solve(K, -I.reshape(-1))
    M = m.reshape(d, d)
    M = 0.5 * (M + M.T)
    residual = float(np.linalg.norm(A.T @ M + M @ A + I, ord="fro"))
    return LyapunovSolution(M=M, residual=residual)


def expm(A, t: float = 1.0) -> np.ndarray:
    """Matrix exponential exp(A t) (scaling and squaring)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    At = A * float(t)
    if not np.all(np.isfinite(At)):
        raise ValueError("A*t must be finite")
    out = scipy.linalg.expm(At)
    if not np.all(np.isfinite(out)):
        raise OverflowError("matrix exponential overflowed")
    return out


def fundamental_solution(drift, t_end: float, tol: float = 1e-10,
                         t_start: float = 0.0) -> np.ndarray:
    """Psi(t_end) for Psi'(t) = A(t) Psi(t), Psi(t_start) = I.

    Constant drifts short-circuit to the matrix exponential; time-dependent
    drifts use an adaptive embedded Runge-Kutta 4(5) integration at local
    tolerance tol.
    """
    if t_end < t_start:
        raise ValueError("t_end must be >= t_start")
    if isinstance(drift, ConstantDrift):
        return expm(drift.matrix, t_end - t_start)
    d = drift.d
    if t_end == t_start:
        return np.eye(d)

    def rhs(t, y):
        return (eval_drift(drift, t) @ y.reshape(d, d)).reshape(-1)

    sol = solve_ivp(rhs, (t_start, t_end), np.eye(d).reshape(-1),
                    method="RK45", rtol=tol, atol=tol)
    if not sol.success:
        raise RuntimeError(f"fundamental solution integration failed: {sol.message}")
    return sol.y[:, -1].reshape(d, d)


@dataclass(frozen=True)
class MonodromyResult:
    Psi_T: np.ndarray
    rho: float
    ode_tolerance: float


def monodromy(drift, tol: float = 1e-10) -> MonodromyResult:
    """Floquet monodromy Psi(T) and its spectral radius for a periodic drift."""
    if isinstance(drift, ConstantDrift):
        raise ValueError("monodromy needs a periodic drift; use expm for constant A")
    period = getattr(drift, "period", None)
    if period is None:
        raise ValueError("drift has no period")
    Psi_T = fundamental_solution(drift, period, tol=tol)
    det = float(np.linalg.det(Psi_T))
    if det == 0.0:
        raise RuntimeError("monodromy matrix is singular; integration failed")
    return MonodromyResult(Psi_T=Psi_T, rho=spectral_radius(Psi_T), ode_tolerance=tol)
