"""Matrix equations for the offline design: DARE, discrete Lyapunov, linearization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFinite, NotConverged, NotPositiveDefinite, Unstable


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim < 2:
            B = B.reshape(A.shape[0], -1)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError(f"inconsistent shapes A{A.shape}, B{B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class CostMatrices:
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        for name in ("Q", "R", "P"):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            check_positive_definite(M, name)
            object.__setattr__(self, name, M)


def check_positive_definite(M, name="matrix"):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, rtol=0, atol=1e-9 * max(1.0, np.abs(M).max())):
        raise NotPositiveDefinite(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(0.5 * (M + M.T))
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(f"{name} is not positive definite") from None
    return M


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


def solve_dare(A, B, Q, R, tol=1e-10, max_iter=200_000):
    """Solve the discrete algebraic Riccati equation by value iteration.

    Returns ``(P, K)`` with the gain in the ``u = K x`` convention, i.e.
    ``K = -(R + B'PB)^{-1} B'PA``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = check_positive_definite(Q, "Q")
    R = check_positive_definite(R, "R")

    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ gain
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise NotConverged("Riccati iteration diverged")
        if np.max(np.abs(P_next - P)) <= tol:
            P = P_next
            break
        P = P_next
    else:
        raise NotConverged(f"Riccati iteration did not converge in {max_iter} steps")

    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if spectral_radius(A + B @ K) >= 1.0:
        raise NotConverged("Riccati fixed point does not stabilize (A, B)")
    return P, K


def dare_residual(A, B, Q, R, P) -> float:
    A = np.atleast_2d(A)
    B = np.asarray(B).reshape(A.shape[0], -1)
    S = R + B.T @ P @ B
    res = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(S, B.T @ P @ A) - P
    return float(np.max(np.abs(res)))


def solve_discrete_lyapunov(A_K, Q_rhs, tol=1e-9):
    """Solve ``A_K' P A_K - P = -Q_rhs`` through the Kronecker linear system."""
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    Q_rhs = check_positive_definite(Q_rhs, "Q_rhs")
    if spectral_radius(A_K) >= 1.0:
        raise Unstable(f"spectral radius {spectral_radius(A_K):.6g} >= 1")
    n = A_K.shape[0]
    # column-major vec: vec(A' P A) = kron(A', A') vec(P)
    lhs = np.eye(n * n) - np.kron(A_K.T, A_K.T)
    P = np.linalg.solve(lhs, Q_rhs.reshape(-1, order="F")).reshape(n, n, order="F")
    P = 0.5 * (P + P.T)
    res = lyapunov_residual(A_K, P, Q_rhs)
    if res > tol * max(1.0, np.abs(P).max()):
        raise NotConverged(f"Lyapunov residual {res:.3e} exceeds tolerance")
    check_positive_definite(P, "P")
    return P


def lyapunov_series(A_K, Q_rhs, tol=1e-13, max_iter=200):
    """Same equation via the doubling form of ``sum_k (A_K')^k Q A_K^k``."""
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    P = np.atleast_2d(np.asarray(Q_rhs, dtype=float)).copy()
    if spectral_radius(A_K) >= 1.0:
        raise Unstable(f"spectral radius {spectral_radius(A_K):.6g} >= 1")
    M = A_K.copy()
    for _ in range(max_iter):
        inc = M.T @ P @ M
        P = P + inc
        M = M @ M
        if np.max(np.abs(inc)) <= tol * max(1.0, np.abs(P).max()):
            return 0.5 * (P + P.T)
    raise NotConverged("Lyapunov series did not converge")


def lyapunov_residual(A_K, P, Q_rhs) -> float:
    return float(np.max(np.abs(A_K.T @ P @ A_K - P + Q_rhs)))


def numerical_jacobian(fmap, x0, u0, eps=1e-6):
    """Central-difference Jacobians ``(A, B)`` of ``fmap(x, u)`` at ``(x0, u0)``.

    The step for coordinate j is ``eps * max(1, |coordinate j|)``.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))

    def probe(x, u):
        y = np.atleast_1d(np.asarray(fmap(x, u), dtype=float))
        if not np.all(np.isfinite(y)):
            raise NonFinite(f"map returned non-finite values at x={x}, u={u}")
        return y

    def columns(point, shift):
        cols = []
        for j in range(point.size):
            h = eps * max(1.0, abs(point[j]))
            e = np.zeros_like(point)
            e[j] = h
            cols.append((probe(*shift(e)) - probe(*shift(-e))) / (2.0 * h))
        return np.column_stack(cols)

    A = columns(x0, lambda e: (x0 + e, u0))
    B = columns(u0, lambda e: (x0, u0 + e))
    return A, B
