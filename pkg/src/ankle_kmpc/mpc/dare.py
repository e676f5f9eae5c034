"""Discrete-time algebraic Riccati equation and per-phase terminal weights."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DareError


def dare_residual(S, A, B, Q, R):
    """Frobenius norm of ``S - (A'SA - A'SB (R + B'SB)^-1 B'SA + Q)``."""
    return float(np.linalg.norm(S - _riccati_map(S, A, B, Q, R)))


def _riccati_map(S, A, B, Q, R):
    SA = S @ A
    BtSA = B.T @ SA
    gain = np.linalg.solve(R + B.T @ S @ B, BtSA)
    out = A.T @ SA - BtSA.T @ gain + Q
    return 0.5 * (out + out.T)


def _threshold(S, tol, rtol):
    return tol + rtol * float(np.linalg.norm(S)) if rtol else tol


def _check(A, B, Q, R):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    B = B.reshape(len(A), -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n, m = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (m, m):
        raise ConfigError(f"DARE dimensions disagree: A {A.shape}, B {B.shape}, "
                          f"Q {Q.shape}, R {R.shape}")
    if np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 0:
        raise ConfigError("R must be positive definite")
    return A, B, 0.5 * (Q + Q.T), 0.5 * (R + R.T)


def solve_dare(A, B, Q, R, tol=1e-10, max_iter=100_000, *, rtol=0.0, damping=1.0,
               method="fixed_point"):
    """Stabilizing solution of ``S = A'SA - A'SB (R + B'SB)^-1 B'SA + Q``.

    Parameters
    ----------
    A, B : array_like
        ``n x n`` dynamics and ``n x m`` input matrices.
    Q, R : array_like
        State weight (PSD) and input weight (PD).
    tol, rtol : float
        Stop once the fixed-point residual is at most ``tol + rtol * ||S||_F``.
    max_iter : int
        Iteration cap.
    damping : float
        Relaxation ``S <- (1 - d) S + d T(S)`` of the fixed-point map, ``0 < d <= 1``.
    method : {"fixed_point", "doubling"}
        Riccati value iteration started at ``S = Q``, or the structure-preserving
        doubling algorithm (quadratically convergent).

    Returns
    -------
    S : ndarray
        Symmetric positive semidefinite solution.

    Raises
    ------
    DareError
        If the iteration diverges or does not reach the tolerance; carries the
        last residual.
    """
    A, B, Q, R = _check(A, B, Q, R)
    if not 0 < damping <= 1:
        raise ConfigError("damping must lie in (0, 1]")
    if method == "fixed_point":
        S = Q.copy()
        for it in range(1, max_iter + 1):
            # overflow is the divergence signal checked right below
            with np.errstate(over="ignore", invalid="ignore"):
                T = _riccati_map(S, A, B, Q, R)
            if not np.all(np.isfinite(T)):
                raise DareError("Riccati iteration diverged; the model may not be stabilizable",
                                residual=float("inf"), iterations=it)
            step = float(np.linalg.norm(T - S))
            S = T if damping == 1.0 else (1 - damping) * S + damping * T
            if step <= 0.1 * _threshold(S, tol, rtol):
                break
    elif method == "doubling":
        n = len(A)
        Ak, Gk, Hk = A.copy(), B @ np.linalg.solve(R, B.T), Q.copy()
        eye = np.eye(n)
        for it in range(1, min(max_iter, 200) + 1):
            W = eye + Gk @ Hk
            WA = np.linalg.solve(W, Ak)
            WG = np.linalg.solve(W, Gk)
            H_new = Hk + Ak.T @ Hk @ WA
            Gk = Gk + Ak @ WG @ Ak.T
            Ak = Ak @ WA
            delta = float(np.linalg.norm(H_new - Hk))
            Hk = 0.5 * (H_new + H_new.T)
            Gk = 0.5 * (Gk + Gk.T)
            if not np.all(np.isfinite(Hk)):
                raise DareError("doubling iteration diverged; the model may not be stabilizable",
                                residual=float("inf"), iterations=it)
            if delta <= 1e-3 * _threshold(Hk, tol, rtol):
                break
        S = Hk
    else:
        raise ConfigError(f"unknown DARE method {method!r}")
    # one polishing pass of the exact map removes round-off left by either method
    S = _riccati_map(S, A, B, Q, R)
    res = dare_residual(S, A, B, Q, R)
    if not res <= _threshold(S, tol, rtol):
        raise DareError(f"DARE did not converge in {it} iterations (residual {res:.3e})",
                        residual=res, iterations=it)
    return S


def lqr_gain(A, B, S, R):
    """Feedback ``K`` of the law ``u = -K x`` for the Riccati solution ``S``."""
    A, B, _, R = _check(A, B, np.zeros((len(A), len(A))), R)
    return np.linalg.solve(R + B.T @ S @ B, B.T @ S @ A)
