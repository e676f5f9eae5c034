"""Projected-gradient solver for the condensed horizon problem."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import SolverSettings
from .problem import HorizonProblem


@dataclass
class MpcSolution:
    u: np.ndarray                   # optimal inputs u_0..u_{T-1}, mA
    predicted: np.ndarray           # (T, 2) predicted angle and velocity
    cost: float
    iterations: int
    residual: float                 # projected-gradient norm at exit
    terminal_ok: bool
    converged: bool
    solve_ms: float = 0.0
    terminal_value: float = 0.0
    cost_history: list = field(default_factory=list, repr=False)


_EPS = 8.0 * np.finfo(float).eps     # round-off slack of the decrease test


def _pg_residual(problem, U, grad):
    return float(np.linalg.norm(U - problem.project(U - grad)))


def _inner(problem: HorizonProblem, U, settings: SolverSettings, lam_box, lam_term, mu_box,
           mu_term, history):
    """Monotone projected gradient with Barzilai-Borwein steps and Armijo backtracking.

    The sufficient-decrease test uses the exact change of the quadratic part,
    ``d'(H U + g) + d'H d / 2``, rather than a difference of two cost values;
    the latter loses the decrease to round-off when the constant term dominates.
    """
    pen = lambda V: problem.penalty(V, lam_box, lam_term, mu_box, mu_term)  # noqa: E731
    H, g = problem.H, problem.g
    lip = problem.cond.lipschitz
    p, gp = pen(U)
    gq = H @ U + g
    grad = gq + gp
    f = float(0.5 * U @ (gq + g) + problem.c + p)
    history.append(f)
    alpha = 1.0 / lip
    res = _pg_residual(problem, U, grad)
    it = 0
    while it < settings.max_iter and res > settings.tol:
        it += 1
        accepted = False
        for _ in range(60):
            Un = problem.project(U - alpha * grad)
            d = Un - U
            Hd = H @ d
            pn, gpn = pen(Un)
            delta = float(d @ (gq + 0.5 * Hd)) + (pn - p)
            if delta <= settings.armijo * float(grad @ d) + _EPS * (1.0 + abs(p)):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        gq_n = H @ Un + g
        gn = gq_n + gpn
        s, y = d, gn - grad
        U, p, gq, grad = Un, pn, gq_n, gn
        f += delta
        history.append(f)
        res = _pg_residual(problem, U, grad)
        if settings.step_rule == "bb":
            sy = float(s @ y)
            alpha = float(s @ s) / sy if sy > 1e-300 else 1.0 / lip
            alpha = min(max(alpha, 1e-6 / lip), 1e6 / lip)
        else:
            alpha = 1.0 / lip
    return U, f, res, it


def solve_horizon(problem: HorizonProblem, warm_start=None, settings: SolverSettings = None,
                  record_timing=True) -> MpcSolution:
    """Minimize the horizon cost over the phase-wise input boxes.

    Soft mode minimizes the penalized cost once. Hard mode wraps the same
    inner solver in augmented-Lagrangian rounds until the predicted state box
    and terminal set hold within ``settings.constraint_tol``. Hitting the
    iteration limit returns the best iterate with ``converged = False``.
    """
    settings = settings or SolverSettings()
    t0 = time.perf_counter()
    T = problem.T
    U = np.zeros(T) if warm_start is None else np.asarray(warm_start, dtype=float).reshape(T)
    U = problem.project(U)
    history = []
    hard_box = problem.state_mode == "hard" and problem.finite_rows.size > 0
    hard_term = problem.terminal_mode == "hard"
    n_rows = problem.finite_rows.size
    lam_box = (np.zeros(n_rows), np.zeros(n_rows)) if hard_box else None
    lam_term = 0.0
    mu_box, mu_term = problem.state_penalty, problem.terminal_penalty
    total_it = 0
    rounds = settings.max_outer if (hard_box or hard_term) else 1
    for _ in range(rounds):
        U, f, res, it = _inner(problem, U, settings, lam_box, lam_term if hard_term else 0.0,
                               mu_box, mu_term, history)
        total_it += it
        if rounds == 1:
            break
        box, term = problem.violations(U)
        if box <= settings.constraint_tol and (term <= settings.constraint_tol or not hard_term):
            break
        if hard_box:
            y = problem.cond.Gy[problem.finite_rows] @ U + problem.fy[problem.finite_rows]
            lam_box = (np.maximum(0.0, lam_box[0] + mu_box * (y - problem.y_hi[problem.finite_rows])),
                       np.maximum(0.0, lam_box[1] + mu_box * (problem.y_lo[problem.finite_rows] - y)))
            mu_box *= 4.0
        if hard_term:
            lam_term = max(0.0, lam_term + mu_term * (problem.terminal_value(U) - problem.epsilon))
            mu_term *= 4.0
    converged = res <= settings.tol
    if hard_box or hard_term:
        box, term = problem.violations(U)
        converged = converged and box <= settings.constraint_tol and (
            term <= settings.constraint_tol or not hard_term)
    ms = (time.perf_counter() - t0) * 1e3 if record_timing else 0.0
    V = problem.terminal_value(U)
    return MpcSolution(U, problem.outputs(U), problem.objective(U)[0], total_it, res,
                       V <= problem.epsilon, bool(converged), ms, V, history)
