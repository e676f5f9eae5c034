"""Predictors in the controlled space and the condensed horizon problem."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import ConfigError, DareError
from ..koopman.model import KoopmanModel, initial_lift
from ..plant import PHASE_NAMES, STANCE, SWING
from .config import MpcConfig
from .dare import solve_dare


@dataclass(frozen=True)
class LinearPredictor:
    """Switched linear model ``x+ = A[s] x + B[s] [u_j, ..., u_{j-L+1}]``, ``y = C_out x``.

    ``y`` holds the predicted (angle, velocity). ``lift`` maps a chronological
    ``(n, 3)`` history of ``z = [theta, theta_dot, 0]`` rows to the state ``x``.
    ``fixed`` lists state coordinates that are constant on those coordinates
    (for example a constant observable); deviations from the reference
    vanish there.
    """

    A: tuple
    B: tuple
    C_out: np.ndarray
    lift: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    embedding: int = 1
    label: str = ""
    fixed: tuple = ()

    @property
    def n_x(self):
        return self.A[0].shape[0]


def constant_observables(dictionary):
    """Indices of lifted coordinates that do not vary with (angle, velocity)."""
    th, om = np.meshgrid(np.linspace(-30.0, 35.0, 27), np.linspace(-600.0, 600.0, 25))
    Z = np.column_stack([th.ravel(), om.ravel(), np.zeros(th.size)])
    X = dictionary.lift_states(Z)
    base = np.flatnonzero(np.ptp(X, axis=0) == 0.0)
    nb = dictionary.n_base
    return tuple(int(i + k * nb) for k in range(dictionary.embedding) for i in base)


def lifted_predictor(model: KoopmanModel) -> LinearPredictor:
    return LinearPredictor(tuple(model.K_xx), tuple(model.K_xu), model.C[:2].copy(),
                           lambda Z: initial_lift(model, Z), model.dictionary.embedding,
                           f"lifted {model.dictionary.name}",
                           constant_observables(model.dictionary))


def projected_predictor(model: KoopmanModel) -> LinearPredictor:
    """Three-state view ``(C K_xx C^+, C K_xu)`` acting on ``z`` directly."""
    A, B = zip(*(model.projected(s) for s in (STANCE, SWING)))
    C_out = np.hstack([np.eye(2), np.zeros((2, 1))])
    return LinearPredictor(tuple(A), tuple(B), C_out,
                           lambda Z: np.atleast_2d(Z)[-1].astype(float),
                           model.dictionary.embedding, f"projected {model.dictionary.name}",
                           fixed=(2,))


def make_predictor(model, space="lifted") -> LinearPredictor:
    if isinstance(model, LinearPredictor):
        return model
    if space == "lifted":
        return lifted_predictor(model)
    if space == "projected":
        return projected_predictor(model)
    raise ConfigError(f"unknown prediction space {space!r}")


def terminal_weights(predictor: LinearPredictor, config: MpcConfig, **dare_kw):
    """Per-phase DARE solutions ``(S_stance, S_swing)``.

    The error weight ``Q`` is carried into the predictor state through
    ``C_out``. Coordinates listed in ``predictor.fixed`` carry no deviation
    and are left out of the Riccati equation (a constant observable would
    otherwise add an uncontrollable unit-modulus mode); their rows and
    columns of ``S`` are zero. With delay embedding only the current-input
    column of ``B`` enters the equation.
    """
    n = predictor.n_x
    free = np.setdiff1d(np.arange(n), np.asarray(predictor.fixed, dtype=int))
    Q = (predictor.C_out.T @ config.Q_matrix @ predictor.C_out)[np.ix_(free, free)]
    kw = {"tol": 1e-10, "rtol": 1e-12}
    kw.update(dare_kw)
    out = []
    for s in (STANCE, SWING):
        A = predictor.A[s][np.ix_(free, free)]
        B = predictor.B[s][free, :1]
        try:
            Sr = solve_dare(A, B, Q, [[config.R[s]]], **kw)
        except DareError as exc:
            raise DareError(f"{PHASE_NAMES[s]} phase: {exc}", exc.residual,
                            exc.iterations) from exc
        S = np.zeros((n, n))
        S[np.ix_(free, free)] = Sr
        out.append(S)
    return tuple(out)


# ---------------------------------------------------------------------------
# condensation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Condensation:
    """Input-to-output maps of one phase pattern, independent of the measurement.

    For steps ``j = 1..T``: ``x_j = Phi[j] x_0 + Gamma[j] U + M[j] p`` with
    ``p = [u_{-1}, ..., u_{-(L-1)}]`` the inputs applied before the horizon.
    ``step_phase[j]`` is the phase whose operators produced ``x_{j+1}``.
    """

    sigmas: tuple
    step_phase: np.ndarray
    Gy: np.ndarray          # (2T, T) outputs y_1..y_T
    Py: np.ndarray          # (2T, n_x) free response of the outputs to x_0
    My: np.ndarray          # (2T, L-1)
    Gt: np.ndarray          # (n_x, T) terminal state
    Pt: np.ndarray
    Mt: np.ndarray
    S: np.ndarray
    H: np.ndarray           # Hessian of the quadratic part
    Wy: np.ndarray          # linear-term maps: g = Wy (f_run - r_run) + Wt (f_T - x_ref)
    Wt: np.ndarray
    r_diag: np.ndarray
    lipschitz: float


def condense(predictor: LinearPredictor, sigmas, config: MpcConfig, S_pair) -> Condensation:
    """Stack the switched dynamics over the horizon for one phase pattern."""
    sig = tuple(int(bool(s)) for s in sigmas)
    T = len(sig)
    if T < 1:
        raise ConfigError("horizon must contain at least one step")
    L = predictor.embedding
    n = predictor.n_x
    Phi = np.eye(n)
    Gam = np.zeros((n, T))
    M = np.zeros((n, max(L - 1, 0)))
    Py, Gy, My = [], [], []
    for j, s in enumerate(sig):
        A, B = predictor.A[s], predictor.B[s]
        E = np.zeros((n, T))
        F = np.zeros_like(M)
        for i in range(L):
            if j - i >= 0:
                E[:, j - i] += B[:, i]
            else:
                F[:, i - j - 1] += B[:, i]
        Phi = A @ Phi
        Gam = A @ Gam + E
        M = A @ M + F
        Py.append(predictor.C_out @ Phi)
        Gy.append(predictor.C_out @ Gam)
        My.append(predictor.C_out @ M)
    Py, Gy, My = np.vstack(Py), np.vstack(Gy), np.vstack(My)
    S = S_pair[sig[-1]]
    Qbar = np.kron(np.eye(T - 1), config.Q_matrix)
    Gr = Gy[:2 * (T - 1)]
    r_diag = np.array([config.R[s] for s in sig])
    H = 2.0 * (Gr.T @ Qbar @ Gr + Gam.T @ S @ Gam + np.diag(r_diag))
    H = 0.5 * (H + H.T)
    return Condensation(sig, np.array(sig), Gy, Py, My, Gam, Phi, M, S, H,
                        2.0 * Gr.T @ Qbar, 2.0 * Gam.T @ S, r_diag,
                        float(np.linalg.eigvalsh(H)[-1]))


@dataclass
class HorizonProblem:
    """Condensed finite-horizon problem in the stacked inputs ``U``.

    The quadratic part is ``1/2 U'HU + g'U + c``; penalty or augmented
    Lagrangian terms for the state box and the terminal set are added by
    :meth:`objective`.
    """

    cond: Condensation
    g: np.ndarray
    c: float
    lo: np.ndarray
    hi: np.ndarray
    fy: np.ndarray          # free output response y_1..y_T (flattened)
    e_t0: np.ndarray        # terminal deviation at U = 0
    y_lo: np.ndarray
    y_hi: np.ndarray
    epsilon: float
    state_mode: str
    terminal_mode: str
    state_penalty: float
    terminal_penalty: float
    ref: np.ndarray         # (T, 2) reference for steps 1..T

    @property
    def T(self):
        return len(self.lo)

    @property
    def H(self):
        return self.cond.H

    def project(self, U):
        return np.minimum(np.maximum(U, self.lo), self.hi)

    def outputs(self, U):
        return (self.cond.Gy @ U + self.fy).reshape(-1, 2)

    def terminal_value(self, U):
        e = self.cond.Gt @ U + self.e_t0
        return float(e @ self.cond.S @ e)

    def quadratic_cost(self, U):
        return float(0.5 * U @ (self.H @ U) + self.g @ U + self.c)

    def violations(self, U):
        """Largest state-box and terminal-set violations of the prediction."""
        y = self.cond.Gy @ U + self.fy
        box = float(max(np.max(y - self.y_hi), np.max(self.y_lo - y), 0.0))
        term = max(self.terminal_value(U) - self.epsilon, 0.0) if self.terminal_mode != "off" else 0.0
        return box, term

    def penalty(self, U, lam_box=None, lam_term=0.0, mu_box=None, mu_term=None):
        """Constraint terms of :meth:`objective` and their gradient.

        With zero multipliers this is the quadratic penalty method; nonzero
        multipliers give the augmented Lagrangian used in hard mode.
        """
        f = 0.0
        grad = np.zeros(self.T)
        mu = self.state_penalty if mu_box is None else mu_box
        if self.finite_rows.size:
            G = self.cond.Gy[self.finite_rows]
            y = G @ U + self.fy[self.finite_rows]
            lh = 0.0 if lam_box is None else lam_box[0]
            ll = 0.0 if lam_box is None else lam_box[1]
            up = np.maximum(0.0, y - self.y_hi[self.finite_rows] + lh / mu)
            dn = np.maximum(0.0, self.y_lo[self.finite_rows] - y + ll / mu)
            f += 0.5 * mu * (up @ up + dn @ dn)
            if lam_box is not None:
                f -= 0.5 * (np.sum(lh ** 2) + np.sum(ll ** 2)) / mu
            grad += mu * (G.T @ (up - dn))
        if self.terminal_mode != "off":
            mt = self.terminal_penalty if mu_term is None else mu_term
            e = self.cond.Gt @ U + self.e_t0
            Se = self.cond.S @ e
            ex = max(0.0, float(e @ Se) - self.epsilon + lam_term / mt)
            if ex > 0.0:
                f += 0.5 * mt * ex * ex
                grad += mt * ex * 2.0 * (self.cond.Gt.T @ Se)
            f -= 0.5 * lam_term ** 2 / mt
        return float(f), grad

    def objective(self, U, lam_box=None, lam_term=0.0, mu_box=None, mu_term=None):
        """Cost and gradient including the constraint terms."""
        HU = self.H @ U
        p, gp = self.penalty(U, lam_box, lam_term, mu_box, mu_term)
        return float(0.5 * U @ HU + self.g @ U + self.c + p), HU + self.g + gp

    def __post_init__(self):
        rows = np.flatnonzero(np.isfinite(self.y_lo) | np.isfinite(self.y_hi))
        self.finite_rows = rows
        self.y_lo = np.where(np.isfinite(self.y_lo), self.y_lo, -1e300)
        self.y_hi = np.where(np.isfinite(self.y_hi), self.y_hi, 1e300)


def build_horizon_problem(predictor: LinearPredictor, x0, ref, sigmas, config: MpcConfig,
                          S_pair, x_ref_T=None, u_past=(), cache=None) -> HorizonProblem:
    """Condensed tracking problem over ``T = len(sigmas)`` steps.

    Parameters
    ----------
    predictor : LinearPredictor
    x0 : ndarray
        Current predictor state (lifted measurement).
    ref : array_like, shape (T, 2)
        Reference (angle, velocity) for predicted steps ``1..T``.
    sigmas : sequence of {0, 1}
        Phase of each predicted step; ``sigmas[j]`` selects the operators
        producing ``x_{j+1}`` and the input bounds and weight of ``u_j``.
    S_pair : tuple
        Terminal weights per phase; the phase of the last step selects one.
    x_ref_T : ndarray, optional
        Predictor state of the reference at step ``T``; defaults to zero.
    u_past : sequence
        Inputs applied before the horizon, most recent first (``L > 1``).
    cache : dict, optional
        Memo of condensations keyed by phase pattern.
    """
    sig = tuple(int(bool(s)) for s in sigmas)
    T = len(sig)
    ref = np.asarray(ref, dtype=float).reshape(T, 2)
    for s in (STANCE, SWING):
        lo, hi = config.input_bounds[s]
        if lo > hi:
            raise ConfigError(f"infeasible {PHASE_NAMES[s]} input bounds [{lo}, {hi}]")
    if cache is not None and sig in cache:
        cond = cache[sig]
    else:
        cond = condense(predictor, sig, config, S_pair)
        if cache is not None:
            cache[sig] = cond
    L = predictor.embedding
    p = np.zeros(max(L - 1, 0))
    past = np.asarray(u_past, dtype=float).reshape(-1)[:L - 1]
    p[:len(past)] = past
    if len(past) < L - 1 and len(past):
        p[len(past):] = past[-1]
    x0 = np.asarray(x0, dtype=float)
    fy = cond.Py @ x0 + (cond.My @ p if L > 1 else 0.0)
    ft = cond.Pt @ x0 + (cond.Mt @ p if L > 1 else 0.0)
    x_ref_T = np.zeros(predictor.n_x) if x_ref_T is None else np.asarray(x_ref_T, dtype=float)
    d_run = fy[:2 * (T - 1)] - ref[:T - 1].reshape(-1)
    d_t = ft - x_ref_T
    g = cond.Wy @ d_run + cond.Wt @ d_t
    Q = config.Q_matrix
    c = float(np.einsum("ij,jk,ik->", d_run.reshape(-1, 2), Q, d_run.reshape(-1, 2))
              + d_t @ cond.S @ d_t)
    bounds = np.array([config.input_bounds[s] for s in sig])
    y_lo = np.tile([config.angle_bounds[0], config.velocity_bounds[0]], T).astype(float)
    y_hi = np.tile([config.angle_bounds[1], config.velocity_bounds[1]], T).astype(float)
    return HorizonProblem(cond, g, c, bounds[:, 0].copy(), bounds[:, 1].copy(), fy, d_t,
                          y_lo, y_hi, config.epsilon, config.state_constraints,
                          config.terminal_set, config.state_penalty, config.terminal_penalty,
                          ref)
