"""Receding-horizon controller and closed-loop simulation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DataError, IOFailure
from ..plant import (AnkleState, GaitPhaseSchedule, PlantParams, ReferenceParams, plant_step,
                     reference_values)
from .config import MpcConfig
from .problem import build_horizon_problem, make_predictor, terminal_weights
from .solver import MpcSolution, solve_horizon

RUN_HEADER = ("t", "theta", "theta_d", "theta_dot", "theta_dot_d", "u", "sigma", "cost",
              "solve_ms", "converged")


class MpcController:
    """Stateful receding-horizon controller for one control loop.

    Holds the predictor, cached terminal weights and condensations, the
    warm start and the measurement/input history needed by delay embeddings.
    """

    def __init__(self, model, config: MpcConfig, schedule: GaitPhaseSchedule,
                 reference: ReferenceParams = None, S_pair=None):
        self.config = config.validate()
        if config.dictionary and getattr(model, "dictionary", None) is not None:
            if model.dictionary.name != config.dictionary:
                raise DataError(f"controller expects a {config.dictionary!r} model, "
                                f"got {model.dictionary.name!r}")
        if config.embedding and getattr(model, "dictionary", None) is not None:
            if model.dictionary.embedding != config.embedding:
                raise DataError(f"controller expects embedding {config.embedding}, "
                                f"got {model.dictionary.embedding}")
        self.predictor = make_predictor(model, config.prediction_space)
        self.schedule = schedule
        self.reference = reference or ReferenceParams()
        self.S = S_pair if S_pair is not None else terminal_weights(self.predictor, config)
        self._cache = {}
        self.reset()

    def reset(self):
        self._warm = None
        self._z_hist = []
        self._u_hist = []

    # ------------------------------------------------------------------
    def horizon_times(self, t):
        return t + self.config.dt * np.arange(1, self.config.horizon + 1)

    def horizon_phases(self, t):
        """Phase of each predicted step, taken from the known gait schedule."""
        return self.schedule.sigma(t + self.config.dt * np.arange(self.config.horizon))

    def _ref_state(self, t_end):
        L = self.predictor.embedding
        times = t_end - self.config.dt * np.arange(L)[::-1]
        th, thd = reference_values(times, self.schedule, self.reference)
        Z = np.column_stack([th, thd, np.zeros(L)])
        return self.predictor.lift(Z)

    def step(self, t, theta, theta_dot) -> tuple:
        """One control update at time ``t``; returns ``(u, solution)``."""
        cfg = self.config
        z = np.array([theta, theta_dot, 0.0])
        L = self.predictor.embedding
        self._z_hist.append(z)
        if len(self._z_hist) > L:
            self._z_hist.pop(0)
        x0 = self.predictor.lift(np.array(self._z_hist))
        sig = self.horizon_phases(t)
        th, thd = reference_values(self.horizon_times(t), self.schedule, self.reference)
        ref = np.column_stack([th, thd])
        x_ref = self._ref_state(t + cfg.dt * cfg.horizon)
        past = self._u_hist[::-1]
        sol = mpc_step(self, x0, sig, ref, x_ref, past)
        u = float(sol.u[0])
        self._u_hist.append(u)
        if len(self._u_hist) > max(L - 1, 1):
            self._u_hist.pop(0)
        return u, sol


def mpc_step(controller: MpcController, x0, sigmas, ref_window, x_ref_T=None,
             u_past=()) -> MpcSolution:
    """Build and solve the horizon problem, then shift the warm start.

    The caller applies ``solution.u[0]``; inputs are always inside the
    phase-wise bounds because the solver only returns projected iterates.
    """
    cfg = controller.config
    problem = build_horizon_problem(controller.predictor, x0, ref_window, sigmas, cfg,
                                    controller.S, x_ref_T, u_past, controller._cache)
    sol = solve_horizon(problem, controller._warm, cfg.solver, cfg.record_timing)
    controller._warm = np.concatenate([sol.u[1:], sol.u[-1:]])
    return sol


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    t: np.ndarray
    theta: np.ndarray
    theta_d: np.ndarray
    theta_dot: np.ndarray
    theta_dot_d: np.ndarray
    u: np.ndarray
    sigma: np.ndarray
    cost: np.ndarray
    solve_ms: np.ndarray
    converged: np.ndarray
    cycle_period: float
    iterations: np.ndarray = field(default=None, repr=False)
    terminal_value: np.ndarray = field(default=None, repr=False)
    input_bounds: tuple = ((0.0, 30.0), (0.0, 30.0))
    angle_bounds: tuple = (-20.0, 25.0)

    @property
    def rmse(self):
        return float(np.sqrt(np.mean((self.theta - self.theta_d) ** 2)))

    def cycle_rmse(self):
        """Angle RMSE of every complete gait cycle."""
        n = int(round(self.cycle_period / (self.t[1] - self.t[0]))) if len(self.t) > 1 else 1
        k = len(self.t) // n
        err = (self.theta[:k * n] - self.theta_d[:k * n]).reshape(k, n)
        return np.sqrt(np.mean(err ** 2, axis=1))

    def phase_rmse(self, sigma):
        m = self.sigma == sigma
        return float(np.sqrt(np.mean((self.theta[m] - self.theta_d[m]) ** 2))) if m.any() else float("nan")

    @property
    def input_violations(self):
        lo = np.where(self.sigma == 1, self.input_bounds[1][0], self.input_bounds[0][0])
        hi = np.where(self.sigma == 1, self.input_bounds[1][1], self.input_bounds[0][1])
        return int(np.sum((self.u < lo) | (self.u > hi)))

    @property
    def angle_violations(self):
        lo, hi = self.angle_bounds
        return int(np.sum((self.theta < lo) | (self.theta > hi)))

    def summary(self):
        c = self.cycle_rmse()
        return {
            "rmse_deg": self.rmse,
            "cycle_rmse_mean_deg": float(c.mean()) if c.size else float("nan"),
            "cycle_rmse_sd_deg": float(c.std()) if c.size else float("nan"),
            "stance_rmse_deg": self.phase_rmse(0),
            "swing_rmse_deg": self.phase_rmse(1),
            "input_violations": self.input_violations,
            "angle_violations": self.angle_violations,
            "solve_ms_median": float(np.median(self.solve_ms)),
            "solve_ms_p95": float(np.percentile(self.solve_ms, 95)),
            "not_converged": int(np.sum(~self.converged)),
        }


def closed_loop_run(params: PlantParams, model, config: MpcConfig, schedule: GaitPhaseSchedule,
                    reference: ReferenceParams = None, duration=60.0, initial_state=None,
                    controller: MpcController = None) -> RunReport:
    """Alternate plant steps and controller updates at the control rate.

    The plant starts on the reference unless ``initial_state`` is given. The
    phase of every sample comes from ``schedule``.
    """
    reference = reference or ReferenceParams()
    if not duration > 0:
        raise ConfigError("duration must be positive")
    ctrl = controller or MpcController(model, config, schedule, reference)
    dt = config.dt
    n = int(round(duration * config.sample_rate))
    t = schedule.t_start + np.arange(n) * dt
    th_d, thd_d = reference_values(t, schedule, reference)
    sig = schedule.sigma(t)
    state = initial_state or AnkleState(float(th_d[0]), float(thd_d[0]), float(t[0]))
    cols = {k: np.empty(n) for k in ("theta", "theta_dot", "u", "cost", "solve_ms")}
    conv = np.empty(n, dtype=bool)
    iters = np.empty(n, dtype=int)
    term = np.empty(n)
    for k in range(n):
        cols["theta"][k], cols["theta_dot"][k] = state.theta, state.theta_dot
        u, sol = ctrl.step(t[k], state.theta, state.theta_dot)
        cols["u"][k], cols["cost"][k], cols["solve_ms"][k] = u, sol.cost, sol.solve_ms
        conv[k], iters[k], term[k] = sol.converged, sol.iterations, sol.terminal_value
        state = plant_step(state, max(u, 0.0), int(sig[k]), dt, params, step=k)
    return RunReport(t, cols["theta"], th_d, cols["theta_dot"], thd_d, cols["u"],
                     sig.astype(int), cols["cost"], cols["solve_ms"], conv,
                     schedule.cycle_period, iters, term, tuple(config.input_bounds),
                     tuple(config.angle_bounds))


def calibrate_epsilon(params: PlantParams, model, config: MpcConfig,
                     schedule: GaitPhaseSchedule, reference: ReferenceParams = None,
                     duration=20.0, percentile=95.0):
    """Terminal-set radius from an unconstrained nominal run.

    Runs the controller with the terminal set switched off and returns the
    given percentile of the terminal values it produced.
    """
    from dataclasses import replace

    probe = replace(config, terminal_set="off")
    run = closed_loop_run(params, model, probe, schedule, reference, duration)
    return float(np.percentile(run.terminal_value, percentile))


def write_run_csv(report: RunReport, path):
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(RUN_HEADER) + "\n")
            for k in range(len(report.t)):
                t, th, thd, om, omd, u, cost = (repr(float(a[k])) for a in (
                    report.t, report.theta, report.theta_d, report.theta_dot,
                    report.theta_dot_d, report.u, report.cost))
                fh.write(f"{t},{th},{thd},{om},{omd},{u},{int(report.sigma[k])},{cost},"
                         f"{report.solve_ms[k]:.4f},{int(report.converged[k])}\n")
    except OSError as exc:
        raise IOFailure(f"cannot write run log {path}: {exc}") from None


def read_run_csv(path, cycle_period):
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != RUN_HEADER:
                raise DataError(f"{path}: not a run log")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise IOFailure(f"cannot read run log {path}: {exc}") from None
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if data.shape[0] == 0 or data.shape[1] != len(RUN_HEADER):
        raise DataError(f"{path}: empty or malformed run log")
    c = data.T
    return RunReport(c[0], c[1], c[2], c[3], c[4], c[5], c[6].astype(int), c[7], c[8],
                     c[9].astype(bool), float(cycle_period))
