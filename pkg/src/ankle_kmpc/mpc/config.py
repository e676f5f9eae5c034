"""Controller configuration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import ConfigError
from ..plant import ANGLE_BOUNDS_DEG, INPUT_BOUNDS_MA

PREDICTION_SPACES = ("lifted", "projected")
CONSTRAINT_MODES = ("soft", "hard")
TERMINAL_MODES = ("soft", "hard", "off")


@dataclass(frozen=True)
class SolverSettings:
    max_iter: int = 200
    tol: float = 1e-4               # projected-gradient norm, cost units per mA
    step_rule: str = "bb"           # "bb" (Barzilai-Borwein) or "fixed" (1/L)
    armijo: float = 1e-4
    max_outer: int = 6              # augmented-Lagrangian rounds in hard mode
    constraint_tol: float = 1e-3

    def validate(self):
        if self.max_iter < 1 or self.max_outer < 1:
            raise ConfigError("solver iteration limits must be positive")
        if not self.tol > 0 or not self.constraint_tol > 0:
            raise ConfigError("solver tolerances must be positive")
        if self.step_rule not in ("bb", "fixed"):
            raise ConfigError(f"unknown step rule {self.step_rule!r}")
        if not 0 < self.armijo < 1:
            raise ConfigError("Armijo constant must lie in (0, 1)")
        return self


@dataclass(frozen=True)
class MpcConfig:
    """Horizon, weights and constraint sets of the tracking controller.

    ``Q`` weights the (angle, velocity) tracking error, ``R`` the stimulation
    per phase (stance, swing). Bounds are in mA, degrees and deg/s.
    """

    horizon: int = 20
    sample_rate: float = 200.0
    Q: tuple = ((1.0, 0.0), (0.0, 1e-4))
    R: tuple = (1e-3, 1e-3)
    input_bounds: tuple = (INPUT_BOUNDS_MA, INPUT_BOUNDS_MA)
    angle_bounds: tuple = ANGLE_BOUNDS_DEG
    velocity_bounds: tuple = (-math.inf, math.inf)
    epsilon: float = 0.45
    state_constraints: str = "soft"
    terminal_set: str = "soft"
    state_penalty: float = 1e3
    terminal_penalty: float = 1.0
    prediction_space: str = "lifted"
    dictionary: str = ""            # expected model dictionary, "" accepts any
    embedding: int = 0              # expected embedding length, 0 accepts any
    record_timing: bool = True
    solver: SolverSettings = field(default_factory=SolverSettings)

    @property
    def dt(self):
        return 1.0 / self.sample_rate

    @property
    def Q_matrix(self):
        return np.array(self.Q, dtype=float)

    def validate(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError(f"horizon must be a positive integer, got {self.horizon}")
        if not self.sample_rate > 0:
            raise ConfigError("sample rate must be positive")
        Q = self.Q_matrix
        if Q.shape != (2, 2) or not np.allclose(Q, Q.T):
            raise ConfigError("Q must be a symmetric 2 x 2 matrix")
        if np.linalg.eigvalsh(Q).min() <= 0:
            raise ConfigError("Q must be positive definite")
        if len(self.R) != 2 or min(self.R) <= 0:
            raise ConfigError("R needs one positive weight per phase")
        for name, (lo, hi) in (("stance input", self.input_bounds[0]),
                               ("swing input", self.input_bounds[1]),
                               ("angle", self.angle_bounds),
                               ("velocity", self.velocity_bounds)):
            if lo > hi:
                raise ConfigError(f"infeasible {name} bounds [{lo}, {hi}]")
        if not self.epsilon > 0:
            raise ConfigError("terminal-set radius must be positive")
        if self.state_constraints not in CONSTRAINT_MODES:
            raise ConfigError(f"state_constraints must be one of {CONSTRAINT_MODES}")
        if self.terminal_set not in TERMINAL_MODES:
            raise ConfigError(f"terminal_set must be one of {TERMINAL_MODES}")
        if self.prediction_space not in PREDICTION_SPACES:
            raise ConfigError(f"prediction_space must be one of {PREDICTION_SPACES}")
        if self.state_penalty <= 0 or self.terminal_penalty <= 0:
            raise ConfigError("penalty weights must be positive")
        self.solver.validate()
        return self

    # --- TOML mapping -----------------------------------------------------
    def to_dict(self):
        d = asdict(self)
        out = {
            "horizon_steps": self.horizon,
            "sample_rate_hz": self.sample_rate,
            "q_error": [list(r) for r in self.Q],
            "r_stance": self.R[0],
            "r_swing": self.R[1],
            "input_bounds_stance_ma": list(self.input_bounds[0]),
            "input_bounds_swing_ma": list(self.input_bounds[1]),
            "angle_bounds_deg": list(self.angle_bounds),
            "velocity_bounds_deg_s": list(self.velocity_bounds),
            "terminal_epsilon": self.epsilon,
            "state_constraints": self.state_constraints,
            "terminal_set": self.terminal_set,
            "state_penalty": self.state_penalty,
            "terminal_penalty": self.terminal_penalty,
            "prediction_space": self.prediction_space,
            "dictionary": self.dictionary,
            "embedding": self.embedding,
            "record_timing": self.record_timing,
            "solver": d["solver"],
        }
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        solver = d.pop("solver", {})
        keys = {
            "horizon_steps": ("horizon", int),
            "sample_rate_hz": ("sample_rate", float),
            "q_error": ("Q", lambda v: tuple(tuple(float(x) for x in r) for r in v)),
            "terminal_epsilon": ("epsilon", float),
            "angle_bounds_deg": ("angle_bounds", lambda v: tuple(map(float, v))),
            "velocity_bounds_deg_s": ("velocity_bounds", lambda v: tuple(map(float, v))),
            "state_constraints": ("state_constraints", str),
            "terminal_set": ("terminal_set", str),
            "state_penalty": ("state_penalty", float),
            "terminal_penalty": ("terminal_penalty", float),
            "prediction_space": ("prediction_space", str),
            "dictionary": ("dictionary", str),
            "embedding": ("embedding", int),
            "record_timing": ("record_timing", bool),
        }
        phase_keys = {"r_stance", "r_swing", "input_bounds_stance_ma", "input_bounds_swing_ma"}
        unknown = set(d) - set(keys) - phase_keys
        if unknown:
            raise ConfigError(f"unknown controller config keys: {sorted(unknown)}")
        kw = {}
        try:
            for k, v in d.items():
                if k in keys:
                    kw[keys[k][0]] = keys[k][1](v)
            base = cls()
            kw["R"] = (float(d.get("r_stance", base.R[0])), float(d.get("r_swing", base.R[1])))
            kw["input_bounds"] = (
                tuple(map(float, d.get("input_bounds_stance_ma", base.input_bounds[0]))),
                tuple(map(float, d.get("input_bounds_swing_ma", base.input_bounds[1]))))
            kw["solver"] = SolverSettings(**solver)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad controller config value: {exc}") from None
        return cls(**kw).validate()
