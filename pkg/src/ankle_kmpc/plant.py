"""Switched FES-driven ankle plant, gait clock, reference generator and datasets.

Units are degrees, deg/s, mA and seconds at every public boundary; the only
internal conversion is the degree/radian change inside the torque model.

Sign convention: plantarflexion is a *decreasing* angle. The stance-phase
muscle (plantarflexor) therefore produces negative torque and the
swing-phase muscle (dorsiflexor) positive torque.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, IntegrationError, IOFailure

STANCE = 0
SWING = 1
PHASE_NAMES = {STANCE: "stance", SWING: "swing"}

ANGLE_BOUNDS_DEG = (-20.0, 25.0)
INPUT_BOUNDS_MA = (0.0, 30.0)

_DEG = math.pi / 180.0
# tolerance used when locating a time on the gait clock; keeps k*dt sample
# times from falling on the wrong side of a phase boundary
_CLOCK_EPS = 1e-9


@dataclass(frozen=True)
class AnkleState:
    """Physical plant state.

    ``activation`` is the hidden first-order muscle activation (mA
    equivalent). It is part of the simulation state but never of the
    measured data.
    """

    theta: float
    theta_dot: float
    t: float = 0.0
    activation: float = 0.0

    def as_array(self):
        return np.array([self.theta, self.theta_dot, self.activation])


@dataclass(frozen=True)
class PhaseParams:
    inertia: float                 # kg m^2
    gain: float                    # N m / mA
    angle_center: float            # deg
    angle_width: float             # deg
    velocity_slope: float          # 1 / (deg/s), force loss per unit shortening speed
    velocity_saturation: float     # floor of the torque-velocity factor, (0, 1]


@dataclass(frozen=True)
class PlantParams:
    stance: PhaseParams
    swing: PhaseParams
    viscosity: float = 0.0052      # N m s / deg
    stiffness: float = 0.054       # N m / deg
    rest_angle: float = -3.0       # deg
    gravity: float = 2.5           # N m
    activation_tau: float = 0.019  # s

    def phase(self, sigma):
        return self.swing if sigma else self.stance

    def validate(self):
        for name, p in (("stance", self.stance), ("swing", self.swing)):
            if not p.inertia > 0:
                raise ConfigError(f"{name} inertia must be positive, got {p.inertia}")
            if not p.angle_width > 0:
                raise ConfigError(f"{name} torque-angle width must be positive")
            if not 0 < p.velocity_saturation <= 1:
                raise ConfigError(f"{name} velocity saturation must lie in (0, 1]")
            if p.velocity_slope < 0 or p.gain < 0:
                raise ConfigError(f"{name} gain and velocity slope must be non-negative")
            if not all(math.isfinite(v) for v in asdict(p).values()):
                raise ConfigError(f"{name} parameters must be finite")
        scalars = (self.viscosity, self.stiffness, self.rest_angle, self.gravity,
                   self.activation_tau)
        if not all(math.isfinite(v) for v in scalars):
            raise ConfigError("plant parameters must be finite")
        if not self.activation_tau > 0:
            raise ConfigError("activation time constant must be positive")
        return self

    # --- config (de)serialization; key names carry their units -----------
    _PHASE_KEYS = {
        "inertia": "inertia_kg_m2",
        "gain": "gain_nm_per_ma",
        "angle_center": "angle_center_deg",
        "angle_width": "angle_width_deg",
        "velocity_slope": "velocity_slope_per_deg_s",
        "velocity_saturation": "velocity_saturation",
    }
    _SHARED_KEYS = {
        "viscosity": "viscosity_nms_per_deg",
        "stiffness": "stiffness_nm_per_deg",
        "rest_angle": "rest_angle_deg",
        "gravity": "gravity_nm",
        "activation_tau": "activation_time_constant_s",
    }

    def to_dict(self):
        out = {v: getattr(self, k) for k, v in self._SHARED_KEYS.items()}
        for name in ("stance", "swing"):
            ph = getattr(self, name)
            out[name] = {v: getattr(ph, k) for k, v in self._PHASE_KEYS.items()}
        return out

    @classmethod
    def from_dict(cls, d):
        try:
            phases = {
                name: PhaseParams(**{k: float(d[name][v]) for k, v in cls._PHASE_KEYS.items()})
                for name in ("stance", "swing")
            }
            shared = {k: float(d[v]) for k, v in cls._SHARED_KEYS.items() if v in d}
        except KeyError as exc:
            raise ConfigError(f"plant config is missing key {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad plant config value: {exc}") from None
        unknown = set(d) - set(cls._SHARED_KEYS.values()) - {"stance", "swing"}
        if unknown:
            raise ConfigError(f"unknown plant config keys: {sorted(unknown)}")
        return cls(**phases, **shared).validate()

    @classmethod
    def default(cls):
        from .config import load_packaged

        return cls.from_dict(load_packaged("plant.toml")["plant"])


@dataclass(frozen=True)
class GaitPhaseSchedule:
    """Periodic stance/swing timing.

    Stance is ``[t_start, t_stance)``, swing is ``[t_swing, t_end)``; a rest
    gap ``[t_stance, t_swing)`` keeps the stance label.
    """

    t_start: float = 0.0
    t_stance: float = 0.5
    t_swing: float = 0.5
    t_end: float = 1.0

    def __post_init__(self):
        if not (self.t_start < self.t_stance <= self.t_swing < self.t_end):
            raise ConfigError(
                "gait schedule must satisfy t_start < t_stance <= t_swing < t_end, "
                f"got {self.t_start}, {self.t_stance}, {self.t_swing}, {self.t_end}"
            )

    @property
    def cycle_period(self):
        return self.t_end - self.t_start

    @classmethod
    def even(cls, period):
        """Schedule with stance and swing each taking half of ``period``."""
        return cls(0.0, period / 2, period / 2, float(period))

    def cycle_time(self, t):
        """Map absolute time onto ``[t_start, t_end)``."""
        t = np.asarray(t, dtype=float)
        return self.t_start + np.mod(t - self.t_start + _CLOCK_EPS, self.cycle_period) - _CLOCK_EPS

    def sigma(self, t):
        """Vectorized phase indicator."""
        tau = self.cycle_time(t) + _CLOCK_EPS
        return np.where(tau >= self.t_swing, SWING, STANCE).astype(np.int8)

    def to_dict(self):
        return {"t_start_s": self.t_start, "t_stance_s": self.t_stance,
                "t_swing_s": self.t_swing, "t_end_s": self.t_end}

    @classmethod
    def from_dict(cls, d):
        if "cycle_period_s" in d and len(d) == 1:
            return cls.even(float(d["cycle_period_s"]))
        try:
            return cls(float(d["t_start_s"]), float(d["t_stance_s"]),
                       float(d["t_swing_s"]), float(d["t_end_s"]))
        except KeyError as exc:
            raise ConfigError(f"schedule config is missing key {exc}") from None


def phase_indicator(t, schedule: GaitPhaseSchedule) -> int:
    """Return 0 during stance and 1 during swing at time ``t``."""
    if t < 0 or not math.isfinite(t):
        raise ConfigError(f"phase_indicator needs a finite t >= 0, got {t}")
    return int(schedule.sigma(t))


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def _torque_angle(theta, p: PhaseParams):
    return np.exp(-((theta - p.angle_center) / p.angle_width) ** 2)


def _torque_velocity(theta_dot, sign, p: PhaseParams):
    # shortening speed of the active muscle; lengthening leaves force unscaled
    shortening = sign * theta_dot
    return np.clip(1.0 - p.velocity_slope * shortening, p.velocity_saturation, 1.0)


def passive_torque(theta, theta_dot, params: PlantParams):
    """Viscous, elastic and gravitational torque (N m), opposing motion."""
    return (params.viscosity * theta_dot
            + params.stiffness * (theta - params.rest_angle)
            + params.gravity * np.sin(theta * _DEG))


def muscle_torque(theta, theta_dot, activation, sigma, params: PlantParams):
    p = params.phase(sigma)
    sign = 1.0 if sigma else -1.0
    return (sign * p.gain * activation * _torque_angle(theta, p)
            * _torque_velocity(theta_dot, sign, p))


def plant_rhs(x, u, sigma, params: PlantParams):
    """Time derivative of ``[theta, theta_dot, activation]``.

    ``x`` may carry leading batch dimensions (``(..., 3)``); ``u`` broadcasts
    against them. ``sigma`` is shared by the batch.
    """
    x = np.asarray(x, dtype=float)
    theta, theta_dot, act = x[..., 0], x[..., 1], x[..., 2]
    p = params.phase(sigma)
    torque = muscle_torque(theta, theta_dot, act, sigma, params) - passive_torque(
        theta, theta_dot, params)
    # J in kg m^2 acts on rad/s^2; report deg/s^2
    theta_ddot = torque / p.inertia / _DEG
    return np.stack([theta_dot, theta_ddot, (u - act) / params.activation_tau], axis=-1)


def _rk4(x, u, sigma, dt, params):
    k1 = plant_rhs(x, u, sigma, params)
    k2 = plant_rhs(x + 0.5 * dt * k1, u, sigma, params)
    k3 = plant_rhs(x + 0.5 * dt * k2, u, sigma, params)
    k4 = plant_rhs(x + dt * k3, u, sigma, params)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def plant_step(state: AnkleState, u, phase, dt, params: PlantParams, step=None) -> AnkleState:
    """Advance the plant one zero-order-hold step of length ``dt`` with RK4."""
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    if u < 0:
        raise ConfigError(f"stimulation current must be non-negative, got {u}")
    x = _rk4(state.as_array(), float(u), int(phase), dt, params)
    if not np.all(np.isfinite(x)):
        raise IntegrationError(
            f"plant integration produced a non-finite state at t={state.t + dt:.6g}s",
            step=step, time=state.t + dt)
    return AnkleState(theta=float(x[0]), theta_dot=float(x[1]), t=state.t + dt,
                      activation=float(x[2]))


# ---------------------------------------------------------------------------
# reference trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReferenceParams:
    """Smooth periodic ankle reference.

    Over the warped cycle phase ``p`` (``p = 1/2`` at the stance/swing switch)::

        theta_d = offset - a_m sin(2 pi p) - a_d sin^2(2 pi p)

    with ``a_m``/``a_d`` the mean/half-difference of the stance and swing
    amplitudes, so stance dips to ``offset - stance_amplitude`` and swing peaks
    at ``offset + swing_amplitude``.
    """

    offset: float = -1.7
    stance_amplitude: float = 13.0
    swing_amplitude: float = 15.0
    phase_shift: float = 0.0       # fraction of a cycle

    def to_dict(self):
        return {"offset_deg": self.offset, "stance_amplitude_deg": self.stance_amplitude,
                "swing_amplitude_deg": self.swing_amplitude, "phase_shift": self.phase_shift}

    @classmethod
    def from_dict(cls, d):
        keys = {"offset_deg": "offset", "stance_amplitude_deg": "stance_amplitude",
                "swing_amplitude_deg": "swing_amplitude", "phase_shift": "phase_shift"}
        unknown = set(d) - set(keys)
        if unknown:
            raise ConfigError(f"unknown reference config keys: {sorted(unknown)}")
        return cls(**{keys[k]: float(v) for k, v in d.items()})


@dataclass
class ReferenceTrajectory:
    t: np.ndarray
    theta_d: np.ndarray
    theta_dot_d: np.ndarray
    params: ReferenceParams
    schedule: GaitPhaseSchedule

    def __len__(self):
        return len(self.t)

    def sample(self, k):
        return float(self.theta_d[k]), float(self.theta_dot_d[k])

    def window(self, k, n):
        """Reference rows ``k .. k+n-1`` as an ``(n, 2)`` array, periodic past the end."""
        idx = np.arange(k, k + n) % len(self.t)
        return np.column_stack([self.theta_d[idx], self.theta_dot_d[idx]])


def reference_values(t, schedule: GaitPhaseSchedule, params: ReferenceParams):
    """Evaluate (theta_d, theta_dot_d) at times ``t``."""
    t = np.asarray(t, dtype=float)
    period = schedule.cycle_period
    frac = np.mod((t - schedule.t_start) / period - params.phase_shift, 1.0)
    f = (schedule.t_stance - schedule.t_start) / period
    # piecewise-linear warp putting p = 1/2 at the end of stance
    p = np.where(frac < f, 0.5 * frac / f, 0.5 + 0.5 * (frac - f) / (1.0 - f))
    dp_dt = np.where(frac < f, 0.5 / f, 0.5 / (1.0 - f)) / period
    a_m = 0.5 * (params.stance_amplitude + params.swing_amplitude)
    a_d = 0.5 * (params.stance_amplitude - params.swing_amplitude)
    s, c = np.sin(2 * np.pi * p), np.cos(2 * np.pi * p)
    theta_d = params.offset - a_m * s - a_d * s * s
    theta_dot_d = (-a_m * c - 2.0 * a_d * s * c) * 2 * np.pi * dp_dt
    return theta_d, theta_dot_d


def reference_trajectory(schedule: GaitPhaseSchedule, gen_params: ReferenceParams = None,
                         sample_rate=200.0, duration=None) -> ReferenceTrajectory:
    """Sample the reference at ``sample_rate`` over ``duration`` (default one cycle)."""
    gen_params = gen_params or ReferenceParams()
    duration = schedule.cycle_period if duration is None else duration
    n = int(round(duration * sample_rate))
    t = schedule.t_start + np.arange(n) / sample_rate
    theta_d, theta_dot_d = reference_values(t, schedule, gen_params)
    # bounds checked on a dense grid so short sample windows cannot hide a violation
    dense = schedule.t_start + np.linspace(0.0, schedule.cycle_period, 2001)
    lo, hi = ANGLE_BOUNDS_DEG
    dense_theta, _ = reference_values(dense, schedule, gen_params)
    if dense_theta.min() < lo or dense_theta.max() > hi:
        raise ConfigError(
            f"reference leaves [{lo}, {hi}] deg: range [{dense_theta.min():.2f}, "
            f"{dense_theta.max():.2f}]")
    return ReferenceTrajectory(t, theta_d, theta_dot_d, gen_params, schedule)


def augment_state(state: AnkleState, ref_sample) -> np.ndarray:
    """Augmented tracking state ``[e_theta, e_theta_dot, theta_d]``."""
    theta_d, theta_dot_d = ref_sample
    z = np.array([state.theta - theta_d, state.theta_dot - theta_dot_d, theta_d], dtype=float)
    if not np.all(np.isfinite(z)):
        raise DataError("augmented state is not finite")
    return z


def plant_coordinates(states):
    """Augment plant samples against the null reference: ``z = [theta, theta_dot, 0]``.

    Identification data and the predictor live in these coordinates; tracking
    errors are formed against the actual reference afterwards.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    return np.column_stack([states[:, 0], states[:, 1], np.zeros(len(states))])


# ---------------------------------------------------------------------------
# episodes and datasets
# ---------------------------------------------------------------------------

@dataclass
class Episode:
    t: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray
    u: np.ndarray
    sigma: np.ndarray

    def __len__(self):
        return len(self.t)

    @property
    def states(self):
        return np.column_stack([self.theta, self.theta_dot])


# ``controller(state, sigma, k) -> u``
Controller = Callable[[AnkleState, int, int], float]


def simulate_gait(params: PlantParams, schedule: GaitPhaseSchedule, controller, duration, dt,
                  initial_state: Optional[AnkleState] = None) -> Episode:
    """Roll the switched plant forward, one logged sample per control step.

    ``controller`` is either a callable ``(state, sigma, k) -> u`` or an array
    of inputs (one per sample). Sample ``k`` logs the state at ``t_k`` together
    with the input held over ``[t_k, t_k + dt)``.
    """
    if not duration > 0:
        raise ConfigError("duration must be positive")
    n = int(round(duration / dt))
    if callable(controller):
        policy = controller
    else:
        profile = np.asarray(controller, dtype=float)
        if len(profile) < n:
            raise ConfigError(f"input profile has {len(profile)} samples, need {n}")
        policy = lambda _s, _sig, k: profile[k]  # noqa: E731
    state = initial_state or AnkleState(0.0, 0.0, schedule.t_start)
    out = np.empty((n, 5))
    for k in range(n):
        sig = int(schedule.sigma(state.t))
        u = float(policy(state, sig, k))
        out[k] = (state.t, state.theta, state.theta_dot, u, sig)
        state = plant_step(state, u, sig, dt, params, step=k)
    return Episode(out[:, 0], out[:, 1], out[:, 2], out[:, 3], out[:, 4].astype(np.int8))


@dataclass(frozen=True)
class ProtocolConfig:
    cycles: int = 150
    samples_per_cycle: int = 200
    sample_rate: float = 200.0
    input_range: tuple = INPUT_BOUNDS_MA
    angle_range: tuple = ANGLE_BOUNDS_DEG
    # initial velocity box in rad/s; converted to deg/s when sampling
    velocity_range_rad: tuple = (-2.0, 2.0)
    cycles_per_episode: int = 1

    def validate(self):
        if self.cycles < 1 or self.samples_per_cycle < 2:
            raise ConfigError("protocol needs at least one cycle of at least two samples")
        if self.cycles_per_episode < 1 or self.cycles % self.cycles_per_episode:
            raise ConfigError(f"{self.cycles} cycles cannot be split into episodes of "
                              f"{self.cycles_per_episode} cycles")
        if not self.sample_rate > 0:
            raise ConfigError("sample rate must be positive")
        lo, hi = self.input_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"bad input range {self.input_range}")
        return self

    @property
    def schedule(self):
        return GaitPhaseSchedule.even(self.samples_per_cycle / self.sample_rate)

    def to_dict(self):
        return {"cycles": self.cycles, "samples_per_cycle": self.samples_per_cycle,
                "sample_rate_hz": self.sample_rate, "input_range_ma": list(self.input_range),
                "angle_range_deg": list(self.angle_range),
                "velocity_range_rad_s": list(self.velocity_range_rad),
                "cycles_per_episode": self.cycles_per_episode}

    @classmethod
    def from_dict(cls, d):
        keys = {"cycles": ("cycles", int), "samples_per_cycle": ("samples_per_cycle", int),
                "sample_rate_hz": ("sample_rate", float),
                "input_range_ma": ("input_range", tuple),
                "angle_range_deg": ("angle_range", tuple),
                "velocity_range_rad_s": ("velocity_range_rad", tuple),
                "cycles_per_episode": ("cycles_per_episode", int)}
        unknown = set(d) - set(keys)
        if unknown:
            raise ConfigError(f"unknown protocol config keys: {sorted(unknown)}")
        return cls(**{keys[k][0]: keys[k][1](v) for k, v in d.items()}).validate()


@dataclass
class TrajectoryDataset:
    episodes: list
    sample_rate: float
    metadata: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return sum(len(e) for e in self.episodes)

    def split(self, train_fraction=0.8):
        """Episode-level split; never splits inside an episode."""
        n_train = int(round(train_fraction * len(self.episodes)))
        if not 0 < n_train < len(self.episodes):
            raise ConfigError(f"split {train_fraction} leaves an empty partition")
        return (replace(self, episodes=self.episodes[:n_train]),
                replace(self, episodes=self.episodes[n_train:]))

    def subset(self, n_episodes):
        return replace(self, episodes=self.episodes[:n_episodes])


def generate_training_dataset(params: PlantParams, schedule: Optional[GaitPhaseSchedule],
                              protocol: ProtocolConfig = None, seed=0) -> TrajectoryDataset:
    """Open-loop identification data.

    Each episode spans ``protocol.cycles_per_episode`` consecutive gait cycles
    and draws its initial angle, velocity and starting current from its own
    RNG stream ``(seed, episode)``. Within a cycle the current ramps linearly
    to that cycle's end level; the end levels sweep the input range evenly,
    interleaved so every episode covers the whole range.
    """
    protocol = (protocol or ProtocolConfig()).validate()
    schedule = schedule or protocol.schedule
    dt = 1.0 / protocol.sample_rate
    n = protocol.samples_per_cycle
    if abs(n * dt - schedule.cycle_period) > 1e-9:
        raise ConfigError(
            f"{n} samples at {protocol.sample_rate} Hz do not span the "
            f"{schedule.cycle_period} s gait cycle")
    lo, hi = protocol.input_range
    c = protocol.cycles_per_episode
    n_ep = protocol.cycles // c
    sweep = np.linspace(lo, hi, protocol.cycles).reshape(c, n_ep).T
    init = np.empty((n_ep, 3))
    profiles = np.empty((n_ep, n * c))
    for i in range(n_ep):
        rng = np.random.default_rng([int(seed), i])
        theta0 = rng.uniform(*sorted(protocol.angle_range))
        omega0 = rng.uniform(*protocol.velocity_range_rad) / _DEG
        u_start = rng.uniform(lo, hi)
        init[i] = (theta0, omega0, u_start)
        starts = np.concatenate([[u_start], sweep[i, :-1]])
        profiles[i] = np.concatenate([np.linspace(a, b, n) for a, b in zip(starts, sweep[i])])
    # episodes share the gait clock, so they are integrated side by side
    t = schedule.t_start + np.arange(n * c) * dt
    sig = schedule.sigma(t)
    x = init.copy()
    states = np.empty((n * c, n_ep, 2))
    for k in range(n * c):
        states[k] = x[:, :2]
        x = _rk4(x, profiles[:, k], int(sig[k]), dt, params)
        if not np.all(np.isfinite(x)):
            raise IntegrationError("dataset integration produced a non-finite state",
                                   step=k, time=t[k] + dt)
    episodes = [Episode(t.copy(), states[:, i, 0].copy(), states[:, i, 1].copy(),
                        profiles[i].copy(), sig.copy())
                for i in range(n_ep)]
    meta = {"seed": int(seed), "protocol": protocol.to_dict(), "schedule": schedule.to_dict(),
            "input_sweep": f"linear ramp from U[{lo}, {hi}] start to evenly swept end level"}
    return TrajectoryDataset(episodes, protocol.sample_rate, meta)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

DATASET_HEADER = ("t", "theta", "theta_dot", "u", "sigma", "episode")


def write_dataset_csv(dataset: TrajectoryDataset, path):
    rows = []
    for i, ep in enumerate(dataset.episodes):
        rows.append(np.column_stack([ep.t, ep.theta, ep.theta_dot, ep.u, ep.sigma,
                                     np.full(len(ep), i)]))
    data = np.vstack(rows)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(DATASET_HEADER) + "\n")
            for r in data:
                t, th, om, u = (repr(float(v)) for v in r[:4])
                fh.write(f"{t},{th},{om},{u},{int(r[4])},{int(r[5])}\n")
    except OSError as exc:
        raise IOFailure(f"cannot write dataset {path}: {exc}") from None


def read_dataset_csv(path, sample_rate=None, metadata=None) -> TrajectoryDataset:
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != DATASET_HEADER:
                raise DataError(f"{path}: expected header {','.join(DATASET_HEADER)}, "
                                f"got {header}")
            try:
                data = np.loadtxt(fh, delimiter=",", ndmin=2)
            except ValueError as exc:
                raise DataError(f"{path}: {exc}") from None
    except OSError as exc:
        raise IOFailure(f"cannot read dataset {path}: {exc}") from None
    if data.size == 0:
        raise DataError(f"{path}: no samples")
    episodes = []
    ids = data[:, 5].astype(int)
    for i in np.unique(ids):
        d = data[ids == i]
        episodes.append(Episode(d[:, 0], d[:, 1], d[:, 2], d[:, 3], d[:, 4].astype(np.int8)))
    if sample_rate is None:
        dts = np.diff(episodes[0].t)
        sample_rate = 1.0 / float(np.median(dts)) if len(dts) else 200.0
        sample_rate = float(np.round(sample_rate, 6))
    return TrajectoryDataset(episodes, sample_rate, dict(metadata or {}))
