import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from ankle_kmpc.errors import ConfigError, DataError, IntegrationError, IOFailure
from ankle_kmpc.plant import (DATASET_HEADER, AnkleState, GaitPhaseSchedule, PlantParams,
                              ProtocolConfig, ReferenceParams, augment_state,
                              generate_training_dataset, phase_indicator, plant_coordinates,
                              plant_rhs, plant_step, read_dataset_csv, reference_trajectory,
                              reference_values, simulate_gait, write_dataset_csv)

DEG = math.pi / 180.0


def rhs_oracle(x, u, sigma, p: PlantParams):
    """Scalar re-derivation of the joint dynamics (deg, deg/s, mA)."""
    th, om, a = x
    ph = p.swing if sigma else p.stance
    s = 1.0 if sigma else -1.0
    fl = math.exp(-((th - ph.angle_center) / ph.angle_width) ** 2)
    fv = min(1.0, max(ph.velocity_saturation, 1.0 - ph.velocity_slope * s * om))
    muscle = s * ph.gain * a * fl * fv
    passive = p.viscosity * om + p.stiffness * (th - p.rest_angle) + p.gravity * math.sin(th * DEG)
    return [om, (muscle - passive) / ph.inertia / DEG, (u - a) / p.activation_tau]


# --- gait clock ---------------------------------------------------------------

@given(st.floats(0.5, 6.0), st.floats(0.0, 200.0))
def test_even_schedule_phase(period, t):
    sch = GaitPhaseSchedule.even(period)
    frac = (t % period) / period
    if 1e-6 < abs(frac - 0.5) and frac < 1 - 1e-6 and frac > 1e-6:
        assert phase_indicator(t, sch) == (0 if frac < 0.5 else 1)
    assert sch.sigma(t) == sch.sigma(t + 3 * period)


def test_phase_indicator_rejects_bad_time():
    sch = GaitPhaseSchedule.even(1.0)
    with pytest.raises(ConfigError):
        phase_indicator(-0.1, sch)
    with pytest.raises(ConfigError):
        phase_indicator(float("nan"), sch)


def test_sample_times_on_switch_are_swing():
    sch = GaitPhaseSchedule.even(1.0)
    t = np.arange(400) / 200.0
    sig = sch.sigma(t)
    assert sig[99] == 0 and sig[100] == 1 and sig[199] == 1 and sig[200] == 0


def test_schedule_validation_and_roundtrip():
    with pytest.raises(ConfigError):
        GaitPhaseSchedule(0.0, 0.6, 0.5, 1.0)
    sch = GaitPhaseSchedule(0.0, 0.4, 0.5, 1.2)
    assert GaitPhaseSchedule.from_dict(sch.to_dict()) == sch
    assert GaitPhaseSchedule.from_dict({"cycle_period_s": 2.0}) == GaitPhaseSchedule.even(2.0)


# --- reference ------------------------------------------------------------------

@given(st.sampled_from([2.0, 3.0, 4.0]), st.floats(-3.0, 0.0), st.floats(5.0, 15.0),
       st.floats(5.0, 15.0))
def test_reference_extremes_and_derivative(period, offset, a_st, a_sw):
    sch = GaitPhaseSchedule.even(period)
    ref = ReferenceParams(offset, a_st, a_sw)
    t = np.linspace(0.0, period, 4001)
    th, thd = reference_values(t, sch, ref)
    assert th.min() == pytest.approx(offset - a_st, abs=1e-4)
    assert th.max() == pytest.approx(offset + a_sw, abs=1e-4)
    # central difference oracle for the analytic velocity
    h = 1e-6
    fd = (reference_values(t + h, sch, ref)[0] - reference_values(t - h, sch, ref)[0]) / (2 * h)
    assert np.allclose(thd, fd, atol=1e-3 * (a_st + a_sw) / period)
    assert th[0] == pytest.approx(th[-1], abs=1e-9)


def test_reference_leaving_bounds_raises():
    with pytest.raises(ConfigError):
        reference_trajectory(GaitPhaseSchedule.even(2.0), ReferenceParams(0.0, 25.0, 10.0))


def test_reference_trajectory_window_wraps():
    tr = reference_trajectory(GaitPhaseSchedule.even(1.0), ReferenceParams(), 200.0)
    assert len(tr) == 200
    w = tr.window(195, 10)
    assert np.array_equal(w[5], [tr.theta_d[0], tr.theta_dot_d[0]])


def test_augment_state_and_null_reference():
    z = augment_state(AnkleState(3.0, -4.0), (1.0, 2.0))
    assert np.array_equal(z, [2.0, -6.0, 1.0])
    Z = plant_coordinates([[3.0, -4.0], [1.0, 2.0]])
    assert np.array_equal(Z, [[3.0, -4.0, 0.0], [1.0, 2.0, 0.0]])
    with pytest.raises(DataError):
        augment_state(AnkleState(float("nan"), 0.0), (0.0, 0.0))


# --- dynamics -------------------------------------------------------------------

@given(st.floats(-20, 25), st.floats(-200, 200), st.floats(0, 30), st.integers(0, 1))
def test_rhs_matches_scalar_oracle(th, om, a, sigma):
    p = PlantParams.default()
    got = plant_rhs([th, om, a], 10.0, sigma, p)
    assert np.allclose(got, rhs_oracle([th, om, a], 10.0, sigma, p), rtol=1e-12, atol=1e-9)


def test_muscle_sign_convention(plant_params):
    x = np.array([0.0, 0.0, 20.0])
    rest = plant_rhs([0.0, 0.0, 0.0], 0.0, 0, plant_params)[1]
    assert plant_rhs(x, 20.0, 0, plant_params)[1] < rest
    rest = plant_rhs([0.0, 0.0, 0.0], 0.0, 1, plant_params)[1]
    assert plant_rhs(x, 20.0, 1, plant_params)[1] > rest


@pytest.mark.parametrize("sigma", [0, 1])
def test_rk4_step_against_adaptive_integrator(plant_params, sigma):
    dt, n, u = 0.005, 100, 18.0
    state = AnkleState(5.0, -30.0, 0.0, 4.0)
    for k in range(n):
        state = plant_step(state, u, sigma, dt, plant_params, step=k)
    sol = solve_ivp(lambda _t, x: rhs_oracle(x, u, sigma, plant_params), (0.0, n * dt),
                    [5.0, -30.0, 4.0], method="DOP853", rtol=1e-11, atol=1e-11)
    assert state.t == pytest.approx(n * dt)
    assert np.allclose(state.as_array(), sol.y[:, -1], atol=1e-4)


def test_plant_step_input_checks(plant_params):
    s = AnkleState(0.0, 0.0)
    with pytest.raises(ConfigError):
        plant_step(s, -1.0, 0, 0.005, plant_params)
    with pytest.raises(ConfigError):
        plant_step(s, 1.0, 0, 0.0, plant_params)
    with pytest.raises(IntegrationError) as info, np.errstate(invalid="ignore"):
        plant_step(AnkleState(float("inf"), 0.0), 1.0, 0, 0.005, plant_params, step=7)
    assert info.value.step == 7


def test_simulate_gait_logs_held_input(plant_params):
    sch = GaitPhaseSchedule.even(1.0)
    prof = np.linspace(0, 20, 200)
    ep = simulate_gait(plant_params, sch, prof, 1.0, 0.005)
    assert len(ep) == 200 and np.array_equal(ep.u, prof)
    assert np.array_equal(ep.sigma, sch.sigma(ep.t))
    with pytest.raises(ConfigError):
        simulate_gait(plant_params, sch, prof[:10], 1.0, 0.005)


def test_plant_params_roundtrip_and_unknown_key(plant_params):
    assert PlantParams.from_dict(plant_params.to_dict()) == plant_params
    bad = plant_params.to_dict()
    bad["mass"] = 1.0
    with pytest.raises(ConfigError):
        PlantParams.from_dict(bad)


# --- datasets -------------------------------------------------------------------

def test_dataset_is_seeded_and_bounded(plant_params):
    proto = ProtocolConfig(cycles=6, cycles_per_episode=3)
    a = generate_training_dataset(plant_params, None, proto, seed=5)
    b = generate_training_dataset(plant_params, None, proto, seed=5)
    c = generate_training_dataset(plant_params, None, proto, seed=6)
    assert len(a.episodes) == 2 and a.n_samples == 6 * 200
    for ea, eb in zip(a.episodes, b.episodes):
        assert np.array_equal(ea.theta, eb.theta) and np.array_equal(ea.u, eb.u)
    assert not np.array_equal(a.episodes[0].theta, c.episodes[0].theta)
    for ep in a.episodes:
        assert ep.u.min() >= 0.0 and ep.u.max() <= 30.0
        assert np.all(np.isfinite(ep.theta))


def test_episodes_cover_input_range(plant_params):
    proto = ProtocolConfig(cycles=10, cycles_per_episode=5)
    ds = generate_training_dataset(plant_params, None, proto, seed=1)
    for ep in ds.episodes:
        ends = ep.u[199::200]
        assert ends.min() < 6.0 and ends.max() > 24.0


def test_protocol_validation():
    with pytest.raises(ConfigError):
        ProtocolConfig(cycles=7, cycles_per_episode=2).validate()
    with pytest.raises(ConfigError):
        ProtocolConfig.from_dict({"cycles": 3, "speed": 1})
    p = ProtocolConfig(cycles=10, cycles_per_episode=5)
    assert ProtocolConfig.from_dict(p.to_dict()) == p


def test_dataset_csv_roundtrip(tmp_path, plant_params):
    ds = generate_training_dataset(plant_params, None, ProtocolConfig(cycles=3), seed=2)
    path = tmp_path / "d.csv"
    write_dataset_csv(ds, path)
    assert path.read_text().splitlines()[0] == ",".join(DATASET_HEADER)
    back = read_dataset_csv(path, 200.0)
    assert len(back.episodes) == 3
    for e0, e1 in zip(ds.episodes, back.episodes):
        for f in ("t", "theta", "theta_dot", "u", "sigma"):
            assert np.array_equal(getattr(e0, f), getattr(e1, f))


def test_dataset_csv_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        read_dataset_csv(bad)
    with pytest.raises(IOFailure):
        read_dataset_csv(tmp_path / "missing.csv")
