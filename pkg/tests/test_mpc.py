import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from ankle_kmpc.errors import ConfigError, DataError
from ankle_kmpc.koopman import ObservableDictionary
from ankle_kmpc.mpc import (RUN_HEADER, LinearPredictor, MpcConfig, MpcController,
                            SolverSettings, build_horizon_problem, closed_loop_run, condense,
                            make_predictor, read_run_csv, solve_dare, solve_horizon,
                            terminal_weights, write_run_csv)
from ankle_kmpc.mpc.problem import constant_observables
from ankle_kmpc.plant import GaitPhaseSchedule, ReferenceParams

from conftest import stable_system

INF = math.inf


def random_predictor(rng, n=4, L=1, radius=0.95):
    A, B = [], []
    for _ in range(2):
        a, _ = stable_system(rng, n, 1, radius)
        A.append(a)
        B.append(rng.normal(size=(n, L)))
    C = rng.normal(size=(2, n))
    return LinearPredictor(tuple(A), tuple(B), C, lambda Z: np.asarray(Z)[-1], L, "random")


def free_config(T, **kw):
    base = dict(horizon=T, input_bounds=((-1e3, 1e3), (-1e3, 1e3)), angle_bounds=(-INF, INF),
                terminal_set="off", Q=((1.0, 0.0), (0.0, 0.3)), R=(0.05, 0.2))
    base.update(kw)
    return MpcConfig(**base).validate()


def simulate(pred, x0, U, sigmas, p):
    """Brute-force rollout; ``p`` holds past inputs, most recent first."""
    L = pred.embedding
    useq = list(np.asarray(p)[::-1]) + list(U)
    x = np.asarray(x0, float)
    ys, off = [], L - 1
    for j, s in enumerate(sigmas):
        ulift = np.array([useq[off + j - i] for i in range(L)])
        x = pred.A[s] @ x + pred.B[s] @ ulift
        ys.append(pred.C_out @ x)
    return np.array(ys), x


def some_S(pred, rng):
    W = rng.normal(size=(pred.n_x, pred.n_x))
    return (W @ W.T, 2 * W @ W.T + np.eye(pred.n_x))


# --- condensation --------------------------------------------------------------

@given(st.integers(0, 5000), st.integers(1, 4), st.lists(st.integers(0, 1), min_size=2,
                                                          max_size=12))
def test_condensation_matches_rollout(seed, L, sigmas):
    rng = np.random.default_rng(seed)
    pred = random_predictor(rng, 5, L)
    T = len(sigmas)
    cfg = free_config(T)
    S = some_S(pred, rng)
    cond = condense(pred, sigmas, cfg, S)
    x0, U, p = rng.normal(size=5), rng.normal(size=T), rng.normal(size=L - 1)
    y, xT = simulate(pred, x0, U, sigmas, p)
    y_c = cond.Gy @ U + cond.Py @ x0 + (cond.My @ p if L > 1 else 0)
    x_c = cond.Gt @ U + cond.Pt @ x0 + (cond.Mt @ p if L > 1 else 0)
    assert np.allclose(y_c.reshape(-1, 2), y, atol=1e-9)
    assert np.allclose(x_c, xT, atol=1e-9)
    assert np.array_equal(cond.step_phase, sigmas)
    assert cond.S is S[sigmas[-1]]


@given(st.integers(0, 5000), st.integers(1, 3), st.integers(0, 9))
def test_switch_changes_only_later_rows(seed, L, j):
    rng = np.random.default_rng(seed)
    pred = random_predictor(rng, 4, L)
    T = 10
    sig = [0] * T
    flipped = list(sig)
    flipped[j] = 1
    cfg = free_config(T)
    S = some_S(pred, rng)
    a, b = condense(pred, sig, cfg, S), condense(pred, flipped, cfg, S)
    # outputs before the switched step see only stance operators
    assert np.array_equal(a.Gy[:2 * j], b.Gy[:2 * j])
    assert np.array_equal(a.Py[:2 * j], b.Py[:2 * j])
    assert not np.allclose(a.Py[2 * j:2 * j + 2], b.Py[2 * j:2 * j + 2])


def test_unused_phase_operators_do_not_enter(rng):
    pred = random_predictor(rng, 4, 2)
    other = replace(pred, A=(pred.A[0], 10 * pred.A[1]), B=(pred.B[0], -pred.B[1]))
    cfg = free_config(6)
    S = some_S(pred, rng)
    a, b = condense(pred, [0] * 6, cfg, S), condense(other, [0] * 6, cfg, S)
    for f in ("Gy", "Py", "My", "Gt", "Pt", "Mt", "H"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


@given(st.integers(0, 5000), st.lists(st.integers(0, 1), min_size=2, max_size=10))
def test_quadratic_cost_matches_direct_evaluation(seed, sigmas):
    rng = np.random.default_rng(seed)
    L = 2
    pred = random_predictor(rng, 4, L)
    T = len(sigmas)
    cfg = free_config(T)
    S = some_S(pred, rng)
    x0, U, ref = rng.normal(size=4), rng.normal(size=T), rng.normal(size=(T, 2))
    xr, past = rng.normal(size=4), rng.normal(size=1)
    prob = build_horizon_problem(pred, x0, ref, sigmas, cfg, S, xr, past)
    y, xT = simulate(pred, x0, U, sigmas, past)
    Q = cfg.Q_matrix
    e = y[:-1] - ref[:-1]
    d = xT - xr
    J = (np.einsum("ij,jk,ik->", e, Q, e) + sum(cfg.R[s] * u * u for s, u in zip(sigmas, U))
         + d @ S[sigmas[-1]] @ d)
    assert prob.quadratic_cost(U) == pytest.approx(J, rel=1e-10, abs=1e-10)
    assert np.allclose(prob.H, prob.H.T)
    assert np.linalg.eigvalsh(prob.H).min() > 0


@given(st.integers(0, 5000), st.sampled_from(["soft", "hard"]))
def test_objective_gradient_finite_difference(seed, mode):
    rng = np.random.default_rng(seed)
    pred = random_predictor(rng, 4, 1)
    T = 6
    cfg = free_config(T, angle_bounds=(-0.5, 0.5), velocity_bounds=(-1.0, 1.0),
                      terminal_set=mode, epsilon=0.2, state_penalty=7.0,
                      terminal_penalty=3.0)
    S = some_S(pred, rng)
    prob = build_horizon_problem(pred, rng.normal(size=4), rng.normal(size=(T, 2)),
                                 rng.integers(0, 2, T), cfg, S)
    U = rng.normal(size=T)
    n = prob.finite_rows.size
    lam = (rng.uniform(0, 2, n), rng.uniform(0, 2, n)) if mode == "hard" else None
    lt = 0.7 if mode == "hard" else 0.0
    f, g = prob.objective(U, lam, lt, 5.0, 2.0)
    h = 1e-6
    fd = np.array([(prob.objective(U + h * e, lam, lt, 5.0, 2.0)[0]
                    - prob.objective(U - h * e, lam, lt, 5.0, 2.0)[0]) / (2 * h)
                   for e in np.eye(T)])
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-5 * (1 + abs(f)))


# --- solver --------------------------------------------------------------------

TIGHT = SolverSettings(max_iter=20_000, tol=1e-10)


@given(st.integers(0, 5000))
def test_unconstrained_solution_matches_dense_solve(seed):
    rng = np.random.default_rng(seed)
    pred = random_predictor(rng, 4, 1)
    T = 12
    cfg = free_config(T, solver=TIGHT)
    S = some_S(pred, rng)
    prob = build_horizon_problem(pred, rng.normal(size=4), rng.normal(size=(T, 2)),
                                 rng.integers(0, 2, T), cfg, S)
    U_star = -np.linalg.solve(prob.H, prob.g)
    sol = solve_horizon(prob, None, cfg.solver)
    assert sol.converged
    assert np.allclose(sol.u, U_star, atol=1e-7 * (1 + np.abs(U_star).max()))


@given(st.integers(0, 5000))
def test_box_solution_matches_reference_optimizer(seed):
    rng = np.random.default_rng(seed)
    pred = random_predictor(rng, 4, 1)
    T = 10
    cfg = free_config(T, input_bounds=((0.0, 0.4), (-0.2, 0.3)), solver=TIGHT)
    S = some_S(pred, rng)
    prob = build_horizon_problem(pred, rng.normal(size=4), rng.normal(size=(T, 2)),
                                 rng.integers(0, 2, T), cfg, S)
    sol = solve_horizon(prob, None, cfg.solver)
    assert np.all(sol.u >= prob.lo) and np.all(sol.u <= prob.hi)
    ref = minimize(prob.quadratic_cost, np.zeros(T), jac=lambda U: prob.H @ U + prob.g,
                   bounds=list(zip(prob.lo, prob.hi)), method="L-BFGS-B",
                   options=dict(ftol=1e-15, gtol=1e-12, maxiter=10_000))
    assert prob.quadratic_cost(sol.u) <= ref.fun + 1e-8 * (1 + abs(ref.fun))


def test_soft_mode_cost_is_monotone(rng):
    pred = random_predictor(rng, 4, 1)
    T = 15
    cfg = free_config(T, input_bounds=((0.0, 1.0), (0.0, 1.0)), angle_bounds=(-0.3, 0.3),
                      terminal_set="soft", epsilon=0.1)
    prob = build_horizon_problem(pred, rng.normal(size=4), np.zeros((T, 2)),
                                 [0] * 7 + [1] * 8, cfg, some_S(pred, rng))
    sol = solve_horizon(prob)
    h = np.array(sol.cost_history)
    assert np.all(np.diff(h) <= 1e-14 * (1 + np.abs(h[:-1])))


def test_hard_mode_enforces_state_box(rng):
    # a double integrator pushed towards a reference outside the angle box
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.0], [0.1]])
    pred = LinearPredictor((A, A), (B, B), np.eye(2), lambda Z: np.asarray(Z)[-1], 1)
    T = 20
    cfg = free_config(T, angle_bounds=(-1.0, 1.0), Q=((1.0, 0.0), (0.0, 0.01)),
                      R=(0.05, 0.05), input_bounds=((-5.0, 5.0), (-5.0, 5.0)))
    S = (np.eye(2), np.eye(2))
    ref = np.column_stack([np.full(T, 3.0), np.zeros(T)])
    soft = build_horizon_problem(pred, np.zeros(2), ref, [0] * T, cfg, S)
    hard_cfg = replace(cfg, state_constraints="hard",
                       solver=SolverSettings(max_iter=2000, max_outer=12))
    hard = build_horizon_problem(pred, np.zeros(2), ref, [0] * T, hard_cfg, S)
    s_sol, h_sol = solve_horizon(soft), solve_horizon(hard, None, hard_cfg.solver)
    assert soft.violations(s_sol.u)[0] > 1e-3
    assert hard.violations(h_sol.u)[0] <= hard_cfg.solver.constraint_tol
    assert h_sol.converged


def test_timing_flag_zeroes_solve_time(rng):
    pred = random_predictor(rng)
    cfg = free_config(5)
    prob = build_horizon_problem(pred, np.ones(4), np.zeros((5, 2)), [0] * 5, cfg,
                                 some_S(pred, rng))
    assert solve_horizon(prob, record_timing=False).solve_ms == 0.0
    assert solve_horizon(prob, record_timing=True).solve_ms > 0.0


def test_infeasible_input_bounds_rejected():
    with pytest.raises(ConfigError):
        MpcConfig(input_bounds=((5.0, 1.0), (0.0, 30.0))).validate()


# --- terminal weights ----------------------------------------------------------

def test_lqr_equivalence_short_horizon(rng):
    """Unconstrained receding horizon with the DARE terminal weight reproduces LQR."""
    A = np.array([[1.02, 0.05], [-0.1, 0.97]])
    B = np.array([[0.01], [0.2]])
    pred = LinearPredictor((A, A), (B, B), np.eye(2), lambda Z: np.asarray(Z)[-1], 1)
    cfg = free_config(8, R=(0.1, 0.1), solver=TIGHT)
    S = terminal_weights(pred, cfg)
    Sd = solve_dare(A, B, cfg.Q_matrix, [[0.1]])
    assert np.allclose(S[0], Sd)
    K = np.linalg.solve(0.1 + B.T @ Sd @ B, B.T @ Sd @ A)
    x = np.array([1.0, -0.5])
    for _ in range(30):
        prob = build_horizon_problem(pred, x, np.zeros((8, 2)), [0] * 8, cfg, S)
        u = solve_horizon(prob, None, cfg.solver).u[0]
        assert u == pytest.approx(float((-K @ x)[0]), abs=1e-7)
        x = A @ x + B[:, 0] * u


def test_constant_observables():
    assert constant_observables(ObservableDictionary("state")) == (2,)
    assert constant_observables(ObservableDictionary("custom")) == (2, 3)
    d = ObservableDictionary("trig")
    fixed = constant_observables(d)
    assert [d.labels[i] for i in fixed] == ["z3", "sin(1*z3)", "cos(1*z3)", "sin(2*z3)",
                                            "cos(2*z3)"]
    assert constant_observables(ObservableDictionary("custom", 2)) == (2, 3, 14, 15)


def test_terminal_weights_on_fitted_model(small_model):
    pred = make_predictor(small_model, "lifted")
    cfg = MpcConfig()
    S = terminal_weights(pred, cfg)
    for s in (0, 1):
        assert np.array_equal(S[s], S[s].T)
        assert np.linalg.eigvalsh(S[s]).min() > -1e-8
        for i in pred.fixed:
            assert not S[s][i].any() and not S[s][:, i].any()
    proj = make_predictor(small_model, "projected")
    assert proj.A[0].shape == (3, 3)
    assert all(np.isfinite(x).all() for x in terminal_weights(proj, cfg))
    with pytest.raises(ConfigError):
        make_predictor(small_model, "bogus")


# --- controller and closed loop ----------------------------------------------

def test_controller_rejects_mismatched_model(small_model):
    sch = GaitPhaseSchedule.even(2.0)
    with pytest.raises(DataError):
        MpcController(small_model, MpcConfig(dictionary="trig"), sch)
    with pytest.raises(DataError):
        MpcController(small_model, MpcConfig(embedding=8), sch)


def test_horizon_phases_follow_schedule(small_model):
    sch = GaitPhaseSchedule.even(2.0)
    ctrl = MpcController(small_model, MpcConfig(), sch)
    t = 0.95
    sig = ctrl.horizon_phases(t)
    assert np.array_equal(sig, sch.sigma(t + 0.005 * np.arange(20)))
    assert sig[0] == 0 and sig[-1] == 1


def test_short_closed_loop_run(tmp_path, small_model, plant_params):
    sch = GaitPhaseSchedule.even(2.0)
    cfg = MpcConfig(record_timing=False)
    run = closed_loop_run(plant_params, small_model, cfg, sch, ReferenceParams(), 2.0)
    assert len(run.t) == 400
    assert run.input_violations == 0 and run.angle_violations == 0
    assert run.rmse < 2.0
    assert np.all(run.solve_ms == 0.0)
    path = tmp_path / "run.csv"
    write_run_csv(run, path)
    assert path.read_text().splitlines()[0] == ",".join(RUN_HEADER)
    back = read_run_csv(path, 2.0)
    assert np.array_equal(back.theta, run.theta) and np.array_equal(back.u, run.u)
    assert back.summary()["rmse_deg"] == run.summary()["rmse_deg"]


def test_run_csv_errors(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n")
    with pytest.raises(DataError):
        read_run_csv(p, 1.0)


def test_mpc_config_roundtrip_and_unknown_key():
    cfg = MpcConfig(horizon=10, state_constraints="hard")
    assert MpcConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        MpcConfig.from_dict({"horizon": 3})
    with pytest.raises(ConfigError):
        MpcConfig(Q=((1.0, 0.0), (0.0, -1.0))).validate()
