from .config import MpcConfig, SolverSettings
from .controller import (RUN_HEADER, MpcController, RunReport, calibrate_epsilon,
                         closed_loop_run, mpc_step,
                         read_run_csv, write_run_csv)
from .dare import dare_residual, lqr_gain, solve_dare
from .problem import (Condensation, HorizonProblem, LinearPredictor, build_horizon_problem,
                      condense, make_predictor, terminal_weights)
from .solver import MpcSolution, solve_horizon

__all__ = [
    "MpcConfig", "SolverSettings", "RUN_HEADER", "MpcController", "RunReport",
    "calibrate_epsilon", "closed_loop_run", "mpc_step", "read_run_csv", "write_run_csv", "dare_residual",
    "lqr_gain", "solve_dare", "Condensation", "HorizonProblem", "LinearPredictor",
    "build_horizon_problem", "condense", "make_predictor", "terminal_weights",
    "MpcSolution", "solve_horizon",
]
