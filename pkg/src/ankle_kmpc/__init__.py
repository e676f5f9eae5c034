"""Phase-switched Koopman predictors and tracking MPC for an FES-driven ankle."""

__version__ = "0.1.0"
