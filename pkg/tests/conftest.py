"""Shared fixtures: the default experiment and data/models built from it once per session."""
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ankle_kmpc.cli import load_experiment, substream_seed
from ankle_kmpc.koopman import ObservableDictionary, fit_koopman
from ankle_kmpc.plant import PlantParams, ProtocolConfig, generate_training_dataset

settings.register_profile("ci", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture(scope="session")
def experiment():
    return load_experiment()


@pytest.fixture(scope="session")
def plant_params():
    return PlantParams.default()


@pytest.fixture(scope="session")
def small_data(plant_params):
    """Reduced identification set (40 train / 10 test cycles) for unit tests."""
    proto = ProtocolConfig(cycles=40)
    train = generate_training_dataset(plant_params, None, proto, seed=11)
    test = generate_training_dataset(plant_params, None, ProtocolConfig(cycles=10), seed=12)
    return train, test


@pytest.fixture(scope="session")
def small_model(small_data):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit_koopman(small_data[0], ObservableDictionary("custom"))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240611)


def stable_system(rng, n, m=1, radius=0.9):
    """Random ``(A, B)`` with spectral radius ``radius``."""
    A = rng.standard_normal((n, n))
    A *= radius / max(abs(np.linalg.eigvals(A)))
    B = rng.standard_normal((n, m))
    return A, B


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
