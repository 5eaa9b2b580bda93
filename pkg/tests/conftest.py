"""
Shared fixtures: bundled feeders, profile moments and a small synthetic dataset.
"""

import numpy as np
import pytest

from dispatch import build_problem, solve_dispatch
from feeder_model import load_bundled_feeder
from synthetic import SyntheticSettings, generate_dataset, moments_from_profile


@pytest.fixture(scope="session")
def three_bus():
    return load_bundled_feeder("three_bus")


@pytest.fixture(scope="session")
def feeder13():
    return load_bundled_feeder("ieee13_synthetic")


@pytest.fixture(scope="session")
def two_pv():
    return load_bundled_feeder("two_pv")


@pytest.fixture(scope="session")
def moments13(feeder13):
    return moments_from_profile(feeder13, horizon=24)


@pytest.fixture(scope="session")
def drcc13(feeder13, moments13):
    """Full-day DRCC dispatch at epsilon 0.05; some lower-voltage rows bind."""
    problem = build_problem(feeder13, moments13, "drcc", epsilon=0.05, start_hour=0, horizon=24)
    return problem, solve_dispatch(problem)


@pytest.fixture(scope="session")
def evening_two_pv(two_pv):
    """Hour-19 moments at heavy load and the lowest alpha = 0 mean voltage."""
    moments = moments_from_profile(two_pv, horizon=1, start_hour=19, load_level=0.8)
    hp = build_problem(two_pv, moments, "det", horizon=1, start_hour=19).hours[0]
    return moments, float(hp.model.voltages(hp.mu, np.zeros(2)).min())


@pytest.fixture(scope="session")
def three_bus_dataset(three_bus):
    return generate_dataset(three_bus, SyntheticSettings(days=3, samples_per_hour=60, seed=1))


@pytest.fixture
def feeder_doc():
    """Minimal valid three-bus document, safe to mutate."""
    diag = [[0.01, 0.0, 0.0], [0.0, 0.01, 0.0], [0.0, 0.0, 0.01]]
    return {
        "root": "1",
        "v0": 1.0,
        "buses": [{"id": "1", "phases": "abc"}, {"id": "2", "phases": "abc"}, {"id": "3", "phases": "abc"}],
        "lines": [
            {"from": "1", "to": "2", "r": diag, "x": [[2 * v for v in row] for row in diag]},
            {"from": "2", "to": "3", "r": diag, "x": [[2 * v for v in row] for row in diag]},
        ],
    }
