import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shapheno.models.gbm import TrainConfig, train_gbm
from shapheno.syncohort import Cohort, SyntheticConfig, generate_cohort

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_cohort(rng, n=120, p=5, missing=0.0):
    X = rng.standard_normal((n, p))
    logit = X[:, 0] - 0.8 * X[:, 1] + 0.5 * X[:, 0] * X[:, 2]
    y = (rng.random(n) < 1 / (1 + np.exp(-2 * logit))).astype(int)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    if missing:
        X[rng.random(X.shape) < missing] = np.nan
    return Cohort(X, y, [f"f{i}" for i in range(p)])


@pytest.fixture(scope="session")
def small_synthetic():
    return generate_cohort(SyntheticConfig(n_samples=600, seed=11))


@pytest.fixture(scope="session")
def small_model(small_synthetic):
    return train_gbm(small_synthetic, TrainConfig(n_trees=40))


@pytest.fixture(scope="session")
def default_cohort():
    return generate_cohort(SyntheticConfig())


@pytest.fixture(scope="session")
def default_model(default_cohort):
    return train_gbm(default_cohort, TrainConfig())


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
