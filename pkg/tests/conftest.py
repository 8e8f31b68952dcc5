import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

from robust_recourse import (LinearModel, TrainConfig, build_ellipsoid,
                             preprocess, train)
from robust_recourse.datasets import blobs, synthetic_credit_dataset


@pytest.fixture(scope="session")
def credit_ds():
    ds = synthetic_credit_dataset(n=500, seed=3)
    return preprocess(ds, fit_rows=np.arange(ds.n), balance=True, seed=0)


@pytest.fixture(scope="session")
def credit_model(credit_ds):
    return train(credit_ds, TrainConfig(lam=1e-3))


@pytest.fixture(scope="session")
def credit_ellipsoid(credit_ds, credit_model):
    return build_ellipsoid(credit_model, credit_ds, epsilon=0.05)


@pytest.fixture()
def blob_problem():
    """Small 2-D linear problem: data, trained model, ellipsoid."""
    X, y = blobs(n=120, d=2, seed=5, separation=2.5)
    model = train((X, y), TrainConfig(lam=1e-3))
    ell = build_ellipsoid(model, X, epsilon=0.05)
    return X, y, model, ell


@pytest.fixture()
def scalar_toy():
    """The 1-D analytic instance: theta = (1, 0), H = I, eps = 0.02, t = 0.

    The certified region is x >= sqrt(0.04 / 0.96) ~ 0.2041.
    """
    from robust_recourse import from_parts
    ell = from_parts(np.array([1.0, 0.0]), np.eye(2), epsilon=0.02)
    model = LinearModel(theta=np.array([1.0, 0.0]))
    return model, ell, np.sqrt(0.04 / 0.96)
