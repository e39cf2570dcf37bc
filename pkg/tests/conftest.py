"""Shared fixtures: the CGAN is trained once per session at default settings."""

import time

import numpy as np
import pytest

from cganrise import cgan
from cganrise.plant import PlantParams

TRAIN_SEED, HELD_OUT_SEED = 0, 1


@pytest.fixture(scope="session")
def d2():
    return cgan.generate_dataset(PlantParams(), 0.5, n_samples=2000, seed=TRAIN_SEED)


@pytest.fixture(scope="session")
def held_out():
    return cgan.generate_dataset(PlantParams(), 0.5, n_samples=500, seed=HELD_OUT_SEED)


@pytest.fixture(scope="session")
def trained_timed(d2):
    """(model, curve, seconds) from default-config training on N = 2000 samples."""
    t0 = time.perf_counter()
    model, curve = cgan.train_cgan(d2, cgan.CganConfig(seed=TRAIN_SEED))
    return model, curve, time.perf_counter() - t0


@pytest.fixture(scope="session")
def trained(trained_timed):
    return trained_timed[:2]


@pytest.fixture(scope="session")
def model(trained):
    return trained[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
