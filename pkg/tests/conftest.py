import numpy as np
import pytest

from kronfold.dataset import MatrixDataset, SyntheticSpec, synth_kron

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_dataset(rng):
    return MatrixDataset(rng.standard_normal((9, 6, 5)), rng.integers(0, 3, 9), 3)


@pytest.fixture(scope="session")
def synth_small():
    """N=50, 16x12 samples from two pairs with 4x4 cores, light noise."""
    data, pairs, cores = synth_kron(SyntheticSpec(16, 12, 50, 2, (4, 4), 0.05, 3, seed=3))
    return data


def orthonormal(rng, n, k):
    Q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return Q


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
