import numpy as np
import pytest

from gpumem.data import FeatureSpec, apply_scaler, fit_scaler, generate_synthetic


class Tabular:
    """Synthetic records with their spec, scaler and encoding."""

    def __init__(self, n, seed):
        self.records = generate_synthetic(n, seed)
        self.spec = FeatureSpec.from_records(self.records)
        self.scaler = fit_scaler(self.records, range(n))
        self.enc = apply_scaler(self.records, self.scaler, self.spec)


@pytest.fixture(scope="session")
def small_data():
    return Tabular(12, 3)


@pytest.fixture(scope="session")
def data32():
    return Tabular(32, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
