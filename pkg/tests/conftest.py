import numpy as np
import pytest

from doubleboot.panel import FactorPanel, ReturnPanel


def random_panel(D=60, N=8, seed=0, mean=0.005, vol=0.03, missing=0.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(mean, vol, (D, N))
    if missing:
        holes = rng.uniform(size=X.shape) < missing
        holes[:10] = False  # keep every column estimable
        X[holes] = np.nan
    return ReturnPanel.from_array(X)


def random_factors(D=60, K=3, seed=1):
    rng = np.random.default_rng(seed)
    return FactorPanel(rng.normal(0.004, 0.04, (D, K)), tuple(range(D)))


@pytest.fixture
def panel():
    return random_panel()


@pytest.fixture
def gappy_panel():
    return random_panel(D=80, N=12, seed=5, missing=0.2)


@pytest.fixture
def factors():
    return random_factors()


# acceptance verdict lines, echoed after the run even when output is captured
VERDICTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for tag in sorted(VERDICTS, key=lambda t: int(t[1:])):
            terminalreporter.write_line(VERDICTS[tag])
