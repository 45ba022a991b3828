import numpy as np
import pytest

from nets import random_net


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net(rng):
    return random_net(rng)


@pytest.fixture(scope="session")
def toy():
    """Default 2-class toy problem trained for seed 0 (cached per process)."""
    from relprune.experiments import prepare
    from relprune.toylab import SyntheticSpec

    return prepare(SyntheticSpec(seed=0))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
