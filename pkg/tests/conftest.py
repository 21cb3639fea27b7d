import numpy as np
import pytest

from flowmap_ensemble.nncore import Architecture, param_count
from flowmap_ensemble.optim import init_params
from flowmap_ensemble.systems import PENDULUM_BOX, pendulum
from flowmap_ensemble.training import build_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_arch():
    return Architecture(2, 1, (5, 4))


@pytest.fixture
def small_params(small_arch, rng):
    p = init_params(small_arch, rng)
    # nonzero biases so every term of the gradient is exercised
    return p + 0.1 * rng.standard_normal(param_count(small_arch))


@pytest.fixture(scope="session")
def pendulum_data():
    return build_dataset(pendulum(), PENDULUM_BOX, 400, 0.02, 0, 10, seed=7)



def pytest_terminal_summary(terminalreporter):
    import sys

    mod = next((m for name, m in list(sys.modules.items())
                if name.endswith("test_acceptance") and hasattr(m, "RESULTS")), None)
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
