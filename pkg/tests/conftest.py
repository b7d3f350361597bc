import numpy as np
import pytest

from dmcc import kernels
from dmcc.synth import SyntheticWorldConfig, generate_world

_CRITERIA = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["numba", "numpy"])
def kernel_impl(request):
    """Both kernel implementations, so each test runs against each path."""
    if request.param == "numba":
        return {"features": kernels.features_numba, "forward": kernels.forward_numba,
                "loss_grad": kernels.loss_grad_numba, "adam": kernels.adam_numba}
    return {"features": kernels.features_numpy, "forward": kernels.forward_numpy,
            "loss_grad": kernels.loss_grad_numpy, "adam": kernels.adam_numpy}


@pytest.fixture(scope="session")
def small_world():
    return generate_world(SyntheticWorldConfig(scene_count=40, rng_seed=7))


@pytest.fixture(scope="session")
def criteria():
    """Collector for acceptance lines printed in the terminal summary."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
