import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from heckman_smn.sel_model import SelectionData
from heckman_smn.sim_gen import SimConfig, simulate
from heckman_smn.smn_dist import StudentT

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_data(n=50, seed=0, family=None) -> SelectionData:
    cfg = SimConfig(n=max(n, 50), error_family=family or StudentT(4.0))
    s = simulate(cfg, np.random.default_rng(seed))
    if n < 50:
        keep = np.r_[np.flatnonzero(s.c == 1)[: n - 1], np.flatnonzero(s.c == 0)[:1]]
        return SelectionData(s.y[keep], s.c[keep], s.x[keep], s.w[keep])
    return s.data


@pytest.fixture(scope="session")
def data50() -> SelectionData:
    return make_data(50, seed=7)


@pytest.fixture(scope="session")
def data100() -> SelectionData:
    return make_data(100, seed=8)


ACCEPTANCE_LINES = []


def record_criterion(label: str, passed: bool, detail: str) -> bool:
    line = f"{label} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
