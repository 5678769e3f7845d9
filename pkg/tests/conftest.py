import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hybrid_sysid.signal import MultiChannelSignal

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def white(n, channels=1, seed=0, fs=1000.0, names=None):
    rng = np.random.default_rng(seed)
    names = names or tuple(f"u{i}" for i in range(channels))
    return MultiChannelSignal(fs, names, rng.standard_normal((n, len(names))))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance tests record one verdict line per criterion; printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
