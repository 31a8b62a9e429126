import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from anisocox.geometry import PointPattern, Window

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit():
    return Window.unit()


def poisson_pattern(rng, lam, window=None, type_id=1):
    w = Window.unit() if window is None else window
    n = rng.poisson(lam * w.area)
    pts = np.column_stack([rng.uniform(w.x_min, w.x_max, n), rng.uniform(w.y_min, w.y_max, n)])
    return PointPattern(pts, w, type_id)


@pytest.fixture(autouse=True)
def _quiet_model_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*sufficient condition.*")
        yield


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def report(request):
    """Record and print the one-line verdict of an acceptance criterion."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def _report(n, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        lines.append((n, line))
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
