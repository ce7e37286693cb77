import numpy as np
import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion_log(request):
    """Collects one summary line per acceptance criterion."""
    return request.config.stash.setdefault(_LINES, [])


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training benchmarks")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
