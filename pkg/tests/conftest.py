import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spdcsim.tags import TagStream

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def poisson_stream(rate, span, tick, seed, channel=0):
    rng = np.random.default_rng(seed)
    n = rng.poisson(rate * span)
    tags = np.sort(rng.integers(0, int(span / tick), n))
    return TagStream(channel, tags, tick, span)


@pytest.fixture
def make_poisson():
    return poisson_stream


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
