import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cdpauth.attack import EstimatorSpec
from cdpauth.channel import DEFAULT_PROFILES
from cdpauth.dataset import attack, synthesize

settings.register_profile("cdpauth", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("cdpauth")

PROFILES = list(DEFAULT_PROFILES.values())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_tuples():
    """Twelve 16x16 tuples with both default printers on each side."""
    return attack(synthesize(12, 16, 0.5, PROFILES, seed=3), EstimatorSpec(), PROFILES, seed=5)


# -- acceptance reporting -----------------------------------------------------------
# Tests marked ``criterion("name")`` get one PASS/FAIL line in the terminal summary.

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")
    config._criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    item.config._criteria.append((marker.args[0], report.passed, detail))


def pytest_terminal_summary(terminalreporter, config):
    if not config._criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in config._criteria:
        line = f"{'PASS' if passed else 'FAIL'}  {name}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
