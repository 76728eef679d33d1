import math

import pytest

from chemotax import Grid, ModelParams, linear_kinetics


_CRITERIA: dict[str, bool] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    if report.when == "call" or report.failed:
        _CRITERIA[m.args[0]] = _CRITERIA.get(m.args[0], True) and report.passed


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda s: int(s[2:])):
        terminalreporter.write_line(f"{name}: {'PASS' if _CRITERIA[name] else 'FAIL'}")


@pytest.fixture
def base_params():
    return ModelParams(1.0, 1.0, 4.0, 1.0, math.pi, linear_kinetics(1.0))


@pytest.fixture
def grid64():
    return Grid(64, math.pi)


def make_params(d1=1.0, d2=1.0, chi=4.0, ubar=1.0, beta=1.0, length=math.pi):
    return ModelParams(d1, d2, chi, ubar, length, linear_kinetics(beta))
