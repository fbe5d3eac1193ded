import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hill.potential import GibbsConfig, PotentialSpec, sample_in_ball

settings.register_profile(
    "hill", deadline=None, max_examples=25, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("hill")


def random_spec(rng, modes=4, scale=0.3, a0=None):
    a = scale * rng.standard_normal(modes) / np.arange(1, modes + 1)
    b = scale * rng.standard_normal(modes) / np.arange(1, modes + 1)
    return PotentialSpec(scale * rng.standard_normal() if a0 is None else a0, a, b)


@pytest.fixture(scope="session")
def gibbs_specs():
    """20 in-ball Gibbs draws, M=16, N=1, beta=0.1."""
    cfg = GibbsConfig(beta=0.1, big_n=1.0, mode_cut=16, seed=2024, batch=200)
    return [s.spec for s in sample_in_ball(cfg, 20)]


# ------------------------------------------------ acceptance criterion report

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, title): acceptance criterion check")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call" and not (call.when == "setup" and call.excinfo):
        return
    label, title = mark.args
    if call.excinfo is None:
        status = "PASS"
    elif call.excinfo.errisinstance(pytest.xfail.Exception) or item.get_closest_marker("xfail"):
        status = "FAIL (expected, analysed in the notes)"
    else:
        status = "FAIL"
    _CRITERIA[label] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: (int("".join(c for c in s if c.isdigit())), s)):
        title, status = _CRITERIA[label]
        terminalreporter.write_line(f"criterion {label:<3} {status:<6} {title}")
