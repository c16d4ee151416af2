import numpy as np
import pytest
from scipy.special import ndtr

from epprobit.ep_engine import Dataset


def make_dataset(seed, n, p, nu2=25.0, scale=0.5):
    """Seeded probit data with beta* ~ N(0, scale^2 / p * 4)."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    beta = rng.normal(0.0, scale * 2.0 / np.sqrt(p), p)
    y = (rng.random(n) < ndtr(X @ beta)).astype(int)
    return Dataset(X, y, nu2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    key = props["criterion"]
    if report.when == "call" or report.failed:
        prev = _CRITERIA.get(key)
        ok = report.passed and (prev is None or prev[0])
        _CRITERIA[key] = (ok, props.get("title", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_CRITERIA):
        ok, title = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {title}")
