import numpy as np
import pytest

from proxcubic.problem import NonsmoothTerm, make_logistic


def logistic_instance(seed=0, d=20, n=500, lam=0.01, signal=3.0):
    """Logistic regression with l1 term and features scaled by 1/sqrt(d)."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d)) / np.sqrt(d)
    w = rng.standard_normal(d)
    p = 1.0 / (1.0 + np.exp(-signal * (X @ w)))
    y = np.where(rng.random(n) < p, 1.0, -1.0)
    return make_logistic(X, y, NonsmoothTerm.l1(lam))


@pytest.fixture(scope="session")
def logistic_l1():
    return logistic_instance()


def pytest_configure(config):
    config.acceptance_lines = {}


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def _report(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines[number] = line
        print(line)
        assert ok, line
    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
