"""Independent reference implementations used as test oracles."""

import math

import matplotlib
import numpy as np
import pytest
from scipy.integrate import quad_vec

matplotlib.use("Agg")


def naive_adev(x, m, dt=1.0):
    """Overlapping ADEV written as a plain loop over second differences."""
    x = [float(v) for v in x]
    n = len(x)
    acc = 0.0
    for i in range(n - 2 * m):
        d = x[i + 2 * m] - 2.0 * x[i + m] + x[i]
        acc += d * d
    tau = m * dt
    return math.sqrt(acc / (2.0 * tau * tau * (n - 2 * m)))


def integrated_q(tau, q1, q2, q3):
    """Process covariance as the integral of Phi(s) diag(q) Phi(s)^T over [0, tau]."""

    def integrand(s):
        phi = np.array([[1.0, s, s * s / 2], [0.0, 1.0, s], [0.0, 0.0, 1.0]])
        return phi @ np.diag([q1, q2, q3]) @ phi.T

    value, _ = quad_vec(integrand, 0.0, tau, epsabs=0.0, epsrel=1e-13)
    return value


def lstsq_poly(t, x, deg=2):
    """Least-squares polynomial coefficients, lowest order first."""
    A = np.vander(np.asarray(t, float), deg + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(A, np.asarray(x, float), rcond=None)
    return coef


def rel_err(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    scale = max(np.max(np.abs(b)), np.finfo(float).tiny)
    return float(np.max(np.abs(a - b)) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
