"""Shared helpers for the test suite."""

import numpy as np
import pytest


def central_diff(fun, x, step=1e-5):
    """Central finite difference of a scalar function of a scalar."""
    return (fun(x + step) - fun(x - step)) / (2.0 * step)


def grad_central_diff(fun, theta, step=1e-5):
    """Central finite-difference gradient of a scalar function of a flat vector."""
    theta = np.asarray(theta, dtype=float)
    g = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[i] += step
        dn[i] -= step
        g[i] = (fun(up) - fun(dn)) / (2.0 * step)
    return g


def rel_err(a, b, floor=1e-8):
    """Normwise relative error between two gradient vectors."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return np.linalg.norm(a - b) / denom


def scalar_rel_err(exact, approx, floor=1e-3):
    """Relative error with a floor so true zeros do not blow up the ratio."""
    return abs(exact - approx) / max(abs(exact), abs(approx), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
