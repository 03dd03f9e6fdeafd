"""Finite differences, root bracketing, power iteration."""

import numpy as np
import pytest

from limitset import numerics as nm
from limitset.numerics import (fd_derivative, bracketed_root, power_iteration,
                               NumericalPolicy)


def test_fd_first_derivative():
    r = fd_derivative(np.sin, 0.0, order=1)
    assert abs(r.value - 1.0) <= 1e-10
    assert r.error_estimate >= 0
    assert r.steps == (nm.DEFAULT_POLICY.fd_delta, nm.DEFAULT_POLICY.fd_delta / 2)


def test_fd_second_derivative():
    r = fd_derivative(lambda x: x ** 4, 1.0, order=2)
    assert abs(r.value - 12.0) <= 1e-6


def test_fd_mixed_partial():
    r = fd_derivative(lambda x, y: x * y, (0.3, -0.7), mixed=True)
    assert abs(r.value - 1.0) <= 1e-8


def test_fd_error_estimate_is_valid_proxy():
    # on analytic test functions the true error is <= 10x the estimate
    cases = [
        (np.sin, 0.3, 1, np.cos(0.3)),
        (np.exp, 0.5, 1, np.exp(0.5)),
        (np.exp, 0.5, 2, np.exp(0.5)),
        (lambda x: x ** 5, 1.0, 2, 20.0),
        (np.cos, 1.1, 2, -np.cos(1.1)),
    ]
    for f, x, order, truth in cases:
        r = fd_derivative(f, x, order=order)
        assert abs(r.value - truth) <= 10 * r.error_estimate + 1e-12


def test_fd_evaluator_failure_reports_location():
    def bad(x):
        if x > 1.0:
            raise FloatingPointError("boom")
        return x
    with pytest.raises(nm.EvaluatorFailure) as ei:
        fd_derivative(bad, 1.0, order=1)
    assert ei.value.location == 1.0 + nm.DEFAULT_POLICY.fd_delta


def test_bracketed_root_sqrt2():
    root, res, its = bracketed_root(lambda x: x * x - 2, (1.0, 2.0))
    assert abs(root - np.sqrt(2)) <= 1e-10
    assert res <= 1e-12
    assert its <= 60


def test_bracketed_root_decreasing():
    root, res, _ = bracketed_root(lambda x: np.exp(-x) - 0.5, (0.0, 2.0))
    assert abs(root - np.log(2)) <= 1e-10


def test_bracketed_root_failure():
    with pytest.raises(nm.BracketFailure):
        bracketed_root(lambda x: x * x + 1, (0.0, 1.0))


def test_bracketed_root_random_monotone():
    rng = np.random.default_rng(10)
    for _ in range(50):
        a = 0.5 + rng.random()
        c = rng.normal()
        root, res, _ = bracketed_root(lambda x: a * x + c, (-100.0, 100.0))
        assert abs(root - (-c / a)) <= 1e-9
        assert res <= 1e-9


def test_power_iteration_diagonal():
    lam, v, res, _ = power_iteration(np.diag([2.0, 1.0]))
    assert abs(lam - 2.0) <= 1e-10
    assert np.allclose(np.abs(v), [1.0, 0.0], atol=1e-6)


def test_power_iteration_ones():
    lam, v, res, ratio = power_iteration(np.ones((2, 2)))
    assert abs(lam - 2.0) <= 1e-12
    assert np.allclose(v, np.ones(2) / np.sqrt(2), atol=1e-10)
    assert res <= 1e-12


def test_power_iteration_random_positive():
    rng = np.random.default_rng(11)
    for _ in range(20):
        A = rng.random((50, 50)) + 0.01
        lam, v, res, ratio = power_iteration(A)
        assert res <= 1e-12
        # oracle: dense eigensolver
        ev = np.linalg.eigvals(A)
        assert abs(lam - ev[np.argmax(np.abs(ev))].real) <= 1e-10 * abs(lam)
        assert ratio < 1


def test_power_iteration_left():
    A = np.array([[2.0, 1.0], [0.0, 1.0]])
    lam, v, res, _ = power_iteration(A, left=True)
    assert abs(lam - 2.0) <= 1e-10
    # left eigenvector of A = right eigenvector of A.T
    w = A.T @ v
    assert np.abs(w - lam * v).max() <= 1e-10


def test_power_iteration_nonconvergence():
    with pytest.raises(nm.NoConvergence):
        power_iteration(np.zeros((3, 3)))


def test_policy_record():
    p = NumericalPolicy(fd_delta=0.1)
    r = fd_derivative(np.sin, 0.0, order=1, delta=p.fd_delta)
    assert abs(r.value - 1.0) <= 1e-6
