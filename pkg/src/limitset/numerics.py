"""Shared numerical kernels: finite differences with Richardson error
estimates, bracketed root finding, power iteration.

All defaults live in one policy record so every caller inherits the same
step sizes, caps, and tolerances.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NumericalPolicy:
    fd_delta: float = 1e-2          # base FD step; Richardson pairs it with /2
    bisect_width: float = 1e-6      # bracket width before switching to secant
    secant_residual: float = 1e-12
    root_iter_cap: int = 60
    power_residual: float = 1e-12
    power_iter_cap: int = 10 ** 4


DEFAULT_POLICY = NumericalPolicy()


class EvaluatorFailure(RuntimeError):
    """Evaluator raised at a stencil point."""

    def __init__(self, location, cause):
        super().__init__(f"evaluator failed at {location!r}: {cause}")
        self.location = location
        self.cause = cause


class BracketFailure(ValueError):
    """No sign change on the supplied bracket."""


class NoConvergence(RuntimeError):
    """Iteration produced non-finite values."""


@dataclass(frozen=True)
class FdResult:
    value: float
    error_estimate: float   # Richardson gap; >= 0
    steps: tuple


def _eval(f, x):
    try:
        return f(x)
    except Exception as e:  # noqa: BLE001 - reported with stencil location
        raise EvaluatorFailure(x, e) from e


def _central(f, x, delta, order):
    if order == 1:
        return (_eval(f, x + delta) - _eval(f, x - delta)) / (2 * delta)
    return (_eval(f, x + delta) - 2 * _eval(f, x) + _eval(f, x - delta)) / delta ** 2


def _cross(f, x, y, delta):
    return (_eval(lambda p: f(*p), (x + delta, y + delta))
            - _eval(lambda p: f(*p), (x + delta, y - delta))
            - _eval(lambda p: f(*p), (x - delta, y + delta))
            + _eval(lambda p: f(*p), (x - delta, y - delta))) / (4 * delta ** 2)


def fd_derivative(f, x, order=1, mixed=False, delta=None):
    """Central-difference derivative with Richardson extrapolation.

    order 1 or 2 for d/dx and d^2/dx^2 of a scalar function; mixed=True
    treats f as f(x, y) with x a pair and returns the mixed partial via the
    4-point cross stencil. Both steps {delta, delta/2} are evaluated and the
    extrapolated value is returned with the gap as error estimate.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    d0 = DEFAULT_POLICY.fd_delta if delta is None else float(delta)
    if mixed:
        xx, yy = x
        coarse = _cross(f, xx, yy, d0)
        fine = _cross(f, xx, yy, d0 / 2)
    else:
        coarse = _central(f, x, d0, order)
        fine = _central(f, x, d0 / 2, order)
    value = (4 * fine - coarse) / 3
    return FdResult(value=value, error_estimate=abs(value - fine),
                    steps=(d0, d0 / 2))


def bracketed_root(f, bracket, policy=DEFAULT_POLICY):
    """Root of a sign-changing function: bisection then secant polish.

    Bisection narrows the bracket to policy.bisect_width, secant refines to
    |f| <= policy.secant_residual or the iteration cap. Returns
    (root, residual, iterations).
    """
    a, b = float(bracket[0]), float(bracket[1])
    fa, fb = _eval(f, a), _eval(f, b)
    if fa == 0:
        return a, 0.0, 0
    if fb == 0:
        return b, 0.0, 0
    if np.sign(fa) == np.sign(fb):
        raise BracketFailure(f"no sign change on [{a}, {b}]: f={fa:.3e},{fb:.3e}")
    it = 0
    while b - a > policy.bisect_width and it < policy.root_iter_cap:
        m = 0.5 * (a + b)
        fm = _eval(f, m)
        it += 1
        if fm == 0:
            return m, 0.0, it
        if np.sign(fm) == np.sign(fa):
            a, fa = m, fm
        else:
            b, fb = m, fm
    x0, f0, x1, f1 = a, fa, b, fb
    best_x, best_f = (x0, f0) if abs(f0) < abs(f1) else (x1, f1)
    while abs(best_f) > policy.secant_residual and it < policy.root_iter_cap:
        if f1 == f0:
            break
        x2 = x1 - f1 * (x1 - x0) / (f1 - f0)
        if not (a <= x2 <= b):
            x2 = 0.5 * (a + b)
        f2 = _eval(f, x2)
        it += 1
        if np.sign(f2) == np.sign(fa):
            a, fa = x2, f2
        else:
            b, fb = x2, f2
        x0, f0, x1, f1 = x1, f1, x2, f2
        if abs(f2) < abs(best_f):
            best_x, best_f = x2, f2
    return best_x, abs(best_f), it


def power_iteration(A, left=False, v0=None, policy=DEFAULT_POLICY):
    """Dominant eigenpair of a nonnegative matrix by power iteration.

    Returns (eigenvalue, unit vector, residual, contraction ratio). The
    residual is the final ||A v - lam v||_inf; the contraction ratio tracks
    successive iterate differences and estimates the spectral gap.
    """
    op = (A.T if left else A)
    n = op.shape[0]
    v = np.full(n, 1.0 / n) if v0 is None else np.asarray(v0, float).copy()
    v /= v.sum()
    ratio = 1.0
    prev_diff = None
    lam = 1.0
    for it in range(policy.power_iter_cap):
        w = op @ v
        lam = float(w.sum())
        if not np.isfinite(lam) or lam <= 0:
            raise NoConvergence(f"eigenvalue estimate {lam} at iteration {it}")
        w = w / lam
        diff = np.abs(w - v).max()
        if prev_diff is not None and prev_diff > 0:
            ratio = diff / prev_diff
        prev_diff = diff
        v = w
        # sum normalization spreads mass over n entries, so the stop rule must
        # scale with the iterate's sup norm or large systems quit early
        if diff <= policy.power_residual * v.max():
            break
    res = np.abs(op @ v - lam * v).max()
    v2 = v / np.linalg.norm(v)
    return lam, v2, float(res), float(min(ratio, 1.0))
