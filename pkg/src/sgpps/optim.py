"""Gradient ascent on log-hyperparameters with finite-difference gradients."""

from __future__ import annotations

import numpy as np

from .kernels import NumericalError

FD_STEP = 1e-5
# log-hyperparameters outside this box are rejected (exp(25) ~ 7e10)
LOG_BOUND = 25.0


def _safe(fun, x):
    if np.any(np.abs(x) > LOG_BOUND):
        return -np.inf
    try:
        with np.errstate(all="ignore"):
            value = float(fun(x))
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError, ValueError):
        # ValueError: hyperparameters that over- or underflow on exp
        return -np.inf
    return value if np.isfinite(value) else -np.inf


def central_differences(fun, x, step=FD_STEP, partial=None):
    """Central-difference gradient of ``fun`` at ``x``.

    ``partial(i)`` may return a cheaper function that differs from ``fun``
    only by terms independent of coordinate ``i``.
    """
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        f = fun if partial is None else partial(i)
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (_safe(f, xp) - _safe(f, xm)) / (2.0 * step)
    return g


def gradient_ascent(fun, x0, partial=None, max_iter=50, step=FD_STEP, gtol=1e-7, first_move=0.5, max_move=2.0):
    """Maximize ``fun`` by steepest ascent with Armijo backtracking.

    The first trial step moves no coordinate by more than ``first_move``;
    after an accepted step the trial length doubles, but no step moves a
    coordinate by more than ``max_move`` (flat objectives would otherwise
    take arbitrarily long steps). Stops on a small
    gradient, a failed line search or ``max_iter`` iterations. The value
    at the returned point is never below ``fun(x0)``.

    Returns
    -------
    x : ndarray
    value : float
    n_iter : int
    """
    x = np.asarray(x0, dtype=float).copy()
    f = _safe(fun, x)
    if not np.isfinite(f):
        raise NumericalError("objective is not finite at the starting point")
    t = None
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        g = central_differences(fun, x, step=step, partial=partial)
        if not np.all(np.isfinite(g)):
            break
        gn2 = float(g @ g)
        if np.sqrt(gn2) < gtol:
            break
        gmax = np.max(np.abs(g))
        t = first_move / gmax if t is None else min(2.0 * t, max_move / gmax)
        accepted = False
        for _ in range(40):
            x_new = x + t * g
            f_new = _safe(fun, x_new)
            if f_new >= f + 1e-4 * t * gn2:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        gain = f_new - f
        x, f = x_new, f_new
        if gain <= 1e-12 * max(1.0, abs(f)):
            break
    return x, f, n_iter
