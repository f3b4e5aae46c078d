"""Independent reference solutions for small decomposition problems.

These routines share no code with :mod:`edacs.solver`; they build the
dense dictionary ``[D T_h  I]`` and solve the same program by other
means, so they can certify the ADMM output:

``homotopy_reference``
    Follows the exact piecewise-linear LASSO path (LARS with the lasso
    modification) and picks the point where the residual norm equals
    ``eta``.  Exact up to floating point.
``conic_reference``
    Hands the second-order cone program to cvxpy (interior point).

Both need optional dependencies (scikit-learn, cvxpy) and are intended for
desk-scale problems only.
"""

from __future__ import annotations

import math
import warnings

import numpy as np


def _dictionary(dy, h):
    h = np.asarray(h, dtype=float)
    dy = np.asarray(dy, dtype=float)
    n = dy.size
    T = n - h.size + 2
    conv = np.zeros((n + 1, T))
    for j in range(T):
        conv[j:j + h.size, j] = h
    A = conv[:-1] - conv[1:]
    return A, T


def homotopy_reference(dy, h, eta, nonneg_x=False):
    """Exact solution by tracking the LASSO regularisation path.

    Returns ``(x, u, objective)``.
    """
    from sklearn.linear_model import lars_path

    A, T = _dictionary(dy, h)
    dy = np.asarray(dy, dtype=float)
    n = dy.size
    if np.linalg.norm(dy) <= eta:
        return np.zeros(T), np.zeros(n), 0.0
    if nonneg_x:
        # u = u_plus - u_minus keeps the baseline block sign-free
        K = np.hstack([A, np.eye(n), -np.eye(n)])
    else:
        K = np.hstack([A, np.eye(n)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        alphas, _, coefs = lars_path(
            K, dy, method="lasso", positive=nonneg_x, alpha_min=0.0, eps=1e-14, max_iter=50 * K.shape[1]
        )
    res = [np.linalg.norm(dy - K @ coefs[:, k]) for k in range(coefs.shape[1])]
    w = coefs[:, -1]
    for k in range(1, coefs.shape[1]):
        if res[k] <= eta:
            # coefficients are affine in alpha between knots
            w0, w1 = coefs[:, k - 1], coefs[:, k]
            r0 = dy - K @ w0
            dr = -(K @ (w1 - w0))
            # ||r0 + theta dr||^2 = eta^2 with theta in [0, 1]
            qa = dr @ dr
            qb = 2 * r0 @ dr
            qc = r0 @ r0 - eta * eta
            disc = max(qb * qb - 4 * qa * qc, 0.0)
            theta = (-qb - math.sqrt(disc)) / (2 * qa) if qa > 0 else 1.0
            theta = min(max(theta, 0.0), 1.0)
            w = w0 + theta * (w1 - w0)
            break
    x = w[:T]
    u = w[T:T + n] - w[T + n:] if nonneg_x else w[T:]
    return x, u, float(np.abs(x).sum() + np.abs(u).sum())


def conic_reference(dy, h, eta, nonneg_x=False, solver="CLARABEL"):
    """Interior-point solution via cvxpy.  Returns ``(x, u, objective)``."""
    import cvxpy as cp

    A, T = _dictionary(dy, h)
    dy = np.asarray(dy, dtype=float)
    x = cp.Variable(T, nonneg=nonneg_x)
    u = cp.Variable(dy.size)
    prob = cp.Problem(
        cp.Minimize(cp.norm1(x) + cp.norm1(u)),
        [cp.norm2(dy - A @ x - u) <= eta],
    )
    prob.solve(solver=solver)
    return np.asarray(x.value), np.asarray(u.value), float(prob.value)
