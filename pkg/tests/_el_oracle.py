"""Empirical likelihood written out directly, independent of the dual solver."""

import math

import numpy as np
from scipy import optimize


def el_log_ratio(g):
    """``sum log(1 + lam' g_i)`` at the maximising ``lam``; g has shape (n, l)."""
    g = np.atleast_2d(g.T).T

    def neg(lam):
        z = 1.0 + g @ lam
        if np.any(z <= 0):
            return math.inf
        return -np.sum(np.log(z))

    def grad(lam):
        return -(g / (1.0 + g @ lam)[:, None]).sum(axis=0)

    def hess(lam):
        w = 1.0 / (1.0 + g @ lam) ** 2
        return (g * w[:, None]).T @ g

    res = optimize.minimize(neg, np.zeros(g.shape[1]), jac=grad, hess=hess,
                            method="trust-exact", options={"gtol": 1e-13})
    return -res.fun


def el_mean_log_ratio(x, theta):
    """Scalar-mean case: the multiplier is the root of ``sum g/(1 + lam g)``."""
    g = x - theta
    lo, hi = -1.0 / g.max(), -1.0 / g.min()
    span = hi - lo
    lam = optimize.brentq(lambda a: np.sum(g / (1 + a * g)), lo + 1e-14 * span,
                          hi - 1e-14 * span, xtol=1e-15, rtol=1e-15)
    return np.sum(np.log1p(lam * g))


def el_simple_statistic(model, x, theta1):
    """``2 [l(theta1) - min_theta l(theta)]`` for a scalar parameter near the sample mean."""

    def ell(theta):
        return el_log_ratio(model.moments(x, [theta]))

    grid = np.linspace(x.mean() - 1.0, x.mean() + 1.0, 81)
    k = int(np.argmin([ell(t) for t in grid]))
    opt = optimize.minimize_scalar(ell, bounds=(grid[k - 1], grid[k + 1]), method="bounded",
                                   options={"xatol": 1e-10})
    return 2 * (ell(theta1) - opt.fun)
