"""Compiled inner loops for the dual Newton ascent.

The power family is fully described by ``gamma`` and a small integer tag,
so the whole iteration can run without touching Python objects.
"""

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - pure Python fallback, slow but correct
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

# conjugate evaluation tags
GENERIC = 0
QUADRATIC = 1
EVEN_POWER = 2

CONVERGED = 0
MAX_ITER = 1
LINE_SEARCH = 2
UNBOUNDED = 3
SINGULAR = 4


@njit(cache=True)
def conj_point(u, gamma, tag):
    """``(phi*(u), phi*'(u), phi*''(u))`` for one ``u`` in the prime image."""
    if tag == QUADRATIC:
        return u + 0.5 * u * u, 1.0 + u, 1.0
    if tag == EVEN_POWER:
        w = 1.0 + (gamma - 1.0) * u
        ax = abs(w) ** (1.0 / (gamma - 1.0))
        x = ax if w >= 0 else -ax
        if ax == 0.0:
            x2 = math.inf
        else:
            x2 = ax ** (2.0 - gamma)
        return (ax**gamma - 1.0) / gamma, x, x2
    if gamma == 1.0:
        logx = u
    else:
        logx = math.log1p((gamma - 1.0) * u) / (gamma - 1.0)
    x = math.exp(logx)
    if gamma == 0.0:
        val = logx
    else:
        val = math.expm1(gamma * logx) / gamma
    return val, x, math.exp((2.0 - gamma) * logx)


@njit(cache=True)
def _evaluate(G, t, gamma, tag, u, x, grad, hess):
    n, p = G.shape
    total = 0.0
    for j in range(p):
        grad[j] = 0.0
        for k in range(p):
            hess[j, k] = 0.0
    for i in range(n):
        val, xi, x2 = conj_point(u[i], gamma, tag)
        total += val
        x[i] = xi
        for j in range(p):
            gj = G[i, j]
            grad[j] -= xi * gj
            w = x2 * gj
            for k in range(j + 1):
                hess[j, k] -= w * G[i, k]
    for j in range(p):
        grad[j] /= n
        for k in range(j + 1):
            hess[j, k] /= n
            hess[k, j] = hess[j, k]
    grad[0] += 1.0
    return t[0] - total / n


@njit(cache=True)
def _value_only(G, t, gamma, tag, u):
    n = G.shape[0]
    total = 0.0
    for i in range(n):
        val, _, _ = conj_point(u[i], gamma, tag)
        total += val
    return t[0] - total / n


@njit(cache=True)
def _matvec(G, t, out):
    n, p = G.shape
    for i in range(n):
        s = 0.0
        for j in range(p):
            s += G[i, j] * t[j]
        out[i] = s


@njit(cache=True)
def _within_margin(u_new, u_old, lo, hi, keep):
    for i in range(u_new.shape[0]):
        if hi < math.inf and hi - u_new[i] < keep * (hi - u_old[i]):
            return False
        if lo > -math.inf and u_new[i] - lo < keep * (u_old[i] - lo):
            return False
        if not math.isfinite(u_new[i]):
            return False
    return True


@njit(cache=True)
def newton_ascent(G, t0, gamma, tag, lo, hi, grad_tol, max_iter, shrink, margin, ridge,
                  bound):
    """Maximise ``t -> mean(t_0 - phi*(G t))`` from ``t0``.

    Returns ``(status, t, value, x, iterations, grad_norm)`` where ``x`` holds
    ``phi*'(G t)`` (``n`` times the projection weights).
    """
    n, p = G.shape
    t = t0.copy()
    u = np.empty(n)
    x = np.empty(n)
    grad = np.empty(p)
    hess = np.empty((p, p))
    u_new = np.empty(n)
    t_new = np.empty(p)
    chol = np.empty((p, p))
    step = np.empty(p)
    keep = 1.0 - margin

    _matvec(G, t, u)
    value = _evaluate(G, t, gamma, tag, u, x, grad, hess)
    gnorm = 0.0
    for j in range(p):
        gnorm = max(gnorm, abs(grad[j]))

    it = 0
    while gnorm > grad_tol:
        if it >= max_iter:
            return MAX_ITER, t, value, x, it, gnorm
        it += 1

        # Cholesky of -(H - ridge*|H|_max*I)
        scale = 0.0
        for j in range(p):
            for k in range(p):
                scale = max(scale, abs(hess[j, k]))
        for j in range(p):
            for k in range(p):
                chol[j, k] = 0.0
        dmin = math.inf
        dmax = 0.0
        for j in range(p):
            s = -hess[j, j] + ridge * scale
            for k in range(j):
                s -= chol[j, k] * chol[j, k]
            if not (s > 0.0) or not math.isfinite(s):
                return SINGULAR, t, value, x, it, gnorm
            d = math.sqrt(s)
            chol[j, j] = d
            dmin = min(dmin, d)
            dmax = max(dmax, d)
            for i in range(j + 1, p):
                s2 = -hess[i, j]
                for k in range(j):
                    s2 -= chol[i, k] * chol[j, k]
                chol[i, j] = s2 / d
        if dmin * dmin <= 1e-13 * dmax * dmax:
            return SINGULAR, t, value, x, it, gnorm
        # step = (-H)^{-1} grad
        for j in range(p):
            s = grad[j]
            for k in range(j):
                s -= chol[j, k] * step[k]
            step[j] = s / chol[j, j]
        for j in range(p - 1, -1, -1):
            s = step[j]
            for k in range(j + 1, p):
                s -= chol[k, j] * step[k]
            step[j] = s / chol[j, j]

        alpha = 1.0
        accepted = False
        v_new = value
        tol = 1e-14 * max(1.0, abs(value))
        for _ in range(60):
            for j in range(p):
                t_new[j] = t[j] + alpha * step[j]
            _matvec(G, t_new, u_new)
            if _within_margin(u_new, u, lo, hi, keep):
                v_new = _value_only(G, t_new, gamma, tag, u_new)
                if v_new >= value - tol:
                    accepted = True
                    break
            alpha *= shrink
        if not accepted:
            return LINE_SEARCH, t, value, x, it, gnorm

        for j in range(p):
            t[j] = t_new[j]
        umax = 0.0
        for i in range(n):
            u[i] = u_new[i]
            umax = max(umax, abs(u[i]))
        value = _evaluate(G, t, gamma, tag, u, x, grad, hess)
        gnorm = 0.0
        for j in range(p):
            gnorm = max(gnorm, abs(grad[j]))
        if umax > bound:
            return UNBOUNDED, t, value, x, it, gnorm

    return CONVERGED, t, value, x, it, gnorm
