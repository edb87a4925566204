"""Chi-square tests and confidence regions built on the divergence profile."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .dual import SolverConfig, solve_inner
from .errors import DegreesOfFreedomError, DomainError, NoFeasibleTheta
from .estimator import _INNER_FAILURES, Profile, estimate, minimize_profile

__all__ = [
    "chi2_cdf",
    "chi2_quantile",
    "TestReport",
    "ConfidenceRegion",
    "fit_statistic_at_theta",
    "model_test",
    "simple_test",
    "composite_test",
    "fix_coordinate",
    "confidence_region",
]


def chi2_cdf(df, x):
    """Lower tail ``P(chi2_df <= x)``."""
    if not (df > 0 and x >= 0):
        raise DomainError("chi2_cdf needs df > 0 and x >= 0")
    return float(special.gammainc(0.5 * df, 0.5 * x))


def chi2_quantile(df, p):
    """Inverse of :func:`chi2_cdf` in ``x``."""
    if not (df > 0 and 0 < p < 1):
        raise DomainError("chi2_quantile needs df > 0 and 0 < p < 1")
    return float(2.0 * special.gammaincinv(0.5 * df, p))


def _chi2_sf(df, x):
    return float(special.gammaincc(0.5 * df, 0.5 * x))


@dataclass
class TestReport:
    statistic: float
    df: int
    p_value: float
    alpha: float
    critical_value: float
    reject: bool
    h1_sigma2: Optional[float] = None
    theta: Optional[np.ndarray] = None
    kind: str = ""

    __test__ = False  # not a pytest class

    def to_dict(self):
        return {
            "kind": self.kind,
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "critical_value": self.critical_value,
            "reject": self.reject,
            "h1_sigma2": self.h1_sigma2,
            "theta": None if self.theta is None else np.asarray(self.theta).tolist(),
        }


def _report(statistic, df, alpha, h1_sigma2=None, theta=None, kind=""):
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    crit = chi2_quantile(df, 1.0 - alpha)
    return TestReport(
        statistic=float(statistic),
        df=int(df),
        p_value=_chi2_sf(df, statistic),
        alpha=float(alpha),
        critical_value=crit,
        reject=bool(statistic > crit),
        h1_sigma2=h1_sigma2,
        theta=theta,
        kind=kind,
    )


def _m_variance(spec, sol):
    """Empirical variance of ``m(theta, c)`` over the sample."""
    u = sol.gbar @ sol.c
    conj = spec._conj_terms(u)[0]
    m = sol.c[0] - conj
    return float(np.mean(m * m) - np.mean(m) ** 2)


def _scale(spec, sample):
    return 2.0 * sample.n / spec.phi_second_at_one


def fit_statistic_at_theta(model, spec, sample, theta, alpha=0.05, config=None):
    """Goodness of fit of ``M_theta`` for a fixed ``theta``, chi-square with ``l`` df."""
    sol = solve_inner(model, spec, sample, theta, config)
    stat = max(_scale(spec, sample) * sol.value, 0.0)
    return _report(stat, model.l, alpha, _m_variance(spec, sol), sol.theta, "fit")


def model_test(model, spec, sample, alpha=0.05, config=None, result=None):
    """Overidentification test of ``M``; chi-square with ``l - d`` df under the model."""
    if model.l <= model.d:
        raise DegreesOfFreedomError(
            f"model {model.name} is not overidentified (l = {model.l}, d = {model.d})"
        )
    if result is None:
        result = estimate(model, spec, sample, config, variances=False)
    sol = solve_inner(model, spec, sample, result.theta_hat, config, t_start=result.c_hat)
    stat = max(_scale(spec, sample) * result.value, 0.0)
    return _report(stat, model.l - model.d, alpha, _m_variance(spec, sol),
                   result.theta_hat, "model")


def _difference_statistic(spec, sample, restricted, unrestricted):
    diff = restricted - unrestricted
    # both values come from the same profile, so only rounding can make the
    # difference negative
    return _scale(spec, sample) * max(diff, 0.0)


def simple_test(model, spec, sample, theta1, alpha=0.05, config=None, result=None):
    """Test of ``theta = theta1``: chi-square with ``d`` df."""
    if result is None:
        result = estimate(model, spec, sample, config, variances=False)
    sol = solve_inner(model, spec, sample, theta1, config)
    stat = _difference_statistic(spec, sample, sol.value, result.value)
    return _report(stat, model.d, alpha, None, sol.theta, "simple")


class _Reparametrized:
    """Profile in ``beta`` for ``theta = f(beta)``, sharing the theta cache."""

    def __init__(self, profile, f):
        self.profile = profile
        self.f = f
        self.beta_of = {}

    def __call__(self, beta):
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        theta = np.atleast_1d(np.asarray(self.f(beta), dtype=float))
        self.beta_of.setdefault(tuple(theta.tolist()), beta)
        return self.profile(theta)

    def best(self):
        return self.profile.best()


def _beta_box_contains(box, beta):
    return all(lo <= b <= hi for b, (lo, hi) in zip(beta, box))


def composite_test(model, spec, sample, f, beta_box, alpha=0.05, config=None, *,
                   beta_init=None, f_jac=None, raw=False, result=None):
    """Test of ``theta in f(B_0)`` where ``beta`` ranges over ``beta_box``.

    The statistic is ``2n/phi''(1)`` times the difference of the restricted
    and unrestricted profile minima (``raw=True`` drops the factor).  Its
    degrees of freedom equal the number of restrictions ``d - dim(beta)``.
    """
    k = len(beta_box)
    df = model.d - k
    if model.d < 2 or not 0 < k < model.d:
        raise DegreesOfFreedomError(
            f"need 0 < dim(beta) < d; got dim(beta) = {k}, d = {model.d}"
        )
    if result is None:
        result = estimate(model, spec, sample, config, variances=False)

    profile = Profile(model, spec, sample, config)
    param = _Reparametrized(profile, f)
    # restrict the search to f(B_0) and the parameter box
    box_profile = _BoxGuard(param, beta_box)
    if beta_init is None:
        beta_init = np.array([0.5 * (lo + hi) for lo, hi in beta_box])
    best = minimize_profile(box_profile, beta_box, np.atleast_1d(beta_init))
    beta_hat = param.beta_of.get(tuple(best.theta.tolist()))

    if f_jac is not None or beta_hat is not None:
        Gb = _f_jacobian(f, f_jac, beta_hat)
        if np.linalg.matrix_rank(Gb) < k:
            raise DegreesOfFreedomError("the Jacobian of f is rank deficient at the optimum")

    diff = max(best.value - result.value, 0.0)
    stat = diff if raw else _scale(spec, sample) * diff
    rep = _report(stat, df, alpha, _m_variance(spec, best), best.theta, "composite")
    return rep


class _BoxGuard:
    def __init__(self, inner, box):
        self.inner = inner
        self.box = box

    def __call__(self, beta):
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        if not _beta_box_contains(self.box, beta):
            return math.inf
        return self.inner(beta)

    def best(self):
        return self.inner.best()


def _f_jacobian(f, f_jac, beta, step=1e-6):
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if f_jac is not None:
        return np.atleast_2d(np.asarray(f_jac(beta), dtype=float))
    cols = []
    for j in range(beta.size):
        h = step * max(1.0, abs(beta[j]))
        e = np.zeros_like(beta)
        e[j] = h
        cols.append((np.asarray(f(beta + e)) - np.asarray(f(beta - e))) / (2 * h))
    return np.column_stack(cols)


def fix_coordinate(model, index, value):
    """``f`` and ``beta_box`` holding coordinate ``index`` of ``theta`` at ``value``."""
    free = [j for j in range(model.d) if j != index]

    def f(beta):
        theta = np.empty(model.d)
        theta[index] = value
        theta[free] = beta
        return theta

    def f_jac(beta):
        out = np.zeros((model.d, len(free)))
        for col, j in enumerate(free):
            out[j, col] = 1.0
        return out

    return f, f_jac, tuple(model.theta_box[j] for j in free)


# -- confidence regions -----------------------------------------------------


@dataclass
class ConfidenceRegion:
    level: float
    theta_grid: np.ndarray
    inside: np.ndarray
    statistics: np.ndarray
    failed: np.ndarray
    threshold: float
    intervals: list = field(default_factory=list)

    def contains(self, theta):
        """Membership of a scalar ``theta`` in the refined intervals (``d == 1``)."""
        return any(lo <= theta <= hi for lo, hi in self.intervals)

    def to_dict(self):
        return {
            "level": self.level,
            "threshold": self.threshold,
            "theta_grid": self.theta_grid.tolist(),
            "inside": self.inside.tolist(),
            "failed": self.failed.tolist(),
            "statistics": [s if math.isfinite(s) else None for s in self.statistics.tolist()],
            "intervals": [list(iv) for iv in self.intervals],
        }


def _fit_stat(args):
    model, spec, sample, theta, config = args
    try:
        sol = solve_inner(model, spec, sample, theta, config)
    except _INNER_FAILURES:
        return math.inf
    return 2.0 * sample.n / spec.phi_second_at_one * sol.value


def _grid_axes(model, grid_spec):
    if model.d == 1 and len(grid_spec) == 3 and not hasattr(grid_spec[0], "__len__"):
        grid_spec = [grid_spec]
    if len(grid_spec) != model.d:
        raise DomainError(f"grid needs one (lo, hi, steps) triple per coordinate ({model.d})")
    axes = []
    for lo, hi, steps in grid_spec:
        steps = int(steps)
        if steps < 2 or not hi > lo:
            raise DomainError("grid axes need hi > lo and at least two steps")
        axes.append(np.linspace(lo, hi, steps))
    return axes


def confidence_region(model, spec, sample, level, grid_spec, config=None, jobs=1,
                      xtol=1e-6):
    """Set of ``theta`` whose fit statistic stays below the ``level`` chi-square quantile.

    ``grid_spec`` is ``(lo, hi, steps)`` per coordinate.  Points where the
    inner problem fails are outside and flagged in ``failed``.  For ``d == 1``
    every change of membership between neighbours is refined by bisection.
    """
    if model.d > 2:
        raise DomainError("confidence regions are only gridded for d <= 2")
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    config = config or SolverConfig()
    axes = _grid_axes(model, grid_spec)
    mesh = np.array(np.meshgrid(*axes, indexing="ij")).reshape(model.d, -1).T
    q = chi2_quantile(model.l, level)

    tasks = [(model, spec, sample, th, config) for th in mesh]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            stats = list(pool.map(_fit_stat, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        stats = [_fit_stat(t) for t in tasks]
    stats = np.array(stats, dtype=float)
    failed = ~np.isfinite(stats)
    inside = stats <= q

    intervals = []
    if model.d == 1:
        grid = mesh[:, 0]

        def is_in(t):
            return _fit_stat((model, spec, sample, np.array([t]), config)) <= q

        start = grid[0] if inside[0] else None
        for i in range(len(grid) - 1):
            if inside[i] == inside[i + 1]:
                continue
            a, b = grid[i], grid[i + 1]
            in_a = inside[i]
            while b - a > xtol:
                mid = 0.5 * (a + b)
                if is_in(mid) == in_a:
                    a = mid
                else:
                    b = mid
            edge = a if in_a else b
            if in_a:
                intervals.append((float(start), float(edge)))
                start = None
            else:
                start = edge
        if start is not None:
            intervals.append((float(start), float(grid[-1])))

    return ConfidenceRegion(
        level=float(level),
        theta_grid=mesh,
        inside=inside,
        statistics=stats,
        failed=failed,
        threshold=q,
        intervals=intervals,
    )
