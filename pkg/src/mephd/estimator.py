"""Minimum empirical divergence estimation of ``theta``.

The profile ``theta -> phi_hat(M_theta, P_n)`` is evaluated by the dual
solver and minimised over the parameter box.  One-dimensional problems use a
coarse grid followed by golden-section refinement; higher dimensions use
Nelder-Mead.  Points where the inner problem has no solution count as
``+inf`` on the profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dual import SolverConfig, feasibility_probe, solve_inner
from .errors import (
    DomainError,
    NoFeasibleTheta,
    NotConverged,
    SingularHessian,
    SingularMatrix,
)

__all__ = [
    "EstimationResult",
    "CdfEstimate",
    "Profile",
    "estimate",
    "minimize_profile",
    "variance_theta",
    "variance_c",
    "misspec_covariance",
    "profile_gradient",
    "cdf_estimate",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
# failures of the inner problem that mean "theta is not in the effective domain"
_INNER_FAILURES = (NotConverged, SingularHessian, DomainError, FloatingPointError)


@dataclass
class EstimationResult:
    theta_hat: np.ndarray
    c_hat: np.ndarray
    value: float
    weights: np.ndarray
    variance_theta: Optional[np.ndarray]
    variance_c: Optional[np.ndarray]
    profile_trace: list
    misspec_cov: Optional[np.ndarray] = None
    profile_gradient: Optional[np.ndarray] = None
    divergence: str = ""
    model: object = field(default=None, repr=False)
    spec: object = field(default=None, repr=False)
    n: int = 0
    evaluations: int = 0

    def to_dict(self):
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "theta_hat": arr(self.theta_hat),
            "c_hat": arr(self.c_hat),
            "value": self.value,
            "weights": arr(self.weights),
            "variance_theta": arr(self.variance_theta),
            "variance_c": arr(self.variance_c),
            "misspec_cov": arr(self.misspec_cov),
            "profile_gradient": arr(self.profile_gradient),
            "profile_trace": [[list(map(float, t)), v] for t, v in self.profile_trace],
            "divergence": self.divergence,
            "model": getattr(self.model, "name", None),
            "n": self.n,
            "evaluations": self.evaluations,
        }


@dataclass(frozen=True)
class CdfEstimate:
    x: float
    value: float
    variance: float
    empirical_value: float


class Profile:
    """Memoised profile ``theta -> inner divergence`` for one sample.

    Failed or infeasible points evaluate to ``+inf``.  Successful solves are
    kept so the caller can recover the full :class:`DualSolution` at the
    optimum and warm-start nearby solves.
    """

    def __init__(self, model, spec, sample, config=None, screen=True):
        self.model = model
        self.spec = spec
        self.sample = sample
        self.config = config or SolverConfig()
        # the exact sign / angular probes are cheap; the LP needed for l >= 3
        # costs more than letting the solver detect an unbounded dual
        self.screen = screen and spec.restricted_domain and model.l <= 2
        self.solutions = {}
        self.trace = []
        # grid sweeps and line searches move between neighbouring points, so
        # the last successful multiplier is the neighbour's one
        self._last_c = None


    def solve(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        key = tuple(theta.tolist())
        if key in self.solutions:
            return self.solutions[key]
        if not self.model.in_box(theta):
            return None
        if self.screen and not feasibility_probe(self.model, self.sample, theta, self.spec).interior:
            self.trace.append((key, math.inf))
            return None
        try:
            with np.errstate(all="raise"):
                sol = solve_inner(self.model, self.spec, self.sample, theta, self.config,
                                  t_start=self._last_c)
        except _INNER_FAILURES:
            self.trace.append((key, math.inf))
            return None
        self.solutions[key] = sol
        self._last_c = sol.c
        self.trace.append((key, sol.value))
        return sol

    def __call__(self, theta):
        sol = self.solve(theta)
        return math.inf if sol is None else sol.value

    def best(self):
        if not self.solutions:
            return None
        return min(self.solutions.values(), key=lambda s: (s.value, tuple(s.theta)))


def _golden(f, a, b, x_best, tol):
    """Golden-section search on ``[a, b]``; ties at ``+inf`` move towards ``x_best``."""
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd or (fc == fd == math.inf and x_best <= d):
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)


def _minimize_1d(profile, lo, hi, init, grid_points, xtol):
    grid = np.linspace(lo, hi, grid_points)
    candidates = sorted(set(grid.tolist()) | ({float(init[0])} if init is not None else set()))
    values = [profile([t]) for t in candidates]
    k = int(np.argmin(values))
    if not math.isfinite(values[k]):
        return
    a = candidates[max(k - 1, 0)]
    b = candidates[min(k + 1, len(candidates) - 1)]
    _golden(lambda t: profile([t]), a, b, candidates[k], xtol)


def _minimize_nd(profile, init, xtol):
    from scipy.optimize import minimize

    if not math.isfinite(profile(init)):
        return
    minimize(profile, init, method="Nelder-Mead",
             options={"xatol": xtol, "fatol": 1e-14, "maxiter": 4000, "maxfev": 8000})


def minimize_profile(profile, box, init=None, grid_points=41, xtol=1e-8):
    """Minimise a :class:`Profile` (or compatible callable) over ``box``.

    Returns the best :class:`DualSolution` found, or raises NoFeasibleTheta.
    """
    if len(box) == 1:
        _minimize_1d(profile, box[0][0], box[0][1], init, grid_points, xtol)
    else:
        if init is None:
            init = np.array([0.5 * (lo + hi) for lo, hi in box])
        _minimize_nd(profile, np.asarray(init, dtype=float), xtol)
    best = profile.best()
    if best is None:
        raise NoFeasibleTheta(
            "the inner problem has no solution at any explored theta; "
            "the effective parameter domain looks empty"
        )
    return best


def estimate(model, spec, sample, config=None, theta_init=None, *, grid_points=41,
             xtol=1e-8, variances=True, misspec=False):
    """Minimum empirical phi-divergence estimate of ``theta``.

    ``variances`` toggles the plug-in ``V`` and ``U`` matrices (skipped in
    Monte Carlo loops); ``misspec`` additionally computes the sandwich
    covariance of ``(c, theta)``.
    """
    if sample.obs_dim != model.obs_dim:
        from .errors import DimensionMismatch

        raise DimensionMismatch(
            f"sample has {sample.obs_dim} columns, model {model.name} expects {model.obs_dim}"
        )
    init = model.initial_theta(sample.observations) if theta_init is None else \
        np.atleast_1d(np.asarray(theta_init, dtype=float))
    profile = Profile(model, spec, sample, config)
    best = minimize_profile(profile, model.theta_box, init, grid_points, xtol)

    theta = best.theta
    result = EstimationResult(
        theta_hat=theta,
        c_hat=best.c,
        value=best.value,
        weights=best.weights,
        variance_theta=None,
        variance_c=None,
        profile_trace=profile.trace,
        profile_gradient=profile_gradient(model, spec, sample, theta, best.c),
        divergence=spec.name,
        model=model,
        spec=spec,
        n=sample.n,
        evaluations=len(profile.trace),
    )
    if variances:
        try:
            result.variance_theta = variance_theta(model, sample, theta)
            result.variance_c = variance_c(model, sample, theta, spec)
        except SingularMatrix:
            pass
    if misspec:
        result.misspec_cov = misspec_covariance(model, spec, sample, theta, best.c)
    return result


# -- plug-in variances ----------------------------------------------------


def _inv_psd(A, what):
    A = 0.5 * (A + A.T)
    w = np.linalg.eigvalsh(A)
    if w[0] <= 1e-12 * max(abs(w[-1]), 1e-300):
        raise SingularMatrix(f"{what} is numerically singular")
    return np.linalg.inv(A)


def _moment_blocks(model, sample, theta):
    X = sample.observations
    g = model.moments(X, theta)
    J = model.jacobian(X, theta).mean(axis=0)  # (l, d)
    omega = g.T @ g / g.shape[0]
    return g, J, omega


def variance_theta(model, sample, theta_hat):
    """Plug-in asymptotic variance ``(J' Omega^-1 J)^-1`` of ``sqrt(n)(theta_hat - theta)``."""
    _, J, omega = _moment_blocks(model, sample, theta_hat)
    omega_inv = _inv_psd(omega, "P_n g g'")
    V = _inv_psd(J.T @ omega_inv @ J, "J' Omega^-1 J")
    return 0.5 * (V + V.T)


def _gamma_matrix(J, omega_inv, V):
    return omega_inv - omega_inv @ J @ V @ J.T @ omega_inv


def variance_c(model, sample, theta_hat, spec=None):
    """Plug-in asymptotic variance of ``sqrt(n) c_hat``; the mass multiplier row is zero."""
    _, J, omega = _moment_blocks(model, sample, theta_hat)
    omega_inv = _inv_psd(omega, "P_n g g'")
    V = _inv_psd(J.T @ omega_inv @ J, "J' Omega^-1 J")
    scale = (spec.phi_second_at_one if spec is not None else 1.0) ** 2
    l = model.l
    U = np.zeros((l + 1, l + 1))
    U[1:, 1:] = scale * _gamma_matrix(J, omega_inv, V)
    return 0.5 * (U + U.T)


def _m_derivatives(model, spec, sample, theta, c):
    """Per-observation first derivatives and averaged Hessian of ``m(theta, t)``.

    Coordinates are ordered ``(t_0, ..., t_l, theta_1, ..., theta_d)``.
    """
    X = sample.observations
    G = model.gbar(X, theta)
    Jg = model.jacobian(X, theta)  # (n, l, d)
    Hg = model.hessian(X, theta)  # (n, l, d, d)
    n, p = G.shape
    d = model.d
    c = np.asarray(c, dtype=float)
    tau = c[1:]
    u = G @ c
    if not np.all(spec.in_prime_image(u)):
        raise DomainError("c' gbar leaves the image of phi'")
    _, x, x2 = spec._conj_terms(u)
    Jt = np.einsum("nld,l->nd", Jg, tau)  # J_i' tau

    first = np.empty((n, p + d))
    first[:, :p] = -x[:, None] * G
    first[:, 0] += 1.0
    first[:, p:] = -x[:, None] * Jt

    S = np.empty((p + d, p + d))
    S[:p, :p] = -(G * x2[:, None]).T @ G / n
    Jbar = np.zeros((n, p, d))
    Jbar[:, 1:, :] = Jg
    S12 = (-(G * x2[:, None]).T @ Jt - np.einsum("n,npd->pd", x, Jbar)) / n
    S[:p, p:] = S12
    S[p:, :p] = S12.T
    S[p:, p:] = (-(Jt * x2[:, None]).T @ Jt
                 - np.einsum("n,nldk,l->dk", x, Hg, tau)) / n
    return first, 0.5 * (S + S.T)


def misspec_covariance(model, spec, sample, theta_hat, c_hat):
    """Sandwich covariance ``S^-1 M S^-1`` of ``sqrt(n)`` times ``(c_hat, theta_hat)``.

    Valid whether or not the model holds.  Rows and columns are ordered
    ``c_0, ..., c_l, theta_1, ..., theta_d``.
    """
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    first, S = _m_derivatives(model, spec, sample, theta_hat, c_hat)
    M = first.T @ first / first.shape[0]
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > 1e13:
        raise SingularMatrix("the Hessian of m in (c, theta) is numerically singular")
    S_inv = np.linalg.inv(S)
    W = S_inv @ M @ S_inv.T
    return 0.5 * (W + W.T)


def profile_gradient(model, spec, sample, theta, c):
    """Derivative of the profile at ``theta`` through the envelope identity."""
    X = sample.observations
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    u = model.gbar(X, theta) @ c
    x = spec._conj_terms(u)[1]
    Jt = np.einsum("nld,l->nd", model.jacobian(X, theta), np.asarray(c)[1:])
    return -(x[:, None] * Jt).mean(axis=0)


# -- distribution function --------------------------------------------------


def cdf_estimate(result, sample, xs, monotone=False):
    """Weighted distribution function ``sum_i w_i 1{X_i <= x}`` with plug-in variance.

    With ``monotone=True`` a running maximum over sorted ``xs`` is applied to
    the estimate; by default negative weights (possible for ``chi2``) are
    reported as they are.
    """
    model = result.model
    if model.obs_dim != 1:
        raise ValueError("the distribution function estimate needs scalar observations")
    X = sample.observations[:, 0]
    w = np.asarray(result.weights)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    g, J, omega = _moment_blocks(model, sample, result.theta_hat)
    try:
        omega_inv = _inv_psd(omega, "P_n g g'")
        V = _inv_psd(J.T @ omega_inv @ J, "J' Omega^-1 J")
        Gam = _gamma_matrix(J, omega_inv, V)
    except SingularMatrix:
        Gam = None

    order = np.argsort(X, kind="stable")
    Xs, ws, gs = X[order], w[order], g[order]
    cum_g = np.vstack((np.zeros(g.shape[1]), np.cumsum(gs, axis=0)))
    n = X.shape[0]

    out = []
    for x in xs:
        k = int(np.searchsorted(Xs, x, side="right"))
        Fn = k / n
        value = math.fsum(ws[:k]) if k < n else math.fsum(ws)
        if Gam is None:
            var = math.nan
        else:
            b = cum_g[k] / n
            var = Fn * (1.0 - Fn) - float(b @ Gam @ b)
        out.append(CdfEstimate(x=float(x), value=float(value), variance=var, empirical_value=Fn))
    if monotone:
        idx = np.argsort(xs, kind="stable")
        running = -math.inf
        for i in idx:
            running = max(running, out[i].value)
            e = out[i]
            out[i] = CdfEstimate(e.x, running, e.variance, e.empirical_value)
    return out
