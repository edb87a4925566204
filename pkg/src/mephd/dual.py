"""Projection of the empirical measure on ``M_theta`` through the dual problem.

For fixed ``theta`` the divergence between ``P_n`` and the constraint set is

    sup_t  (1/n) sum_i [ t_0 - phi*(t' gbar(X_i, theta)) ]

a smooth concave program in ``l + 1`` variables.  Its maximiser ``c`` gives
the projection weights ``phi*'(c' gbar_i) / n`` directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DomainError, NotConverged, SingularHessian

__all__ = [
    "SolverConfig",
    "DualSolution",
    "FeasibilityReport",
    "dual_objective",
    "solve_inner",
    "solve_gbar",
    "feasibility_probe",
]

# |t' gbar_i| beyond this means the iterates are running off to infinity
_DIVERGENCE_BOUND = 1e12


@dataclass(frozen=True)
class SolverConfig:
    grad_tol: float = 1e-10
    max_iter: int = 100
    backtrack_shrink: float = 0.5
    domain_margin: float = 0.99
    ridge: float = 1e-12

    def __post_init__(self):
        if not (self.grad_tol > 0 and self.max_iter > 0 and self.ridge >= 0):
            raise ValueError("solver tolerances must be positive")
        if not 0 < self.backtrack_shrink < 1:
            raise ValueError("backtrack_shrink must lie in (0, 1)")
        if not 0 < self.domain_margin < 1:
            raise ValueError("domain_margin must lie in (0, 1)")


@dataclass
class DualSolution:
    theta: np.ndarray
    c: np.ndarray
    value: float
    weights: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float
    divergence: str = ""
    gbar: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        return {
            "theta": self.theta.tolist(),
            "c": self.c.tolist(),
            "value": self.value,
            "weights": self.weights.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "divergence": self.divergence,
        }


def _objective_terms(G, spec, t, hessian=True):
    n = G.shape[0]
    u = G @ t
    conj, x, x2 = spec._conj_terms(u)
    value = t[0] - conj.sum() / n
    grad = -(x @ G) / n
    grad[0] += 1.0
    if not hessian:
        return value, grad, None, x
    hess = -((G * x2[:, None]).T @ G) / n
    return value, grad, hess, x


def _check_domain(spec, u):
    if not np.all((u > spec.prime_lo) & (u < spec.prime_hi)):
        raise DomainError("t' gbar leaves the image of phi' for some observation")


def dual_objective(model, spec, sample, theta, t):
    """Value, gradient and Hessian of ``t -> P_n m(theta, t)``."""
    G = model.gbar(sample.observations if hasattr(sample, "observations") else sample, theta)
    t = np.asarray(t, dtype=float)
    _check_domain(spec, G @ t)
    value, grad, hess, _ = _objective_terms(G, spec, t)
    return value, grad, hess


def _kernel_tag(spec):
    if spec.gamma == 2:
        return _kernels.QUADRATIC
    if spec.natural_on_reals:
        return _kernels.EVEN_POWER
    return _kernels.GENERIC


_RANK_TOL = 1e-14


def solve_gbar(G, spec, config=None, t_start=None, theta=None):
    """Maximise the dual objective for a precomputed ``(n, l+1)`` matrix ``G``.

    Newton ascent with a ridge-regularised Hessian; each step is halved
    until every ``t' gbar_i`` keeps a fraction ``1 - domain_margin`` of its
    distance to the boundary of the prime image and the objective does not
    decrease.
    """
    config = config or SolverConfig()
    G = np.ascontiguousarray(G, dtype=float)
    n, p = G.shape
    t = np.zeros(p)
    if t_start is not None:
        t_try = np.asarray(t_start, dtype=float)
        if np.all(np.isfinite(t_try)) and np.all(spec.in_prime_image(G @ t_try)):
            t = t_try.copy()
    theta = np.asarray(theta if theta is not None else [], dtype=float)

    status, t, value, x, it, grad_norm = _kernels.newton_ascent(
        G, t, spec.gamma, _kernel_tag(spec), spec.prime_lo, spec.prime_hi,
        config.grad_tol, config.max_iter, config.backtrack_shrink,
        config.domain_margin, config.ridge, _DIVERGENCE_BOUND,
    )
    # The dual Hessian is -G' diag(phi*'') G / n with phi*'' > 0 on the whole
    # prime image, so its rank is the rank of G at every admissible t.  A start
    # that is already stationary never factors it and needs no check.
    if it > 0 or status != _kernels.CONVERGED:
        ev = np.linalg.eigvalsh(G.T @ G)
        if not ev[0] > _RANK_TOL * ev[-1]:
            raise SingularHessian(
                "dual Hessian is numerically singular; the constraints look collinear"
            )
    if status == _kernels.SINGULAR:
        # G has full rank, so the Hessian degenerated through phi*'' collapsing
        # along a direction in which the iterates run away
        raise NotConverged(
            "dual Hessian degenerated along the ascent path; the constraint set "
            "appears to have no interior point for this divergence",
            iterations=it, grad_norm=grad_norm, last_t=t,
            reason="dual-unbounded" if _looks_unbounded(G, t) else "ill-conditioned",
        )
    if status == _kernels.UNBOUNDED:
        raise NotConverged(
            "dual iterates diverge: the constraint set has no interior point "
            "for this divergence",
            iterations=it, grad_norm=grad_norm, last_t=t, reason="dual-unbounded",
        )
    if status == _kernels.LINE_SEARCH:
        raise NotConverged(
            "line search failed to find an ascent step",
            iterations=it, grad_norm=grad_norm, last_t=t, reason="line-search",
        )
    if status == _kernels.MAX_ITER:
        raise NotConverged(
            f"dual Newton did not converge in {it} iterations (|grad| = {grad_norm:.3g})",
            iterations=it, grad_norm=grad_norm, last_t=t,
            reason="dual-unbounded" if _looks_unbounded(G, t) else "max-iter",
        )

    return DualSolution(
        theta=theta,
        c=t,
        value=float(value),
        weights=x / n,
        converged=True,
        iterations=int(it),
        grad_norm=float(grad_norm),
        divergence=spec.name,
        gbar=G,
    )


def _looks_unbounded(G, t):
    # large multipliers that push every t' gbar_i away from zero in one
    # direction are the signature of a separating hyperplane
    u = G @ t
    return np.max(np.abs(u)) > 1e6


def solve_inner(model, spec, sample, theta, config=None, t_start=None):
    """Projection of ``P_n`` on ``M_theta``; returns a :class:`DualSolution`.

    Raises
    ------
    NotConverged
        When the iteration budget is exhausted or the dual is unbounded
        (``reason == "dual-unbounded"``), e.g. for ``klm`` when zero is not
        inside the convex hull of the ``g(X_i, theta)``.
    SingularHessian
        For collinear constraints.
    """
    X = sample.observations
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if X.shape[0] < model.l + 2:
        raise ValueError(f"need at least l + 2 = {model.l + 2} observations, got {X.shape[0]}")
    G = model.gbar(X, theta)
    if not np.all(np.isfinite(G)):
        raise DomainError("constraint function is not finite at this theta")
    return solve_gbar(G, spec, config=config, t_start=t_start, theta=theta)


# -- feasibility ------------------------------------------------------------


@dataclass(frozen=True)
class FeasibilityReport:
    """Whether some weights ``q_i > 0`` summing to one satisfy the constraints.

    ``status`` is one of ``"interior"``, ``"boundary"`` or
    ``"infeasible/unknown"``; ``margin`` is the largest achievable
    ``min_i n q_i`` when computed.
    """

    status: str
    method: str
    margin: float = math.nan

    @property
    def interior(self):
        return self.status == "interior"


def _angular_status(P, tol=1e-12):
    # zero is interior to conv(P) in R^2 iff the angular gaps between the
    # nonzero points are all smaller than pi
    norms = np.hypot(P[:, 0], P[:, 1])
    scale = max(norms.max(), 1e-300)
    nz = norms > tol * scale
    has_zero = not np.all(nz)
    if nz.sum() < 3:
        return "boundary" if has_zero or nz.sum() == 2 and _opposite(P[nz]) else "infeasible/unknown"
    ang = np.sort(np.arctan2(P[nz, 1], P[nz, 0]))
    gaps = np.diff(ang)
    gap = max(gaps.max(), 2 * math.pi - (ang[-1] - ang[0]))
    if gap < math.pi - 1e-12:
        return "interior"
    if gap <= math.pi + 1e-12 or has_zero:
        return "boundary"
    return "infeasible/unknown"


def _opposite(P):
    a, b = P
    return abs(a[0] * b[1] - a[1] * b[0]) <= 1e-12 * np.hypot(*a) * np.hypot(*b) and a @ b < 0


def _lp_margin(P):
    """Largest ``s`` with ``q_i >= s``, ``sum q = 1``, ``sum q_i P_i = 0``."""
    from scipy.optimize import linprog

    n, l = P.shape
    # variables (q_1..q_n, s); maximise s
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    A_eq = np.zeros((l + 1, n + 1))
    A_eq[0, :n] = 1.0
    A_eq[1:, :n] = P.T
    b_eq = np.zeros(l + 1)
    b_eq[0] = 1.0
    A_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=b_eq,
                  bounds=[(None, None)] * (n + 1), method="highs")
    if res.status != 0:
        return -math.inf, None
    return float(res.x[-1]), res.x[:n]


def feasibility_probe(model, sample, theta, spec=None):
    """Check whether a strictly positive feasible weight vector exists.

    Exact for ``l == 1`` (sign change) and ``l == 2`` (angular gaps); for
    larger ``l`` the max-margin linear program is solved.  Divergences whose
    domain is the whole real line only need the linear system to be
    consistent, which holds whenever the constraints are not collinear.
    """
    X = sample.observations
    P = model.moments(X, theta)
    n = P.shape[0]
    if spec is not None and not spec.restricted_domain:
        G = np.column_stack((np.ones(n), P))
        rank = np.linalg.matrix_rank(G)
        status = "interior" if rank == G.shape[1] else "infeasible/unknown"
        return FeasibilityReport(status, "rank")
    if model.l == 1:
        g = P[:, 0]
        lo, hi = g.min(), g.max()
        if lo < 0 < hi or (lo == 0 and hi == 0):
            status = "interior"
        elif lo <= 0 <= hi:
            status = "boundary"
        else:
            status = "infeasible/unknown"
        return FeasibilityReport(status, "sign")
    if model.l == 2:
        return FeasibilityReport(_angular_status(P), "angular")
    s, _ = _lp_margin(P)
    if s > 1e-12:
        status = "interior"
    elif s > -1e-12:
        status = "boundary"
    else:
        status = "infeasible/unknown"
    return FeasibilityReport(status, "lp", margin=n * s if math.isfinite(s) else s)
