"""Brute-force primal projection used to certify the dual solver.

Minimises ``(1/n) sum_i phi(n q_i)`` over weight vectors satisfying
``sum q_i = 1`` and ``sum q_i g(X_i, theta) = 0`` directly in the weights.
The affine constraint set is parameterised as ``q = q0 + Z y`` with ``Z`` an
orthonormal basis of its direction space, and damped Newton runs on ``y``.
No multiplier appears anywhere, so agreement with the dual route is a
genuine cross-check.  Meant for small samples (``n <= 200``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dual import _lp_margin
from .errors import DomainError, NoInteriorPoint, NotConverged

__all__ = ["PrimalSolution", "primal_project", "lagrange_residual"]


@dataclass
class PrimalSolution:
    weights: np.ndarray
    value: float
    kkt_residual: float
    constraint_residual: float
    iterations: int

    def to_dict(self):
        return {
            "weights": self.weights.tolist(),
            "value": self.value,
            "kkt_residual": self.kkt_residual,
            "constraint_residual": self.constraint_residual,
            "iterations": self.iterations,
        }


def _objective(spec, q, n):
    v, d1, d2 = spec.phi(n * q)
    return v.sum() / n, d1, n * d2


def _interior_start(spec, P, q0):
    n = q0.shape[0]
    if not spec.restricted_domain or np.all(q0 > 0):
        return q0
    s, q_m = _lp_margin(P)
    if not s > 1e-14:
        raise NoInteriorPoint(
            "no strictly positive weights satisfy the constraints at this theta"
        )
    # blend the minimum-norm point towards the max-margin point until every
    # weight is at least half the margin
    floor = 0.5 * s
    tau = 0.0
    for a, b in zip(q0, q_m):
        if a < floor:
            tau = max(tau, (floor - a) / (b - a))
    q = (1.0 - tau) * q0 + tau * q_m
    if not np.all(q > 0):
        raise NoInteriorPoint("could not blend the feasible point into the interior")
    return q


def primal_project(model, spec, sample, theta, tol=1e-13, max_iter=200, start=None):
    """Projection of ``P_n`` on ``M_theta`` by null-space Newton in the weights.

    Parameters
    ----------
    start : array, optional
        Feasible, strictly interior starting weights.  It is projected back
        on the affine constraint set before use.

    Returns
    -------
    PrimalSolution
        ``kkt_residual`` is the sup-norm of the reduced gradient
        ``Z' phi'(n q)``.
    """
    X = sample.observations
    n = X.shape[0]
    if n > 200:
        raise ValueError("the primal oracle is meant for n <= 200")
    P = model.moments(X, theta)
    A = np.column_stack((np.ones(n), P))  # constraints are A' q = e_0
    p = A.shape[1]
    Q, R = np.linalg.qr(A, mode="complete")
    Rp = R[:p]
    if np.min(np.abs(np.diag(Rp))) <= 1e-12 * np.max(np.abs(np.diag(Rp))):
        raise DomainError("constraints are collinear on this sample")
    Q1, Z = Q[:, :p], Q[:, p:]
    e0 = np.zeros(p)
    e0[0] = 1.0
    q0 = Q1 @ np.linalg.solve(Rp.T, e0)

    q = _interior_start(spec, P, q0) if start is None else np.asarray(start, dtype=float)
    # the LP start is only accurate to the LP tolerance; land exactly on the
    # affine set
    q = q0 + Z @ (Z.T @ (q - q0))
    if spec.restricted_domain and not np.all(q > 0):
        raise NoInteriorPoint("starting weights are not strictly positive")

    f, d1, d2 = _objective(spec, q, n)
    it = 0
    while True:
        grad = Z.T @ d1
        kkt = float(np.max(np.abs(grad))) if grad.size else 0.0
        if grad.size == 0:
            break
        H = (Z.T * d2) @ Z
        try:
            L = np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            # flat pieces of a tangent-continued phi
            L = np.linalg.cholesky(H + 1e-10 * max(1.0, np.abs(H).max()) * np.eye(H.shape[0]))
        dy = -np.linalg.solve(L.T, np.linalg.solve(L, grad))
        decrement = float(-grad @ dy)
        # a decrement below the resolution of f cannot be acted on
        if decrement <= max(tol**2, 4 * np.finfo(float).eps * abs(f)) or kkt <= tol:
            break
        if it >= max_iter:
            raise NotConverged(f"primal Newton did not converge in {it} iterations",
                               iterations=it, grad_norm=kkt)
        it += 1
        dq = Z @ dy
        alpha = 1.0
        for _ in range(60):
            q_new = q + alpha * dq
            if not spec.restricted_domain or np.all(q_new > 0):
                f_new, d1_new, d2_new = _objective(spec, q_new, n)
                # a few ulps of slack: near the optimum the predicted decrease
                # is below the rounding noise of f
                if f_new <= f - 1e-4 * alpha * decrement + 8e-16 * abs(f):
                    break
            alpha *= 0.5
        else:
            # no strict decrease left at double precision
            break
        stalled = not f_new < f
        q, f, d1, d2 = q_new, f_new, d1_new, d2_new
        if stalled:
            break

    constraint = float(np.max(np.abs(A.T @ q - e0)))
    return PrimalSolution(weights=q, value=float(f), kkt_residual=kkt,
                          constraint_residual=constraint, iterations=it)


def lagrange_residual(model, spec, sample, theta, c):
    """Sup-norm residual of the first-order system defining the multipliers ``c``."""
    G = model.gbar(sample.observations, theta)
    u = G @ np.asarray(c, dtype=float)
    if not np.all(spec.in_prime_image(u)):
        raise DomainError("c' gbar leaves the image of phi'")
    x = spec._conj_terms(u)[1]
    res = (x @ G) / G.shape[0]
    res[0] -= 1.0
    return float(np.max(np.abs(res)))
