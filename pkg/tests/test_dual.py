import math
import zlib

import numpy as np
import pytest

from mephd.divergence import divergence_from_name
from mephd.dual import (
    SolverConfig,
    _angular_status,
    _lp_margin,
    dual_objective,
    feasibility_probe,
    solve_inner,
)
from mephd.errors import DomainError, NotConverged, SingularHessian
from mephd.model import MomentModel, Sample, builtin_model

NAMES = ["chi2m", "klm", "hellinger", "kl", "chi2"]
QL = builtin_model("qinlawless")
MEAN1 = builtin_model("mean1")


def ql_sample(n, seed, theta0=1.0):
    rng = np.random.default_rng(seed)
    return Sample(rng.normal(theta0, math.sqrt(theta0**2 + 1), n))


def random_feasible_t(spec, G, rng, scale=0.3):
    """A random t with t'gbar_i well inside the prime image."""
    for _ in range(100):
        t = rng.normal(0, scale, G.shape[1]) / np.maximum(1.0, np.abs(G).max(axis=0))
        u = G @ t
        lo = spec.prime_lo if math.isfinite(spec.prime_lo) else -np.inf
        hi = spec.prime_hi if math.isfinite(spec.prime_hi) else np.inf
        if np.all(u > lo + 0.05 * min(1.0, hi - lo)) and np.all(u < hi - 0.05):
            return t
        scale *= 0.5
    raise AssertionError("no feasible t found")


class TestDualObjective:
    def test_at_zero(self):
        s = ql_sample(20, 1)
        G = QL.gbar(s.observations, [1.2])
        for name in NAMES:
            v, g, H = dual_objective(QL, divergence_from_name(name), s, [1.2], np.zeros(3))
            assert v == 0.0
            np.testing.assert_allclose(g, np.r_[0.0, -G[:, 1:].mean(axis=0)], atol=1e-15)
            np.testing.assert_allclose(H, -G.T @ G / 20, rtol=1e-14)

    def test_klm_closed_form(self):
        s = ql_sample(15, 2)
        t = np.array([0.02, 0.05, -0.03])
        G = QL.gbar(s.observations, [0.8])
        v, _, _ = dual_objective(QL, divergence_from_name("klm"), s, [0.8], t)
        assert v == pytest.approx(t[0] + np.mean(np.log(1 - G @ t)), rel=1e-13)

    def test_chi2_two_point_hand_value(self):
        s = Sample([-1.0, 1.0])
        v, _, _ = dual_objective(MEAN1, divergence_from_name("chi2"), s, [0.0], [0.0, 0.5])
        assert v == pytest.approx(-0.125, abs=1e-15)

    def test_domain_error(self):
        s = ql_sample(10, 3)
        with pytest.raises(DomainError):
            dual_objective(QL, divergence_from_name("klm"), s, [1.0], [2.0, 0.0, 0.0])

    @pytest.mark.parametrize("name", NAMES)
    def test_derivatives_match_differences(self, name):
        spec = divergence_from_name(name)
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        for _ in range(100):
            s = ql_sample(int(rng.integers(5, 40)), int(rng.integers(1 << 30)))
            theta = [rng.uniform(-1, 3)]
            G = QL.gbar(s.observations, theta)
            t = random_feasible_t(spec, G, rng)
            v, g, H = dual_objective(QL, spec, s, theta, t)
            for j in range(3):
                h = 1e-6
                e = np.zeros(3)
                e[j] = h
                vp, gp, _ = dual_objective(QL, spec, s, theta, t + e)
                vm, gm, _ = dual_objective(QL, spec, s, theta, t - e)
                assert g[j] == pytest.approx((vp - vm) / (2 * h), rel=1e-6, abs=1e-8)
                np.testing.assert_allclose(H[:, j], (gp - gm) / (2 * h), rtol=1e-6, atol=1e-8)
            assert np.all(np.linalg.eigvalsh(H) <= 1e-12)

    @pytest.mark.parametrize("name", NAMES)
    def test_concave_along_segments(self, name):
        spec = divergence_from_name(name)
        rng = np.random.default_rng(17)
        s = ql_sample(25, 4)
        G = QL.gbar(s.observations, [1.0])
        for _ in range(50):
            a = random_feasible_t(spec, G, rng)
            b = random_feasible_t(spec, G, rng)
            fa = dual_objective(QL, spec, s, [1.0], a)[0]
            fb = dual_objective(QL, spec, s, [1.0], b)[0]
            fm = dual_objective(QL, spec, s, [1.0], 0.5 * (a + b))[0]
            assert fm >= 0.5 * (fa + fb) - 1e-12


class TestSolveInner:
    def test_stationary_at_sample_mean(self):
        s = Sample([0.3, 1.1, 2.0, -0.4])
        for name in NAMES:
            sol = solve_inner(MEAN1, divergence_from_name(name), s, [np.mean(s.observations)])
            assert sol.value == pytest.approx(0.0, abs=1e-16)
            np.testing.assert_allclose(sol.c, 0.0, atol=1e-15)
            np.testing.assert_allclose(sol.weights, 0.25, rtol=1e-14)

    def test_chi2_three_points_closed_form(self):
        """Quadratic divergence: weights are affine in x, found by hand."""
        s = Sample([-1.0, 0.0, 1.0])
        sol = solve_inner(MEAN1, divergence_from_name("chi2"), s, [0.5])
        # q_i = 1/3 + b (x_i - 0) with sum q_i x_i = 0.5  ->  b = 0.25
        np.testing.assert_allclose(sol.weights, [1 / 12, 1 / 3, 7 / 12], atol=1e-12)
        # n q = (1/4, 1, 7/4), so the mean of (n q - 1)^2 / 2 is 3/16
        assert sol.value == pytest.approx(3 / 16, abs=1e-14)

    def test_klm_outside_hull_is_unbounded(self):
        with pytest.raises(NotConverged) as info:
            solve_inner(MEAN1, divergence_from_name("klm"), Sample([1.0, 2.0, 3.0]), [5.0])
        assert info.value.reason == "dual-unbounded"
        assert info.value.last_t is not None

    def test_needs_enough_points(self):
        with pytest.raises(ValueError):
            solve_inner(QL, divergence_from_name("klm"), Sample([1.0, 2.0, 3.0]), [1.0])

    def test_collinear_constraints(self):
        def g(X, th):
            return np.column_stack((X[:, 0] - th[0], 2 * (X[:, 0] - th[0])))

        def jac(X, th):
            return np.tile(np.array([[-1.0], [-2.0]]), (X.shape[0], 1, 1))

        dup = MomentModel("dup", 1, 2, 1, g, jac, ((-5.0, 5.0),))
        with pytest.raises(SingularHessian):
            solve_inner(dup, divergence_from_name("chi2"), Sample([0.0, 1.0, 2.0, 4.0]), [1.0])

    @pytest.mark.parametrize("name", NAMES + ["power:1.5", "power:-2", "power:4"])
    def test_solution_invariants(self, name):
        spec = divergence_from_name(name)
        rng = np.random.default_rng(23)
        checked = 0
        for _ in range(40):
            s = ql_sample(int(rng.integers(8, 60)), int(rng.integers(1 << 30)))
            theta = [rng.uniform(0.3, 1.8)]
            try:
                sol = solve_inner(QL, spec, s, theta)
            except NotConverged:
                continue
            checked += 1
            G = QL.gbar(s.observations, theta)
            u = G @ sol.c
            assert np.all(spec.in_prime_image(u))
            assert abs(sol.weights.sum() - 1) <= 1e-8
            assert np.max(np.abs(sol.weights @ G[:, 1:])) <= 1e-8
            # u is only known up to rounding in G t; propagate that through phi*'
            _, x, x_prime = spec.conjugate(u)
            du = 8 * np.finfo(float).eps * (np.abs(G) @ np.abs(sol.c))
            bound = 1e-15 * np.abs(x) + x_prime * du
            assert np.all(np.abs(s.n * sol.weights - x) <= bound)
            assert sol.value >= -1e-10
            assert sol.grad_norm <= 1e-10
        assert checked >= 20

    def test_klm_mass_multiplier_vanishes(self):
        spec = divergence_from_name("klm")
        rng = np.random.default_rng(99)
        for _ in range(30):
            s = ql_sample(40, int(rng.integers(1 << 30)))
            sol = solve_inner(QL, spec, s, [rng.uniform(0.6, 1.4)])
            assert abs(sol.c[0]) <= 1e-10

    @pytest.mark.parametrize("name", NAMES)
    def test_rescaling_a_constraint(self, name):
        spec = divergence_from_name(name)
        s = ql_sample(30, 5)

        def scaled(X, th):
            g = QL.g(X, th)
            g[:, 1] *= 7.5
            return g

        def scaled_jac(X, th):
            J = QL.g_jac(X, th)
            J[:, 1, :] *= 7.5
            return J

        m2 = MomentModel("scaled", 1, 2, 1, scaled, scaled_jac, QL.theta_box)
        a = solve_inner(QL, spec, s, [1.05])
        b = solve_inner(m2, spec, s, [1.05])
        assert a.value == pytest.approx(b.value, abs=1e-8)
        np.testing.assert_allclose(a.weights, b.weights, atol=1e-8)
        assert b.c[2] == pytest.approx(a.c[2] / 7.5, rel=1e-6, abs=1e-12)

    def test_warm_start_gives_the_same_answer(self):
        spec = divergence_from_name("hellinger")
        s = ql_sample(50, 6)
        cold = solve_inner(QL, spec, s, [1.2])
        near = solve_inner(QL, spec, s, [1.25])
        warm = solve_inner(QL, spec, s, [1.2], t_start=near.c)
        assert warm.value == pytest.approx(cold.value, abs=1e-14)
        np.testing.assert_allclose(warm.weights, cold.weights, atol=1e-10)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(domain_margin=1.0)
        with pytest.raises(ValueError):
            SolverConfig(backtrack_shrink=1.5)
        with pytest.raises(ValueError):
            SolverConfig(grad_tol=0.0)

    def test_iteration_cap(self):
        spec = divergence_from_name("klm")
        s = ql_sample(50, 8)
        with pytest.raises(NotConverged) as info:
            solve_inner(QL, spec, s, [1.8], SolverConfig(max_iter=1))
        assert info.value.reason == "max-iter"

    def test_to_dict_fields(self):
        sol = solve_inner(MEAN1, divergence_from_name("kl"), Sample([1.0, 2.0, 4.0]), [2.0])
        d = sol.to_dict()
        assert {"theta", "c", "value", "weights", "converged", "iterations"} <= set(d)


class TestFeasibilityProbe:
    def test_mean1_examples(self):
        s = Sample([1.0, 2.0, 3.0])
        assert feasibility_probe(MEAN1, s, [2.0]).status == "interior"
        assert feasibility_probe(MEAN1, s, [3.0]).status == "boundary"
        assert feasibility_probe(MEAN1, s, [5.0]).status == "infeasible/unknown"

    def test_unrestricted_domain_uses_rank(self):
        s = Sample([1.0, 2.0, 3.0])
        rep = feasibility_probe(MEAN1, s, [5.0], divergence_from_name("chi2"))
        assert rep.status == "interior" and rep.method == "rank"

    def test_angular_agrees_with_lp(self):
        rng = np.random.default_rng(31)
        for _ in range(300):
            n = int(rng.integers(3, 12))
            P = rng.normal(size=(n, 2)) + rng.normal(0, 1.5, size=2)
            s, _ = _lp_margin(P)
            ang = _angular_status(P)
            if s > 1e-9:
                assert ang == "interior"
            elif s < -1e-9 or not math.isfinite(s):
                assert ang == "infeasible/unknown"

    def test_probe_predicts_solver_success(self):
        spec = divergence_from_name("klm")
        s = ql_sample(30, 12)
        for theta in np.linspace(-2, 4, 61):
            interior = feasibility_probe(QL, s, [theta], spec).interior
            try:
                solve_inner(QL, spec, s, [theta])
                ok = True
            except NotConverged:
                ok = False
            assert ok == interior

    def test_lp_branch_for_three_constraints(self):
        m = builtin_model("normal2")
        rng = np.random.default_rng(4)
        s = Sample(rng.normal(1, 1.4, 50))
        rep = feasibility_probe(m, s, [1.0, 2.0])
        assert rep.method == "lp" and rep.status == "interior" and rep.margin > 0
        assert feasibility_probe(m, s, [9.0, 2.0]).status == "infeasible/unknown"
