import math
import zlib

import numpy as np
import pytest

from mephd.divergence import divergence_from_name
from mephd.dual import solve_inner
from mephd.errors import DomainError, NoInteriorPoint, NotConverged
from mephd.model import MomentModel, Sample, builtin_model
from mephd.primal import lagrange_residual, primal_project

NAMES = ["chi2m", "klm", "hellinger", "kl", "chi2"]
QL = builtin_model("qinlawless")
MEAN1 = builtin_model("mean1")


def test_uniform_weights_at_sample_mean():
    s = Sample([0.5, 1.5, 4.0, -1.0, 2.0])
    for name in NAMES:
        sol = primal_project(MEAN1, divergence_from_name(name), s, [np.mean(s.observations)])
        np.testing.assert_allclose(sol.weights, 0.2, atol=1e-14)
        assert sol.value == pytest.approx(0.0, abs=1e-15)


def test_three_point_quadratic_matches_dual():
    spec = divergence_from_name("chi2")
    s = Sample([-1.0, 0.0, 1.0])
    primal = primal_project(MEAN1, spec, s, [0.5])
    dual = solve_inner(MEAN1, spec, s, [0.5])
    np.testing.assert_allclose(primal.weights, dual.weights, atol=1e-6)
    assert primal.value == pytest.approx(dual.value, abs=1e-8)
    np.testing.assert_allclose(primal.weights, [1 / 12, 1 / 3, 7 / 12], atol=1e-12)


def test_qinlawless_hellinger_small_sample():
    spec = divergence_from_name("hellinger")
    rng = np.random.default_rng(2718)
    s = Sample(rng.normal(1.0, math.sqrt(2.0), 10))
    try:
        dual = solve_inner(QL, spec, s, [0.3])
    except NotConverged:
        with pytest.raises(NoInteriorPoint):
            primal_project(QL, spec, s, [0.3])
        return
    primal = primal_project(QL, spec, s, [0.3])
    assert primal.value == pytest.approx(dual.value, abs=1e-8)


def test_solution_invariants():
    spec = divergence_from_name("klm")
    s = Sample(np.random.default_rng(5).normal(1, math.sqrt(2), 25))
    sol = primal_project(QL, spec, s, [1.1])
    assert abs(sol.weights.sum() - 1) <= 1e-10
    assert sol.constraint_residual <= 1e-8
    assert np.all(sol.weights > 0)
    assert sol.kkt_residual <= 1e-10
    assert set(sol.to_dict()) >= {"weights", "value", "kkt_residual"}


@pytest.mark.parametrize("name", NAMES)
def test_agrees_with_dual_on_random_instances(name):
    spec = divergence_from_name(name)
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    agreed = 0
    attempts = 0
    while agreed < 50:
        attempts += 1
        assert attempts < 400, "too few solvable instances"
        n = int(rng.integers(5, 31))
        s = Sample(rng.normal(1.0, math.sqrt(2.0), n))
        theta = [rng.uniform(0.0, 2.0)]
        try:
            dual = solve_inner(QL, spec, s, theta)
        except NotConverged:
            continue
        primal = primal_project(QL, spec, s, theta)
        assert abs(primal.value - dual.value) <= 1e-8
        assert np.max(np.abs(primal.weights - dual.weights)) <= 1e-6
        # weak duality, beyond rounding
        assert dual.value <= primal.value + 1e-12
        agreed += 1


@pytest.mark.parametrize("name", ["klm", "hellinger", "chi2"])
def test_start_perturbation_reaches_the_same_optimum(name):
    spec = divergence_from_name(name)
    rng = np.random.default_rng(77)
    s = Sample(rng.normal(1.0, math.sqrt(2.0), 20))
    base = primal_project(QL, spec, s, [0.9])
    for _ in range(10):
        # stay strictly inside the domain when it is restricted
        start = base.weights * np.exp(rng.normal(0, 0.3, s.n))
        start /= start.sum()
        other = primal_project(QL, spec, s, [0.9], start=start)
        assert other.value == pytest.approx(base.value, abs=1e-8)
        np.testing.assert_allclose(other.weights, base.weights, atol=1e-8)


def test_infeasible_theta_has_no_interior_point():
    with pytest.raises(NoInteriorPoint):
        primal_project(MEAN1, divergence_from_name("klm"), Sample([1.0, 2.0, 3.0]), [5.0])


def test_quadratic_reaches_outside_the_hull():
    # chi2 allows negative weights, so theta beyond the data is still attainable
    sol = primal_project(MEAN1, divergence_from_name("chi2"), Sample([1.0, 2.0, 3.0]), [5.0])
    assert sol.weights @ [1.0, 2.0, 3.0] == pytest.approx(5.0, abs=1e-12)
    assert sol.weights.min() < 0


def test_rejects_large_samples_and_collinear_constraints():
    with pytest.raises(ValueError):
        primal_project(MEAN1, divergence_from_name("kl"), Sample(np.arange(201.0)), [100.0])

    def g(X, th):
        return np.column_stack((X[:, 0] - th[0], 3 * (X[:, 0] - th[0])))

    def jac(X, th):
        return np.tile(np.array([[-1.0], [-3.0]]), (X.shape[0], 1, 1))

    dup = MomentModel("dup-primal", 1, 2, 1, g, jac, ((-5.0, 5.0),))
    with pytest.raises(DomainError):
        primal_project(dup, divergence_from_name("kl"), Sample([0.0, 1.0, 3.0, 4.0]), [2.0])


class TestLagrangeResidual:
    def test_converged_multipliers(self):
        s = Sample(np.random.default_rng(8).normal(1, math.sqrt(2), 40))
        for name in NAMES:
            spec = divergence_from_name(name)
            sol = solve_inner(QL, spec, s, [1.0])
            assert lagrange_residual(QL, spec, s, [1.0], sol.c) <= 1e-8

    def test_zero_multipliers_at_a_root(self):
        s = Sample([1.0, 2.0, 6.0])
        assert lagrange_residual(MEAN1, divergence_from_name("kl"), s, [3.0], [0.0, 0.0]) <= 1e-14

    def test_zero_multipliers_give_the_moment_gap(self):
        s = Sample([1.0, 2.0, 6.0])
        # P_n g(theta) = 3 - 2.5 = 0.5
        r = lagrange_residual(MEAN1, divergence_from_name("hellinger"), s, [2.5], [0.0, 0.0])
        assert r == pytest.approx(0.5, abs=1e-15)

    def test_outside_prime_image(self):
        with pytest.raises(DomainError):
            lagrange_residual(MEAN1, divergence_from_name("klm"), Sample([1.0, 2.0]), [0.0],
                              [5.0, 0.0])
