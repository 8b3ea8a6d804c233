import numpy as np
import pytest

from dsaga.data import Dataset, Example
from dsaga.losses import (
    GradientStat,
    LinearPerturbation,
    LogisticLoss,
    QuadraticObjective,
    example_gradient,
    full_gradient,
    objective_value,
    reconstruct_gradient,
    smoothness_constants,
)
from conftest import make_logistic_problem, make_lstsq_problem, random_quadratic


def finite_difference(obj, data, w, h=1e-6):
    g = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (obj.value(data, w + e) - obj.value(data, w - e)) / (2 * h)
    return g


class TestValues:
    def test_logistic_at_origin_is_log2(self):
        obj, data = make_logistic_problem()
        assert objective_value(obj, data, np.zeros(data.dimension)) == pytest.approx(
            np.log(2), rel=1e-12
        )

    def test_single_example_closed_form(self):
        data = Dataset([Example(1.0, [0], [1.0])])
        obj = LogisticLoss(2.0)
        assert objective_value(obj, data, np.zeros(1)) == pytest.approx(np.log(2))

    def test_quadratic_zero_at_center(self):
        obj = random_quadratic(4, seed=1)
        assert objective_value(obj, None, obj.center) == 0.0

    def test_dimension_mismatch(self):
        obj, data = make_logistic_problem(d=8)
        with pytest.raises(ValueError):
            objective_value(obj, data, np.zeros(5))
        with pytest.raises(ValueError):
            full_gradient(obj, data, np.zeros(5))

    def test_logistic_requires_pm1_labels(self):
        data = Dataset([Example(0.5, [0], [1.0])])
        with pytest.raises(ValueError):
            objective_value(LogisticLoss(0.1), data, np.zeros(1))


class TestExampleGradient:
    def test_logistic_stat_at_zero(self):
        ex = Example(1.0, [0, 1], [1.0, 2.0])
        stat = example_gradient(LogisticLoss(0.0), ex, np.zeros(2))
        assert stat.value == pytest.approx(-0.5)
        ex_neg = Example(-1.0, [0], [1.0])
        assert example_gradient(LogisticLoss(0.0), ex_neg, np.zeros(1)).value == pytest.approx(0.5)

    def test_logistic_saturation(self):
        ex = Example(1.0, [0], [1.0])
        stat = example_gradient(LogisticLoss(0.0), ex, np.array([1e3]))
        assert stat.value == 0.0

    def test_reconstruction_matches_finite_difference(self):
        rng = np.random.default_rng(0)
        ex = Example(1.0, [0, 2], [0.7, -1.3])
        obj = LogisticLoss(0.3)
        data = Dataset([ex], dimension=3)
        for _ in range(10):
            w = rng.standard_normal(3)
            stat = example_gradient(obj, ex, w)
            grad = reconstruct_gradient(obj, ex, stat, w)
            fd = finite_difference(obj, data, w)
            assert np.linalg.norm(grad - fd) <= 1e-6 * (1 + np.linalg.norm(fd))

    def test_stat_must_be_finite(self):
        with pytest.raises(ValueError):
            GradientStat(np.inf)


class TestFullGradient:
    def test_quadratic_zero_at_center(self):
        obj = random_quadratic(3, seed=2)
        assert np.array_equal(full_gradient(obj, None, obj.center), np.zeros(3))

    def test_single_example_equals_reconstruction(self):
        obj, data = make_logistic_problem(n=1, d=4)
        w = np.array([0.1, -0.2, 0.3, 0.0])
        ex = data.examples[0]
        stat = example_gradient(obj, ex, w)
        assert full_gradient(obj, data, w) == pytest.approx(
            reconstruct_gradient(obj, ex, stat, w), rel=1e-12
        )

    @pytest.mark.parametrize("problem", ["logistic", "lstsq"])
    def test_matches_finite_difference(self, problem):
        if problem == "logistic":
            obj, data = make_logistic_problem(n=40, d=6, lam=0.1)
        else:
            obj, data = make_lstsq_problem(n=40, d=6, lam=0.05)
        rng = np.random.default_rng(1)
        for _ in range(5):
            w = rng.standard_normal(6)
            g = full_gradient(obj, data, w)
            fd = finite_difference(obj, data, w)
            assert np.linalg.norm(g - fd) <= 1e-6 * (1 + np.linalg.norm(g))


class TestSmoothness:
    def test_logistic_closed_form(self):
        data = Dataset([Example(1.0, [0, 1], [3.0, 4.0])])
        L, mu = smoothness_constants(LogisticLoss(0.1), data)
        assert L == pytest.approx(25 / 4 + 0.1)
        assert mu == 0.1

    def test_quadratic_extreme_eigenvalues(self):
        obj = QuadraticObjective(np.diag([1.0, 10.0]), np.zeros(2))
        L, mu = smoothness_constants(obj, None)
        assert (L, mu) == (10.0, 1.0)

    def test_unregularized_mu_zero(self):
        obj, data = make_logistic_problem(lam=0.0)
        _, mu = smoothness_constants(obj, data)
        assert mu == 0.0


class TestConvexityProperties:
    @pytest.mark.parametrize("problem", ["logistic", "lstsq", "quadratic"])
    def test_strong_convexity_certificate(self, problem, rng):
        if problem == "logistic":
            obj, data = make_logistic_problem(n=30, d=5, lam=0.2)
        elif problem == "lstsq":
            obj, data = make_lstsq_problem(n=30, d=5, lam=0.2)
        else:
            obj, data = random_quadratic(5, seed=3), None
        mu = smoothness_constants(obj, data)[1]
        for _ in range(20):
            w = rng.standard_normal(5)
            v = rng.standard_normal(5)
            lhs = obj.value(data, v)
            rhs = (
                obj.value(data, w)
                + obj.full_gradient(data, w) @ (v - w)
                + 0.5 * mu * np.sum((v - w) ** 2)
            )
            assert lhs >= rhs - 1e-9

    @pytest.mark.parametrize("problem", ["logistic", "lstsq", "quadratic"])
    def test_l_smoothness(self, problem, rng):
        if problem == "logistic":
            obj, data = make_logistic_problem(n=30, d=5, lam=0.2)
        elif problem == "lstsq":
            obj, data = make_lstsq_problem(n=30, d=5, lam=0.2)
        else:
            obj, data = random_quadratic(5, seed=3), None
        L = smoothness_constants(obj, data)[0]
        for _ in range(20):
            w = rng.standard_normal(5)
            v = rng.standard_normal(5)
            gap = np.linalg.norm(
                obj.full_gradient(data, w) - obj.full_gradient(data, v)
            )
            assert gap <= L * np.linalg.norm(w - v) * (1 + 1e-9)


class TestHessian:
    @pytest.mark.parametrize("problem", ["logistic", "lstsq"])
    def test_matches_gradient_differences(self, problem, rng):
        if problem == "logistic":
            obj, data = make_logistic_problem(n=30, d=4, lam=0.2)
        else:
            obj, data = make_lstsq_problem(n=30, d=4, lam=0.2)
        w = rng.standard_normal(4)
        h = obj.hessian(data, w)
        assert np.allclose(h, h.T)
        step = 1e-6
        for i in range(4):
            e = np.zeros(4)
            e[i] = step
            fd = (obj.full_gradient(data, w + e) - obj.full_gradient(data, w - e)) / (2 * step)
            assert np.linalg.norm(h[:, i] - fd) <= 1e-5 * (1 + np.linalg.norm(fd))


class TestLinearPerturbation:
    def test_gradient_gains_constant(self, rng):
        obj, data = make_logistic_problem(n=20, d=4, lam=0.1)
        coeff = rng.standard_normal(4)
        origin = rng.standard_normal(4)
        shifted = LinearPerturbation(obj, coeff, origin)
        w = rng.standard_normal(4)
        assert shifted.full_gradient(data, w) == pytest.approx(
            obj.full_gradient(data, w) + coeff, rel=1e-12
        )
        assert shifted.value(data, origin) == pytest.approx(obj.value(data, origin))

    def test_value_includes_linear_term(self, rng):
        obj = random_quadratic(3, seed=4)
        coeff = rng.standard_normal(3)
        origin = np.zeros(3)
        shifted = LinearPerturbation(obj, coeff, origin)
        w = rng.standard_normal(3)
        assert shifted.value(None, w) == pytest.approx(
            obj.value(None, w) + coeff @ w, rel=1e-12
        )
