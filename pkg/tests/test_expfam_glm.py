import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gbv.core import GBVError
from gbv.models.expfam import (
    BERNOULLI,
    PLUSMINUS,
    POISSON,
    GLMDataset,
    build_glm,
    build_iid_expfam,
    family,
    gaussian,
    kappa_derivative_errors,
)
from gbv.numerics import find_minimizer
from gbv.simulate import gen_glm


class TestFamilies:
    @pytest.mark.parametrize("fam", [BERNOULLI, POISSON, PLUSMINUS, gaussian(2.0)], ids=lambda f: f.name)
    def test_kappa_derivatives(self, fam):
        errs = kappa_derivative_errors(fam, np.linspace(-3, 3, 13))
        assert np.max(errs) < 1e-5

    def test_softplus_stable(self):
        assert float(BERNOULLI.kappa(800.0)) == pytest.approx(800.0)
        assert float(BERNOULLI.kappa(-800.0)) == pytest.approx(0.0, abs=1e-300)

    def test_bernoulli_third_within_cap(self):
        e = np.linspace(-10, 10, 2001)
        assert np.max(np.abs(BERNOULLI.d3(e))) <= 1 / (6 * math.sqrt(3)) + 1e-12

    def test_unknown(self):
        with pytest.raises(ValueError):
            family("gamma")


class TestIIDExpFam:
    def test_bernoulli_value_at_zero(self):
        m = build_iid_expfam("bernoulli", np.array([1.0, 0, 0, 0]))
        assert m.f([0.0]) == pytest.approx(math.log(2), abs=1e-12)
        assert m.f([0.0]) == pytest.approx(0.693147, abs=1e-6)

    def test_poisson_stationary_at_log2(self):
        m = build_iid_expfam("poisson", np.array([2.0, 2.0, 1.0, 3.0]))
        np.testing.assert_allclose(m.grad([math.log(2)]), [0.0], atol=1e-14)

    def test_gaussian_symmetric(self):
        m = build_iid_expfam(gaussian(1.0), np.array([-1.0, 1.0, -2.0, 2.0]))
        fit = find_minimizer(m, [0.5])
        np.testing.assert_allclose(fit.theta_n, [0.0], atol=1e-12)
        np.testing.assert_allclose(fit.hessian_at_min, [[1.0]])

    def test_component_gradients_sum(self):
        y = np.array([0.0, 1.0, 1.0, 0.0, 1.0])
        m = build_iid_expfam("bernoulli", y)
        t = np.array([0.4])
        np.testing.assert_allclose(m.component_gradients(t).sum(axis=0) / m.n, m.grad(t), atol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 49), st.integers(50, 200))
    def test_bernoulli_moment_matching(self, k, n):
        # theta_n solves kappa'(theta) = S_n
        k = min(k, n - 1)
        y = np.r_[np.ones(k), np.zeros(n - k)]
        # theta error is about tol / kappa'', so tighten tol for skewed proportions
        fit = find_minimizer(build_iid_expfam("bernoulli", y), [0.0], tol=1e-13)
        assert fit.theta_n[0] == pytest.approx(math.log(k / (n - k)), abs=1e-8)


class TestGLM:
    def test_linear_normal_equations(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((40, 3))
        y = X @ [1.0, -0.5, 2.0] + rng.standard_normal(40)
        fit = find_minimizer(build_glm(GLMDataset(X, y, gaussian(1.0))), np.zeros(3))
        np.testing.assert_allclose(fit.theta_n, np.linalg.solve(X.T @ X, X.T @ y), atol=1e-10)

    def test_logistic_intercept_only(self):
        y = np.array([1.0, 0.0, 0.0, 0.0] * 10)
        fit = find_minimizer(build_glm(GLMDataset(np.ones((40, 1)), y, BERNOULLI)), [0.0])
        assert fit.theta_n[0] == pytest.approx(-1.098612, abs=1e-6)

    def test_poisson_intercept_at_zero(self):
        m = build_glm(GLMDataset(np.ones((3, 1)), np.array([2.0, 3.0, 4.0]), POISSON))
        assert m.f([0.0]) == pytest.approx(1.0, abs=1e-14)

    def test_rank_deficient(self):
        X = np.column_stack([np.ones(10), np.ones(10)])
        with pytest.raises(GBVError, match="not identifiable"):
            build_glm(GLMDataset(X, np.zeros(10), gaussian(1.0)))

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            GLMDataset(np.array([[1.0], [np.nan]]), np.zeros(2), BERNOULLI)

    def test_csv_roundtrip(self, tmp_path):
        d = gen_glm("poisson", [0.3, -0.2], 30, ("bounded-uniform", -1, 1), seed=2)
        d.to_csv(tmp_path / "glm.csv")
        back = GLMDataset.from_csv(tmp_path / "glm.csv", "poisson")
        np.testing.assert_array_equal(back.X, d.X)
        np.testing.assert_array_equal(back.y, d.y)

    @pytest.mark.parametrize("kind", ["linear", "logistic", "poisson"])
    def test_derivatives(self, kind):
        from gbv.core import validate_model

        d = gen_glm(kind, [0.4, -0.3, 0.2], 300, ("bounded-uniform", -1, 1), seed=7)
        if kind == "linear":
            d = GLMDataset(d.X, d.y, gaussian(1.0))
        m = build_glm(d)
        rep = validate_model(m, np.random.default_rng(1).uniform(-1, 1, (20, 3)))
        assert rep.passed

    def test_third_tensor_matches_hessian_differences(self, logistic_glm):
        from gbv.numerics import central_third

        t = np.array([0.2, -0.4])
        np.testing.assert_allclose(logistic_glm.third(t), central_third(logistic_glm.hess, t), atol=1e-6)
