import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from epprobit import oracles
from epprobit.ep_engine import Dataset, fit
from epprobit.oracles import (
    GibbsSpec,
    HmcSpec,
    QuadratureSpec,
    batch_means_se,
    exact_predictive_quadrature,
    gibbs_predictive,
    hmc_latent_chain,
    hmc_predictive,
    mc_gaussian_expectation,
    truncated_normal_draw,
)
from epprobit.predictive import DenseCovariance, GaussianPosterior
from epprobit.special_fn import zeta1, zeta2

from conftest import make_dataset


def orthant_predictive(x, y, nu2, x_new):
    """Exact Pr[y_new = 1 | y] for one observation and one coefficient.

    The latent pair (x b + e, x_new b + e') is bivariate normal, so the
    answer is a ratio of orthant probabilities.
    """
    s = 2 * y - 1
    v1 = x * x * nu2 + 1
    v2 = x_new * x_new * nu2 + 1
    rho = s * x * x_new * nu2 / math.sqrt(v1 * v2)
    both = 0.25 + math.asin(rho) / (2 * math.pi)
    return both / 0.5


SCALAR = Dataset(np.ones((1, 1)), [1], 1.0)


class TestQuadrature:
    def test_two_thirds(self):
        assert exact_predictive_quadrature(SCALAR, [1.0]) == pytest.approx(2 / 3, abs=1e-9)

    def test_negative_new_point(self):
        expected = orthant_predictive(1.0, 1, 1.0, -2.0)
        assert expected == pytest.approx(0.282047, abs=1e-6)
        assert exact_predictive_quadrature(SCALAR, [-2.0]) == pytest.approx(expected, abs=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(
        st.floats(-3, 3).filter(lambda v: abs(v) > 0.05),
        st.sampled_from([0, 1]),
        st.floats(0.2, 25.0),
        st.floats(-3, 3),
    )
    def test_orthant_formula(self, x, y, nu2, x_new):
        d = Dataset(np.array([[x]]), [y], nu2)
        got = exact_predictive_quadrature(d, [x_new])
        assert got == pytest.approx(orthant_predictive(x, y, nu2, x_new), abs=1e-8)

    def test_zero_covariate_row(self):
        d = Dataset(np.array([[0.0, 0.0], [1.0, 0.5]]), [1, 0], 2.0)
        assert exact_predictive_quadrature(d, [0.0, 0.0], QuadratureSpec(nodes_per_dim=401)) == pytest.approx(
            0.5, abs=1e-12
        )

    def test_label_flip(self):
        d = make_dataset(0, 6, 2, nu2=1.0)
        flipped = Dataset(d.X, 1 - d.y, 1.0)
        spec = QuadratureSpec(nodes_per_dim=401)
        x = np.array([0.4, -1.1])
        a = exact_predictive_quadrature(d, x, spec)
        b = exact_predictive_quadrature(flipped, x, spec)
        assert a + b == pytest.approx(1.0, abs=1e-12)

    def test_refinement_converges(self):
        d = make_dataset(1, 10, 2, nu2=1.0)
        spec = QuadratureSpec(nodes_per_dim=401)
        x = np.array([[0.3, 0.9], [-1.0, 2.0]])
        a = exact_predictive_quadrature(d, x, spec)
        b = exact_predictive_quadrature(d, x, spec.refined())
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-8)

    def test_batch_matches_single(self):
        X_new = np.array([[1.0], [-2.0], [0.5]])
        batch = exact_predictive_quadrature(SCALAR, X_new)
        single = [exact_predictive_quadrature(SCALAR, row) for row in X_new]
        np.testing.assert_array_equal(batch, single)

    def test_rejects_p3(self):
        d = make_dataset(2, 5, 3)
        with pytest.raises(NotImplementedError):
            exact_predictive_quadrature(d, np.zeros(3))

    @pytest.mark.parametrize("kwargs", [dict(nodes_per_dim=100), dict(nodes_per_dim=51), dict(half_width=3)])
    def test_spec_validation(self, kwargs):
        with pytest.raises(ValueError):
            QuadratureSpec(**kwargs)

    def test_refined_halves_spacing(self):
        assert QuadratureSpec(nodes_per_dim=101).refined().nodes_per_dim == 201


class TestTruncatedNormal:
    def test_support(self, rng):
        z = truncated_normal_draw(np.linspace(-30, 30, 2001), "right", rng)
        assert np.all(z > 0)
        z = truncated_normal_draw(np.linspace(-30, 30, 2001), "left", rng)
        assert np.all(z < 0)

    def test_sign_array(self, rng):
        signs = np.where(np.arange(1000) % 2 == 0, 1.0, -1.0)
        z = truncated_normal_draw(np.zeros(1000), signs, rng)
        assert np.all(np.sign(z) == signs)

    def test_half_normal_mean(self, rng):
        z = truncated_normal_draw(np.zeros(1_000_000), "right", rng)
        expected = math.sqrt(2 / math.pi)
        se = math.sqrt((1 - 2 / math.pi) / z.size)
        assert abs(z.mean() - expected) <= 4 * se

    @pytest.mark.parametrize("mu", [-8.0, -3.0, 2.0])
    def test_moments(self, rng, mu):
        # E[z | z > 0] = mu + zeta1(mu), Var = 1 + zeta2(mu)
        z = truncated_normal_draw(np.full(1_000_000, mu), "right", rng)
        mean = mu + zeta1(mu)
        var = 1 + zeta2(mu)
        assert abs(z.mean() - mean) <= 4 * math.sqrt(var / z.size)
        assert z.var() == pytest.approx(var, rel=0.02)

    def test_left_mirror(self, rng):
        z = truncated_normal_draw(np.full(200_000, 8.0), "left", rng)
        assert abs(z.mean() - 8 + zeta1(-8.0)) <= 4 * math.sqrt((1 + zeta2(-8.0)) / z.size)

    def test_scalar(self, rng):
        assert isinstance(truncated_normal_draw(0.0, "right", rng), float)

    def test_bad_side(self, rng):
        with pytest.raises(ValueError):
            truncated_normal_draw(0.0, "up", rng)
        with pytest.raises(ValueError):
            truncated_normal_draw(np.nan, "right", rng)


class TestBatchMeans:
    def test_iid(self, rng):
        x = rng.standard_normal((100_000, 2))
        se = batch_means_se(x)
        np.testing.assert_allclose(se, 1 / math.sqrt(1e5), rtol=0.3)

    def test_constant(self):
        assert batch_means_se(np.ones((500, 1)))[0] == 0.0

    def test_too_short(self):
        assert np.isnan(batch_means_se(np.ones((1, 1)))[0])


class TestGibbs:
    def test_frozen_beta(self, monkeypatch):
        monkeypatch.setattr(oracles._BetaSampler, "draw", lambda self, z, rng: np.zeros(self.X.shape[1]))
        d = make_dataset(3, 10, 3)
        means, se = gibbs_predictive(d, np.ones((2, 3)), GibbsSpec(burn_in=10, draws=200))
        np.testing.assert_array_equal(means, 0.5)
        np.testing.assert_array_equal(se, 0.0)

    def test_scalar_against_exact(self):
        means, se = gibbs_predictive(SCALAR, [[1.0], [-2.0]], GibbsSpec(burn_in=1000, draws=50_000, seed=3))
        exact = np.array([2 / 3, orthant_predictive(1.0, 1, 1.0, -2.0)])
        assert np.all(np.abs(means - exact) <= 3 * se)

    def test_wide_design_against_quadrature(self):
        # p > n exercises the dual beta draw
        d = Dataset(np.array([[1.0, 0.5]]), [0], 1.0)
        x = np.array([0.7, -0.4])
        exact = exact_predictive_quadrature(d, x, QuadratureSpec(nodes_per_dim=801))
        means, se = gibbs_predictive(d, x, GibbsSpec(burn_in=500, draws=40_000, seed=4))
        assert abs(means[0] - exact) <= 3 * se[0]

    def test_deterministic(self):
        d = make_dataset(5, 15, 3)
        spec = GibbsSpec(burn_in=50, draws=300, seed=9)
        a = gibbs_predictive(d, np.eye(3), spec)
        b = gibbs_predictive(d, np.eye(3), spec)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            GibbsSpec(draws=0)
        with pytest.raises(ValueError):
            GibbsSpec(burn_in=-1)

    def test_dimension_check(self):
        with pytest.raises(ValueError):
            gibbs_predictive(SCALAR, np.ones((1, 2)))


class TestHmc:
    def test_scalar_against_exact(self):
        means, se = hmc_predictive(SCALAR, [[1.0], [-2.0]], HmcSpec(burn_in=200, draws=20_000, seed=1))
        exact = np.array([2 / 3, orthant_predictive(1.0, 1, 1.0, -2.0)])
        assert np.all(np.abs(means - exact) <= 3 * se)

    def test_against_quadrature(self):
        d = make_dataset(6, 8, 2, nu2=4.0)
        x = np.array([[0.3, -0.8], [1.5, 1.0]])
        exact = exact_predictive_quadrature(d, x, QuadratureSpec(nodes_per_dim=801))
        means, se = hmc_predictive(d, x, HmcSpec(burn_in=200, draws=10_000, seed=2))
        assert np.all(np.abs(means - exact) <= 3 * se)

    def test_truncation_respected(self, rng):
        d = make_dataset(7, 12, 30)
        S = np.eye(d.n) + d.prior_variance * d.X @ d.X.T
        chain, bounces = hmc_latent_chain(S, d.signs, 300, rng)
        assert np.all(chain * d.signs > 0)
        assert bounces > 0

    def test_latent_marginal(self, rng):
        # one coordinate, S = 1: the chain targets a half-normal
        chain, _ = hmc_latent_chain(np.eye(1), np.array([1.0]), 20_000, rng)
        se = batch_means_se(chain)[0]
        assert abs(chain.mean() - math.sqrt(2 / math.pi)) <= 4 * se

    def test_bad_start(self, rng):
        with pytest.raises(ValueError):
            hmc_latent_chain(np.eye(2), np.array([1.0, -1.0]), 5, rng, z0=[1.0, 1.0])

    def test_deterministic(self):
        d = make_dataset(8, 20, 40)
        spec = HmcSpec(burn_in=10, draws=100, seed=5)
        a = hmc_predictive(d, np.ones((1, 40)), spec)
        b = hmc_predictive(d, np.ones((1, 40)), spec)
        assert np.array_equal(a[0], b[0])


class TestMonteCarlo:
    def test_zero_mean(self):
        post = GaussianPosterior(np.zeros(3), DenseCovariance(np.eye(3)), 1.0)
        mean, se = mc_gaussian_expectation(post, np.array([1.0, 2.0, -1.0]), samples=100_000)
        assert abs(mean - 0.5) <= 4 * se

    def test_zero_covariance(self):
        post = GaussianPosterior(np.array([0.4, 0.1]), DenseCovariance(np.zeros((2, 2))), 1.0)
        mean, se = mc_gaussian_expectation(post, np.array([1.0, 1.0]), samples=1000)
        assert mean == pytest.approx(ndtr(0.5), rel=1e-14)
        assert se == pytest.approx(0.0, abs=1e-15)

    def test_factored_posterior(self):
        d = make_dataset(9, 10, 20)
        post, _ = fit(d, engine="lowrank")
        x = np.random.default_rng(0).standard_normal(20) * 0.2
        mean, se = mc_gaussian_expectation(post, x, samples=200_000, seed=1)
        u = x @ post.dense_covariance() @ x
        assert abs(mean - ndtr(x @ post.xi / math.sqrt(1 + u))) <= 4 * se

    def test_errors(self):
        post = GaussianPosterior(np.zeros(1), DenseCovariance(np.array([[-1.0]])), 1.0)
        with pytest.raises(ValueError):
            mc_gaussian_expectation(post, np.ones(1), samples=10)
        with pytest.raises(np.linalg.LinAlgError):
            mc_gaussian_expectation(post, np.ones(1), samples=1000)
