import math
import os
import unittest

import numpy as np
from django.test import SimpleTestCase
from scipy import integrate, stats

from cometflows.exceptions import (
    DegenerateDataError,
    DomainError,
    InsufficientDataError,
    InsufficientTailDataError,
    ParameterError,
)
from datasets.services.synthetic import gen_synthetic
from evaluation.services.metrics import ks_uniformity
from marginals.services.marginal import (
    EPS_U,
    LOG_DENSITY_FLOOR,
    empirical_quantile,
    fit_marginal,
    marginal_inverse,
    marginal_log_density,
    marginal_transform,
)
from marginals.services.univariate import (
    GPDist,
    KDE_PPF_TOL,
    gp_cdf,
    gp_fit_mle,
    gp_logpdf,
    gp_negloglik,
    gp_pdf,
    gp_ppf,
    kde_cdf,
    kde_fit,
    kde_pdf,
    kde_ppf,
)

SLOW_TESTS = os.getenv('COMET_SLOW_TESTS') == '1'


# ============================================
# GENERALIZED PARETO
# ============================================

class GPDistributionTests(SimpleTestCase):

    def test_logpdf_matches_scipy(self):
        x = np.linspace(0.0, 5.0, 41)
        for xi in (0.5, 1.0, -0.3):
            dist = GPDist(0.0, 1.3, xi)
            expected = stats.genpareto.logpdf(x, c=xi, loc=0.0, scale=1.3)
            inside = np.isfinite(expected)
            np.testing.assert_allclose(gp_logpdf(dist, x)[inside], expected[inside], rtol=1e-12)

    def test_exponential_branch(self):
        dist = GPDist(0.0, 2.0, 0.0)
        x = np.array([0.0, 0.5, 3.0])
        np.testing.assert_allclose(gp_cdf(dist, x), stats.expon.cdf(x, scale=2.0), rtol=1e-12)
        np.testing.assert_allclose(gp_pdf(dist, x), stats.expon.pdf(x, scale=2.0), rtol=1e-12)

    def test_off_support(self):
        dist = GPDist(0.0, 1.0, -0.5)          # endpoint at 2
        self.assertEqual(gp_logpdf(dist, -0.1), -math.inf)
        self.assertEqual(gp_logpdf(dist, 2.5), -math.inf)
        self.assertEqual(gp_cdf(dist, -1.0), 0.0)
        self.assertEqual(gp_cdf(dist, 3.0), 1.0)
        self.assertEqual(dist.upper_endpoint, 2.0)

    def test_ppf_inverts_cdf(self):
        q = np.array([1e-6, 0.1, 0.5, 0.9, 0.999999])
        for xi in (1.0, 0.2, 0.0, -0.3):
            dist = GPDist(0.0, 0.7, xi)
            np.testing.assert_allclose(gp_cdf(dist, gp_ppf(dist, q)), q, rtol=1e-10)

    def test_ppf_domain(self):
        dist = GPDist(0.0, 1.0, 1.0)
        for q in (0.0, 1.0, -0.2, 1.5):
            with self.assertRaises(DomainError):
                gp_ppf(dist, q)

    def test_density_integrates_to_one(self):
        for xi in (0.3, -0.25):
            dist = GPDist(0.0, 1.0, xi)
            upper = dist.upper_endpoint
            total, _ = integrate.quad(lambda t: gp_pdf(dist, t), 0.0, upper)
            self.assertAlmostEqual(total, 1.0, places=6)

    def test_invalid_parameters(self):
        with self.assertRaises(ParameterError):
            GPDist(0.0, 0.0, 0.5)
        with self.assertRaises(ParameterError):
            GPDist(0.0, 1.0, float('nan'))

    def test_negloglik_infeasible(self):
        self.assertEqual(gp_negloglik([0.5, 3.0], 0.0, -0.5), math.inf)


class GPFitTests(SimpleTestCase):

    def test_recovers_heavy_tail(self):
        y = stats.genpareto.rvs(c=1.0, size=10_000, random_state=np.random.default_rng(3))
        dist = gp_fit_mle(y)
        self.assertAlmostEqual(dist.xi, 1.0, delta=0.15)
        self.assertLess(abs(dist.sigma - 1.0), 0.15)
        self.assertEqual(dist.mu, 0.0)

    def test_recovers_bounded_tail(self):
        y = stats.genpareto.rvs(c=-0.2, scale=2.0, size=5_000, random_state=np.random.default_rng(4))
        dist = gp_fit_mle(y)
        self.assertAlmostEqual(dist.xi, -0.2, delta=0.1)
        self.assertGreaterEqual(dist.upper_endpoint, y.max())

    def test_rejects_bad_input(self):
        with self.assertRaises(InsufficientDataError):
            gp_fit_mle(np.arange(10.0))
        with self.assertRaises(DomainError):
            gp_fit_mle(np.linspace(-1.0, 1.0, 50))
        with self.assertRaises(DegenerateDataError):
            gp_fit_mle(np.full(50, 0.3))

    @unittest.skipUnless(SLOW_TESTS, "set COMET_SLOW_TESTS=1 for the 10-seed recovery sweep")
    def test_recovery_over_seeds(self):
        hits = 0
        for seed in range(10):
            y = stats.genpareto.rvs(c=1.0, size=10_000, random_state=np.random.default_rng(seed))
            dist = gp_fit_mle(y)
            hits += abs(dist.xi - 1.0) <= 0.15 and abs(dist.sigma - 1.0) <= 0.15
        self.assertGreaterEqual(hits, 9)


# ============================================
# KERNEL DENSITY ESTIMATE
# ============================================

class KdeTests(SimpleTestCase):

    def setUp(self):
        self.points = np.random.default_rng(0).normal(size=500)
        self.kde = kde_fit(self.points)

    def test_silverman_bandwidth(self):
        std = self.points.std()
        q25, q75 = np.quantile(self.points, [0.25, 0.75])
        expected = 0.9 * min(std, (q75 - q25) / 1.34) * 500 ** -0.2
        self.assertAlmostEqual(self.kde.bandwidth, expected, places=12)

    def test_pdf_integrates_to_one(self):
        lo, hi = self.kde.bracket
        total, _ = integrate.quad(lambda t: kde_pdf(self.kde, t), lo, hi, limit=200)
        self.assertAlmostEqual(total, 1.0, places=6)

    def test_cdf_monotone(self):
        x = np.linspace(-5.0, 5.0, 400)
        self.assertTrue(np.all(np.diff(kde_cdf(self.kde, x)) >= 0))

    def test_ppf_inverts_cdf(self):
        q = np.array([1e-4, 0.01, 0.3, 0.5, 0.77, 0.999])
        x = kde_ppf(self.kde, q)
        self.assertTrue(np.all(np.abs(kde_cdf(self.kde, x) - q) <= KDE_PPF_TOL))
        self.assertIsInstance(kde_ppf(self.kde, 0.5), float)

    def test_ppf_domain(self):
        with self.assertRaises(DomainError):
            kde_ppf(self.kde, 0.0)

    def test_needs_two_distinct_points(self):
        with self.assertRaises(InsufficientDataError):
            kde_fit([1.0])
        with self.assertRaises(DegenerateDataError):
            kde_fit([2.0, 2.0, 2.0])


# ============================================
# MARGINAL TRANSFORM
# ============================================

class MarginalTransformTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        rng = np.random.default_rng(11)
        cls.column = rng.standard_t(df=3, size=2000)
        cls.model = fit_marginal(cls.column, 0.05, 0.95, name='x1')

    def test_thresholds_are_empirical_quantiles(self):
        m = self.model
        self.assertEqual(m.alpha, empirical_quantile(self.column, 0.05))
        self.assertEqual(m.beta, empirical_quantile(self.column, 0.95))
        self.assertEqual(m.name, 'x1')

    def test_continuity_at_thresholds(self):
        m = self.model
        self.assertEqual(marginal_transform(m, m.alpha), m.a)
        self.assertEqual(marginal_transform(m, m.beta), m.b)
        eps = 1e-9 * max(1.0, abs(m.alpha))
        self.assertAlmostEqual(marginal_transform(m, m.alpha - eps), m.a, places=7)
        self.assertAlmostEqual(marginal_transform(m, m.beta + eps), m.b, places=7)

    def test_monotone_and_clamped(self):
        x = np.concatenate([[-1e300, -1e6], np.linspace(-20, 20, 2001), [1e6, 1e300]])
        u = marginal_transform(self.model, x)
        self.assertTrue(np.all(np.diff(u) >= 0))
        self.assertTrue(np.all(u >= EPS_U))
        self.assertTrue(np.all(u <= 1.0 - EPS_U))

    def test_inverse_round_trip(self):
        x = self.column[:500]
        back = marginal_inverse(self.model, marginal_transform(self.model, x))
        np.testing.assert_allclose(back, x, atol=1e-6, rtol=1e-9)

    def test_inverse_domain(self):
        for u in (0.0, 1.0, 1.2):
            with self.assertRaises(DomainError):
                marginal_inverse(self.model, u)

    def test_log_density_is_derivative(self):
        m = self.model
        h = 1e-6
        for x in (m.alpha - 2.0, m.alpha - 0.3, 0.2, m.beta + 0.4, m.beta + 3.0):
            numeric = (marginal_transform(m, x + h) - marginal_transform(m, x - h)) / (2 * h)
            self.assertAlmostEqual(math.exp(marginal_log_density(m, x)), numeric, delta=1e-4 * numeric + 1e-9)

    def test_centre_mass(self):
        m = self.model
        total, _ = integrate.quad(lambda t: math.exp(marginal_log_density(m, t)), m.alpha, m.beta, limit=200)
        self.assertAlmostEqual(total, m.b - m.a, places=6)

    def test_density_integrates_to_one_over_real_line(self):
        m = self.model

        def density(t):
            return math.exp(marginal_log_density(m, t))

        left, _ = integrate.quad(density, -np.inf, m.alpha, limit=200)
        centre, _ = integrate.quad(density, m.alpha, m.beta, limit=200)
        right, _ = integrate.quad(density, m.beta, np.inf, limit=200)
        self.assertAlmostEqual(left, m.a, places=5)
        self.assertAlmostEqual(right, 1.0 - m.b, places=5)
        self.assertAlmostEqual(left + centre + right, 1.0, places=5)

    def test_pit_uniform_on_benchmark_columns(self):
        ds = gen_synthetic(10_000, seed=0)
        for name in ds.columns:
            column = ds.column(name)
            m = fit_marginal(column, 0.05, 0.95, name=name)
            self.assertLess(ks_uniformity(marginal_transform(m, column)), 0.02, name)

    def test_log_density_floor(self):
        m = fit_marginal(np.random.default_rng(2).uniform(size=2000), 0.05, 0.95)
        if math.isfinite(m.right_tail.upper_endpoint):
            far = m.beta + m.right_tail.upper_endpoint + 1.0
            self.assertEqual(marginal_log_density(m, far), LOG_DENSITY_FLOOR)
        self.assertTrue(np.all(np.isfinite(marginal_log_density(m, np.linspace(-5, 5, 101)))))

    def test_fit_errors(self):
        rng = np.random.default_rng(5)
        with self.assertRaises(InsufficientDataError):
            fit_marginal(rng.normal(size=50), 0.05, 0.95)
        with self.assertRaises(DegenerateDataError):
            fit_marginal(np.ones(500), 0.05, 0.95)
        with self.assertRaises(InsufficientTailDataError) as cm:
            fit_marginal(rng.normal(size=200), 0.05, 0.95, name='x3')
        self.assertEqual(cm.exception.tail, 'left')
        self.assertEqual(cm.exception.column, 'x3')
        with self.assertRaises(ParameterError):
            fit_marginal(rng.normal(size=500), 0.9, 0.1)
