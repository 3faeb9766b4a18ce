import math

import numpy as np
from django.test import SimpleTestCase

from background.exceptions import EmptyInputError, InsufficientDataError, ParameterError
from background.schemas import Label, ScoreSet
from background.services import skl_service


def order_statistic_quantile(values, p):
    """Midpoint-offset interpolation between sorted values, written out longhand."""
    ordered = sorted(values)
    n = len(ordered)
    position = n * p - 0.5
    if position <= 0:
        return ordered[0]
    if position >= n - 1:
        return ordered[-1]
    below = int(math.floor(position))
    weight = position - below
    return ordered[below] + weight * (ordered[below + 1] - ordered[below])


class SymmetricKlTests(SimpleTestCase):

    def test_two_bin_hand_value(self):
        p, q = [0.5, 0.5], [0.25, 0.75]
        oracle = sum(a * math.log(a / b) for a, b in zip(p, q)) + sum(b * math.log(b / a) for a, b in zip(p, q))
        self.assertAlmostEqual(skl_service.symmetric_kl(p, q), oracle, places=12)
        self.assertAlmostEqual(oracle, 0.27465, places=5)

    def test_identical_samples_score_zero(self):
        scores = np.random.default_rng(1).gamma(2.0, size=300)
        estimate = skl_service.skl_divergence(scores, scores, bins=20, smoothing=0.5)
        self.assertLessEqual(estimate.value, 1e-12)
        self.assertFalse(estimate.degenerate)

    def test_symmetric_and_non_negative(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            neg = rng.normal(0, 1, size=rng.integers(5, 80))
            pos = rng.normal(rng.uniform(-1, 2), 1.5, size=rng.integers(5, 80))
            forward = skl_service.skl_divergence(neg, pos, bins=16, smoothing=0.5)
            backward = skl_service.skl_divergence(pos, neg, bins=16, smoothing=0.5)
            self.assertAlmostEqual(forward.value, backward.value, places=12)
            self.assertGreaterEqual(forward.value, 0.0)

    def test_accepts_score_sets_and_shares_edges(self):
        neg = ScoreSet(scores=[1.0, 2.0, 3.0], label=Label.BACKGROUND, method='gaussian', k=1)
        pos = ScoreSet(scores=[3.0, 4.0, 9.0], label=Label.INJECTED, method='gaussian', k=1, distance=1.0)
        estimate = skl_service.skl_divergence(neg, pos, bins=4, smoothing=1.0)
        np.testing.assert_allclose(estimate.bin_edges, [1.0, 3.0, 5.0, 7.0, 9.0])
        self.assertGreater(estimate.value, 0.0)

    def test_degenerate_range(self):
        estimate = skl_service.skl_divergence([2.0, 2.0], [2.0], bins=8, smoothing=0.5)
        self.assertEqual(estimate.value, 0.0)
        self.assertTrue(estimate.degenerate)

    def test_bad_arguments(self):
        with self.assertRaises(EmptyInputError):
            skl_service.skl_divergence([], [1.0])
        with self.assertRaises(ParameterError):
            skl_service.skl_divergence([1.0], [2.0], bins=1)
        with self.assertRaises(ParameterError):
            skl_service.skl_divergence([1.0], [2.0], smoothing=0.0)

    def test_small_smoothing_approaches_unsmoothed_value(self):
        rng = np.random.default_rng(12)
        neg_counts = rng.integers(5, 30, size=10)
        pos_counts = rng.integers(5, 30, size=10)
        # value i lands in bin i of ten equal-width bins spanning [0, 9]
        neg = np.repeat(np.arange(10.0), neg_counts)
        pos = np.repeat(np.arange(10.0), pos_counts)
        exact = skl_service.symmetric_kl(neg_counts / neg_counts.sum(), pos_counts / pos_counts.sum())

        errors = [
            abs(skl_service.skl_divergence(neg, pos, bins=10, smoothing=s).value - exact)
            for s in (1e-1, 1e-3, 1e-6)
        ]
        self.assertGreater(errors[0], errors[1])
        self.assertGreater(errors[1], errors[2])
        self.assertLess(errors[2], 1e-4)

    def test_separated_histograms_reach_ceiling(self):
        neg = np.zeros(100)
        pos = np.full(100, 10.0)
        estimate = skl_service.skl_divergence(neg, pos, bins=10, smoothing=0.5)
        self.assertAlmostEqual(estimate.value, skl_service.skl_ceiling(100, 100, 10, 0.5), places=12)


class QuantileIntervalTests(SimpleTestCase):

    def test_constant_values(self):
        self.assertEqual(skl_service.quantile_interval([5, 5, 5], 0.2, 0.8), (5.0, 5.0, 5.0))
        self.assertEqual(skl_service.quantile_interval([7.5]), (7.5, 7.5, 7.5))

    def test_matches_order_statistic_oracle(self):
        values = list(range(1, 31))
        expected = tuple(order_statistic_quantile(values, p) for p in (0.2, 0.5, 0.8))
        got = skl_service.quantile_interval(values, 0.2, 0.8)
        for g, e, hand in zip(got, expected, (6.5, 15.5, 24.5)):
            self.assertAlmostEqual(g, e, places=12)
            self.assertAlmostEqual(e, hand, places=12)

    def test_random_values_against_oracle(self):
        rng = np.random.default_rng(6)
        for n in (2, 3, 7, 30):
            values = list(rng.normal(size=n))
            got = skl_service.quantile_interval(values, 0.2, 0.8)
            for g, p in zip(got, (0.2, 0.5, 0.8)):
                self.assertAlmostEqual(g, order_statistic_quantile(values, p), places=12)

    def test_errors(self):
        with self.assertRaises(EmptyInputError):
            skl_service.quantile_interval([])
        with self.assertRaises(ParameterError):
            skl_service.quantile_interval([1, 2], 0.8, 0.2)

    def test_interval_must_contain_the_median(self):
        with self.assertRaises(ParameterError):
            skl_service.quantile_interval([1, 2, 3, 4], 0.6, 0.9)
        with self.assertRaises(ParameterError):
            skl_service.quantile_interval([1, 2, 3, 4], 0.1, 0.4)
        self.assertEqual(skl_service.quantile_interval([1, 2, 3, 4], 0.5, 0.9)[1], 2.5)


class BinModelFitTests(SimpleTestCase):

    def test_constant_bin_is_degenerate(self):
        fit = skl_service.bin_model_fit([4] * 10)
        self.assertEqual(fit.poisson_rate, 4.0)
        self.assertEqual(fit.gaussian_sd, skl_service.SD_FLOOR)
        self.assertTrue(fit.degenerate)
        self.assertGreater(fit.loglik_gaussian, fit.loglik_poisson)

    def test_low_rate_prefers_poisson(self):
        samples = np.random.default_rng(0).poisson(0.3, size=100_000)
        fit = skl_service.bin_model_fit(samples)
        self.assertAlmostEqual(fit.poisson_rate, samples.mean())
        self.assertGreater(fit.loglik_poisson, fit.loglik_gaussian)

    def test_high_rate_models_agree(self):
        samples = np.random.default_rng(0).poisson(400.0, size=100_000)
        fit = skl_service.bin_model_fit(samples)
        self.assertLessEqual(
            abs(fit.loglik_poisson - fit.loglik_gaussian), 0.01 * abs(fit.loglik_poisson)
        )

    def test_needs_two_samples(self):
        with self.assertRaises(InsufficientDataError):
            skl_service.bin_model_fit([3])

    def test_histogram(self):
        self.assertEqual(skl_service.count_histogram([0, 2, 0, 1, 0]), {0: 3, 1: 1, 2: 1})
