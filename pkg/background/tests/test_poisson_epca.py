import math

import numpy as np
from django.test import SimpleTestCase
from scipy import stats
from scipy.special import xlogy

from background.exceptions import (
    ConvergenceError,
    DimensionMismatchError,
    InsufficientDataError,
    ParameterError,
)
from background.schemas import FitOptions, LatentCode, PoissonEpcaModel, ScoreKind, SpectraSet
from background.services import poisson_epca_service as epca
from background.services import synthetic_service


def fixed_model(offset, basis):
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    return PoissonEpcaModel(k=basis.shape[0], seed=0, offset=offset, basis=basis)


class PoissonLossTests(SimpleTestCase):

    def test_hand_values(self):
        self.assertEqual(epca.poisson_loss([1], [0.0]), 1.0)
        self.assertLessEqual(abs(epca.poisson_loss([0, 0], [-30.0, -30.0])), 1e-12)

    def test_grid_minimizer_is_log_x(self):
        grid = np.arange(-5.0, 5.0 + 1e-9, 1e-4)
        losses = np.exp(grid) - 3.0 * grid
        self.assertAlmostEqual(grid[np.argmin(losses)], math.log(3.0), delta=1e-3)
        coarse = grid[::100]
        best = coarse[np.argmin([epca.poisson_loss([3], [t]) for t in coarse])]
        self.assertAlmostEqual(best, math.log(3.0), delta=1e-2)

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(0)
        h = 1e-6
        for _ in range(1000):
            x = rng.poisson(3.0, size=4).astype(float)
            theta = rng.uniform(-3.0, 3.0, size=4)
            grad = epca.poisson_loss_gradient(x, theta)
            fd = np.empty(4)
            for j in range(4):
                step = np.zeros(4)
                step[j] = h
                fd[j] = (epca.poisson_loss(x, theta + step) - epca.poisson_loss(x, theta - step)) / (2 * h)
            self.assertTrue(np.all(np.abs(fd - grad) <= 1e-5 * np.maximum(1.0, np.abs(grad))))

    def test_non_finite_theta(self):
        with self.assertRaises(ParameterError):
            epca.poisson_loss([1, 2], [0.0, np.inf])
        with self.assertRaises(DimensionMismatchError):
            epca.poisson_loss([1, 2], [0.0])


class FitPoissonTests(SimpleTestCase):

    def test_constant_data_reaches_analytic_optimum(self):
        spectra = SpectraSet(counts=np.full((12, 4), 5))
        model = epca.fit_poisson(spectra, 1, FitOptions(seed=4))

        expected = 12 * 4 * (5 - 5 * math.log(5))
        self.assertAlmostEqual(model.final_loss, expected, delta=1e-8 * abs(expected))
        np.testing.assert_allclose(epca.reconstruct(model, spectra.row(0)), 5.0, atol=1e-6)

    def test_same_seed_is_bit_identical(self):
        spectra = synthetic_service.generate_background(30, 16, rank=2, seed=1)
        opts = FitOptions(seed=3, max_iters=40)
        first = epca.fit_poisson(spectra, 2, opts)
        second = epca.fit_poisson(spectra, 2, opts)
        self.assertEqual(first.model_dump_json(), second.model_dump_json())

    def test_fit_trace_never_increases(self):
        rng = np.random.default_rng(8)
        for trial in range(100):
            counts = rng.poisson(rng.uniform(0.2, 6.0, size=6), size=(15, 6))
            model = epca.fit_poisson(SpectraSet(counts=counts), 1 + trial % 3,
                                     FitOptions(seed=trial))
            losses = [loss for _, loss in model.fit_trace]
            for before, after in zip(losses, losses[1:]):
                self.assertLessEqual(after, before + 1e-9 * max(1.0, abs(before)))

    def test_default_fit_on_sparse_spectra_stays_bounded(self):
        spectra = synthetic_service.generate_background(300, 128, seed=0)
        model = epca.fit_poisson(spectra, 3)

        self.assertTrue(model.converged)
        self.assertLess(model.fit_trace[-1][0], FitOptions().max_iters)
        floor = math.log(FitOptions().offset_floor)
        self.assertGreaterEqual(model.offset.min(), floor - 1e-6)
        self.assertLess(np.abs(model.offset).max(), 30.0)
        np.testing.assert_allclose(model.basis @ model.basis.T, np.eye(3), atol=1e-8)

        codes = epca.encode_poisson_batch(model, spectra)
        self.assertTrue(np.all(np.isfinite(codes)))
        self.assertLessEqual((model.offset + codes @ model.basis).max(), FitOptions().theta_cap)
        self.assertTrue(np.all(np.isfinite(epca.score_poisson_batch(model, spectra))))

    def test_stops_at_max_iters_with_a_warning(self):
        spectra = synthetic_service.generate_background(30, 16, seed=4)
        with self.assertLogs('background.services.poisson_epca_service', level='WARNING') as logs:
            model = epca.fit_poisson(spectra, 2, FitOptions(max_iters=1))
        self.assertFalse(model.converged)
        self.assertIn('without converging', logs.output[0])

    def test_gauge_fix_keeps_natural_parameters(self):
        rng = np.random.default_rng(9)
        A = rng.normal(1.0, 2.0, size=(25, 3))
        V = rng.normal(0.0, 0.7, size=(3, 10))
        offset = rng.normal(0.0, 1.0, size=10)

        A2, V2, offset2 = epca._fix_gauge(A, V, offset, True)
        np.testing.assert_allclose(offset2 + A2 @ V2, offset + A @ V, atol=1e-10)
        np.testing.assert_allclose(A2.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(V2 @ V2.T, np.eye(3), atol=1e-10)

        A3, V3, offset3 = epca._fix_gauge(A, V, np.zeros(10), False)
        np.testing.assert_array_equal(offset3, np.zeros(10))
        np.testing.assert_allclose(A3 @ V3, A @ V, atol=1e-10)

    def test_fit_deviance_close_to_generating_parameters(self):
        spectra, offset, A, V = synthetic_service.generate_low_rank_counts(500, 128, 2, seed=3)
        X = spectra.counts.astype(float)
        generating = epca.poisson_deviance(X, np.exp(offset + A @ V)) / X.size

        model = epca.fit_poisson(spectra, 2, FitOptions(seed=0))
        fitted = epca.score_poisson_batch(model, spectra).sum() / X.size
        self.assertLessEqual(fitted / generating, 1.5)

    def test_recovers_rounded_low_rank_data(self):
        rng = np.random.default_rng(21)
        d = 10
        offset = np.log(30.0) + 0.3 * rng.standard_normal(d)
        v = rng.normal(0.0, 0.4, size=d)
        a = rng.normal(0.0, 1.0, size=40)
        counts = np.rint(np.exp(offset + np.outer(a, v)))
        spectra = SpectraSet(counts=counts)

        model = epca.fit_poisson(spectra, 1, FitOptions(seed=0))
        deviance = epca.score_poisson_batch(model, spectra)
        self.assertLessEqual(deviance.sum() / counts.size, 0.05)

    def test_more_restarts_never_worse(self):
        spectra = synthetic_service.generate_background(20, 12, rank=2, seed=6)
        single = epca.fit_poisson(spectra, 2, FitOptions(seed=5, max_iters=25))
        several = epca.fit_poisson(spectra, 2, FitOptions(seed=5, max_iters=25, restarts=3))
        self.assertLessEqual(several.final_loss, single.final_loss)

    def test_without_offset(self):
        spectra = synthetic_service.generate_background(20, 8, rank=2, seed=2)
        model = epca.fit_poisson(spectra, 2, FitOptions(use_offset=False, max_iters=20))
        self.assertFalse(model.use_offset)
        np.testing.assert_array_equal(model.offset, np.zeros(8))

    def test_invalid_arguments(self):
        spectra = SpectraSet(counts=np.ones((3, 4), dtype=int))
        with self.assertRaises(ParameterError):
            epca.fit_poisson(spectra, 5)
        with self.assertRaises(InsufficientDataError):
            epca.fit_poisson(SpectraSet(counts=[[1, 2]]), 1)
        with self.assertRaises(ParameterError):
            epca.fit_options(max_iters=0)


class EncodePoissonTests(SimpleTestCase):

    def test_no_worse_than_grid_search(self):
        rng = np.random.default_rng(13)
        grid = np.linspace(-8.0, 8.0, 16001)
        for _ in range(20):
            d = int(rng.integers(2, 9))
            offset = np.log(2.0) + 0.3 * rng.standard_normal(d)
            basis = rng.normal(0.0, 0.5, size=(1, d))
            x = rng.poisson(np.exp(offset + rng.normal() * basis[0])).astype(float)
            model = fixed_model(offset, basis)

            lam = np.exp(offset + np.outer(grid, basis[0]))
            oracle = np.min(2 * np.sum(xlogy(x, x) - xlogy(x, lam) - (x - lam), axis=1))
            self.assertLessEqual(epca.score_poisson(model, x), oracle + 1e-6)

    def test_recovers_code_of_noiseless_spectrum(self):
        offset = np.log(np.linspace(200.0, 400.0, 6))
        basis = np.array([[0.3, -0.2, 0.1, 0.25, -0.3, 0.15]])
        x = np.rint(np.exp(offset + 0.7 * basis[0]))
        code = epca.encode_poisson(fixed_model(offset, basis), x)
        self.assertAlmostEqual(float(code.a[0]), 0.7, delta=0.02)

    def test_zero_basis_gives_zero_code(self):
        model = fixed_model(np.log([1.0, 2.0, 4.0]), np.zeros((2, 3)))
        np.testing.assert_array_equal(epca.encode_poisson(model, [3, 0, 9]).a, np.zeros(2))

    def test_dimension_mismatch(self):
        model = fixed_model(np.zeros(3), np.ones((1, 3)))
        with self.assertRaises(DimensionMismatchError):
            epca.encode_poisson(model, [1, 2])

    def test_non_convergence_carries_best_iterate(self):
        model = fixed_model(np.zeros(2), [[1.0, -1.0]])
        opts = epca.encode_options(max_iters=1)
        with self.assertRaises(ConvergenceError) as ctx:
            epca.encode_poisson(model, [200, 1], opts)
        self.assertIsInstance(ctx.exception.best_iterate, LatentCode)

    def test_batch_matches_single(self):
        spectra = synthetic_service.generate_background(10, 8, rank=2, seed=4)
        model = epca.fit_poisson(spectra, 2, FitOptions(max_iters=20))
        self.assertEqual(epca.encode_poisson_batch(model, spectra).shape, (10, 2))
        batch = epca.score_poisson_batch(model, spectra)
        for i in range(spectra.n_rows):
            self.assertAlmostEqual(batch[i], epca.score_poisson(model, spectra.row(i)), delta=1e-6)


class ScorePoissonTests(SimpleTestCase):

    def test_achievable_spectrum_scores_zero(self):
        model = fixed_model(np.log([2.0, 3.0, 5.0]), np.zeros((1, 3)))
        self.assertLessEqual(epca.score_poisson(model, [2, 3, 5]), 1e-8)

    def test_one_bin_deviance(self):
        model = fixed_model([0.0], [[0.0]])
        expected = 2 * (2 * math.log(2) - 1)
        self.assertAlmostEqual(epca.score_poisson(model, [2]), expected, places=12)
        self.assertAlmostEqual(epca.poisson_deviance([2], [1.0]), 0.7725887222, places=9)

    def test_one_bin_negative_log_likelihood(self):
        model = fixed_model([0.0], [[0.0]])
        nll = epca.score_poisson(model, [2], kind=ScoreKind.NLL)
        self.assertAlmostEqual(nll, -stats.poisson.logpmf(2, 1.0), places=12)

    def test_zero_spectrum_scores_twice_total_intensity(self):
        model = fixed_model(np.log([1.0, 0.5, 3.0, 2.0]), [[0.2, -0.4, 0.1, 0.3]])
        zero = np.zeros(4)
        lam = epca.reconstruct(model, zero)
        self.assertAlmostEqual(epca.score_poisson(model, zero), 2 * lam.sum(), places=9)

    def test_batch_scores_are_non_negative(self):
        spectra = synthetic_service.generate_background(15, 10, rank=2, seed=9)
        model = epca.fit_poisson(spectra, 1, FitOptions(max_iters=20))
        scores = epca.score_poisson_batch(model, spectra)
        self.assertEqual(scores.shape, (15,))
        self.assertTrue(np.all(scores >= 0))
