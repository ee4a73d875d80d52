import json
import os
import tempfile
import unittest
from io import StringIO
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, override_settings
from scipy import special, stats

from cometflows.exceptions import (
    CorruptModelError,
    DegenerateDataError,
    DomainError,
    FlowNumericalError,
    InsufficientDataError,
    MarginalFitError,
    ModelVersionError,
    ParameterError,
    ShapeError,
    TrainingDivergedError,
)
from datasets.services.synthetic import DESK_SIZES, gen_synthetic, standard_splits
from datasets.services.tabular import Dataset, load_csv
from evaluation.services.metrics import ks_uniformity, tail_dep_coeff
from flows.cli import exit_code_for, read_config_file
from flows.models import EpochRecord, TrainingRun
from flows.services.comet import MODE_BASELINE, MODE_COMET, TrainConfig, fit
from flows.services.copula_flow import (
    coupling_forward,
    coupling_inverse,
    flow_forward,
    flow_grad,
    flow_inverse,
    flow_layer_logdets,
    flow_log_prob,
    flow_sample,
    init_flow,
    interleaved_order,
    logit_forward,
    sigmoid,
)
from flows.services.nn_core import (
    DenseLayer,
    MlpParams,
    adam_init,
    adam_step,
    grad_check,
    init_mlp,
    mlp_backward,
    mlp_forward,
)
from flows.services.serialization import load_model, save_model
from marginals.services.marginal import fit_marginal, marginal_transform

SLOW_TESTS = os.getenv('COMET_SLOW_TESTS') == '1'

SMALL = dict(n_layers=2, hidden=(8,), batch_size=128, max_epochs=3, patience=2, seed=0)


def perturb(flow, rng, scale=0.1):
    """Copy of flow with every parameter array jittered."""
    nets = [net.with_arrays([a + scale * rng.standard_normal(a.shape) for a in net.arrays()])
            for net in flow.parameters()]
    return flow.with_parameters(nets)


def gaussian_data(n, seed, rho=0.7):
    rng = np.random.default_rng(seed)
    cov = np.array([[1.0, rho], [rho, 1.0]])
    return Dataset(rng.multivariate_normal([0.0, 0.0], cov, size=n))


def numeric_jacobian(f, x, step=1e-6):
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((f(x + e) - f(x - e)) / (2 * step))
    return np.column_stack(cols)


# ============================================
# NN CORE
# ============================================

class MlpTests(SimpleTestCase):

    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.params = init_mlp([3, 5, 4, 2], self.rng)

    def test_vector_and_batch_agree(self):
        x = self.rng.normal(size=(6, 3))
        batch, _ = mlp_forward(self.params, x)
        for row, expected in zip(x, batch):
            single, _ = mlp_forward(self.params, row)
            np.testing.assert_allclose(single, expected, rtol=1e-14, atol=1e-15)
        self.assertEqual(batch.shape, (6, 2))

    def test_zero_last_starts_at_zero(self):
        params = init_mlp([3, 5, 2], self.rng, zero_last=True)
        out, _ = mlp_forward(params, self.rng.normal(size=(4, 3)))
        self.assertTrue(np.all(out == 0))

    def test_width_mismatch(self):
        with self.assertRaises(ShapeError):
            mlp_forward(self.params, np.ones(4))

    def test_stale_cache(self):
        _, cache = mlp_forward(self.params, np.ones(3))
        other = init_mlp([3, 5, 4, 2], self.rng)
        with self.assertRaises(ShapeError):
            mlp_backward(other, cache, np.ones(2))

    def test_backward_matches_finite_differences(self):
        x = self.rng.normal(size=(5, 3))
        w = self.rng.normal(size=(5, 2))
        arrays = self.params.arrays()
        sizes = [a.size for a in arrays]

        def unflatten(theta):
            out, pos = [], 0
            for a, size in zip(arrays, sizes):
                out.append(theta[pos:pos + size].reshape(a.shape))
                pos += size
            return self.params.with_arrays(out)

        def f(theta):
            params = unflatten(theta)
            out, cache = mlp_forward(params, x)
            grads, _ = mlp_backward(params, cache, w)
            return float(np.sum(w * out)), np.concatenate([g.ravel() for g in grads.arrays()])

        theta = np.concatenate([a.ravel() for a in arrays])
        self.assertLess(grad_check(f, theta), 1e-4)

    def test_input_gradient(self):
        w = self.rng.normal(size=2)

        def f(x):
            out, cache = mlp_forward(self.params, x)
            _, g_in = mlp_backward(self.params, cache, w)
            return float(w @ out), g_in

        self.assertLess(grad_check(f, self.rng.normal(size=3)), 1e-4)


class AdamTests(SimpleTestCase):

    def test_first_step_moves_by_learning_rate(self):
        params = init_mlp([2, 3], np.random.default_rng(1))
        grads = params.with_arrays([np.full(a.shape, 2.5) for a in params.arrays()])
        state = adam_init(params, lr=0.01)
        new, state = adam_step(params, grads, state)
        self.assertEqual(state.step, 1)
        for before, after in zip(params.arrays(), new.arrays()):
            np.testing.assert_allclose(before - after, 0.01, rtol=1e-6)

    def test_state_alignment(self):
        a = init_mlp([2, 3], np.random.default_rng(1))
        b = init_mlp([2, 4], np.random.default_rng(1))
        with self.assertRaises(ShapeError):
            adam_step(a, b, adam_init(a))

    def test_zero_gradient_is_a_fixed_point(self):
        params = init_mlp([2, 3, 1], np.random.default_rng(2))
        state = adam_init(params, lr=0.1)
        current = params
        for _ in range(5):
            current, state = adam_step(current, current.zeros_like(), state)
        for before, after in zip(params.arrays(), current.arrays()):
            np.testing.assert_array_equal(before, after)
        self.assertEqual(state.step, 5)

    def test_minimizes_square(self):
        params = MlpParams((DenseLayer(np.array([[1.0]]), np.array([-1.0]), 'identity'),))
        state = adam_init(params, lr=0.1)
        for _ in range(100):
            params, state = adam_step(params, params.with_arrays([2 * a for a in params.arrays()]), state)
        for a in params.arrays():
            self.assertLess(np.max(np.abs(a)), 0.1)

    def test_grad_check_quadratic(self):
        self.assertLess(grad_check(lambda x: (float(x @ x), 2 * x), np.array([0.3, -1.2, 2.0])), 1e-8)


# ============================================
# COPULA FLOW
# ============================================

class CopulaFlowTests(SimpleTestCase):

    def setUp(self):
        self.rng = np.random.default_rng(7)
        self.flow = perturb(init_flow(4, self.rng, n_layers=4, hidden=(8, 8)), self.rng)
        self.u = self.rng.uniform(0.05, 0.95, size=(20, 4))

    def test_fresh_flow_is_logit(self):
        flow = init_flow(3, self.rng, n_layers=2, hidden=(4,))
        u = self.rng.uniform(0.1, 0.9, size=(5, 3))
        z, logdet = flow_forward(flow, u, 0.2)
        np.testing.assert_allclose(z, special.logit(u), rtol=1e-12, atol=1e-12)
        expected = stats.norm.logpdf(special.logit(u)).sum(axis=1) - np.log(u * (1 - u)).sum(axis=1)
        np.testing.assert_allclose(flow_log_prob(flow, u), expected, rtol=1e-12)

    def test_coupling_round_trip(self):
        x = self.rng.normal(size=(20, 4))
        sigma = self.rng.uniform(0, 0.3, size=20)
        for layer in self.flow.layers:
            y, _ = coupling_forward(layer, x, sigma)
            self.assertLess(np.max(np.abs(coupling_inverse(layer, y, sigma) - x)), 1e-9)

    def test_passthrough_unchanged(self):
        layer = self.flow.layers[1]
        x = self.rng.normal(size=(3, 4))
        y, _ = coupling_forward(layer, x, 0.0)
        np.testing.assert_array_equal(y[:, layer.passthrough], x[:, layer.passthrough])

    def test_neighbouring_columns_split_across_halves(self):
        flow = init_flow(8, self.rng, n_layers=4, hidden=(4,))
        self.assertEqual(flow.order, interleaved_order(8))
        self.assertEqual(interleaved_order(8), (0, 2, 4, 6, 1, 3, 5, 7))
        for layer in flow.layers:
            self.assertEqual((layer.passthrough.size, layer.transformed.size), (4, 4))
            self.assertEqual(sorted(np.concatenate([layer.passthrough, layer.transformed])), list(range(8)))
            for j in range(0, 8, 2):
                self.assertNotEqual(j in layer.passthrough, j + 1 in layer.passthrough)
        self.assertEqual(set(flow.layers[0].passthrough), set(flow.layers[1].transformed))

    def test_pair_dependence_reaches_first_layer(self):
        flow = perturb(init_flow(4, self.rng, n_layers=2, hidden=(8,)), self.rng)
        x = self.rng.normal(size=4)
        jac = numeric_jacobian(lambda v: coupling_forward(flow.layers[0], v, 0.0)[0], x)
        self.assertNotEqual(jac[1, 0], 0.0)
        self.assertEqual(jac[0, 1], 0.0)

    def test_explicit_order(self):
        flow = perturb(init_flow(5, self.rng, n_layers=2, hidden=(4,), order=()), self.rng)
        self.assertEqual(flow.order, (0, 1, 2, 3, 4))
        np.testing.assert_array_equal(flow.layers[0].passthrough, [0, 1])
        u = self.rng.uniform(0.1, 0.9, size=(6, 5))
        z, _ = flow_forward(flow, u, 0.1)
        self.assertLess(np.max(np.abs(flow_inverse(flow, z, 0.1) - u)), 1e-9)
        with self.assertRaises(ShapeError):
            init_flow(4, self.rng, n_layers=2, hidden=(4,), order=(0, 1, 1, 3))

    def test_logit_round_trip(self):
        y, _ = logit_forward(self.u)
        self.assertLess(np.max(np.abs(sigmoid(y) - self.u)), 1e-9)

    def test_flow_round_trip(self):
        for sigma in (0.0, 0.25):
            z, _ = flow_forward(self.flow, self.u, sigma)
            self.assertLess(np.max(np.abs(flow_inverse(self.flow, z, sigma) - self.u)), 1e-9)

    def test_logdet_matches_jacobian(self):
        for u in self.u[:5]:
            _, logdet = flow_forward(self.flow, u, 0.1)
            jac = numeric_jacobian(lambda v: flow_forward(self.flow, v, 0.1)[0], u)
            _, expected = np.linalg.slogdet(jac)
            self.assertAlmostEqual(logdet, expected, delta=1e-4 * abs(expected))

    def test_logdet_matches_jacobian_eight_dims(self):
        rng = np.random.default_rng(8)
        flow = perturb(init_flow(8, rng, n_layers=4, hidden=(16,)), rng)
        for u in rng.uniform(0.05, 0.95, size=(20, 8)):
            _, logdet = flow_forward(flow, u, 0.0)
            _, expected = np.linalg.slogdet(numeric_jacobian(lambda v: flow_forward(flow, v, 0.0)[0], u))
            self.assertAlmostEqual(logdet, expected, delta=1e-4 * abs(expected))
        x = rng.normal(size=8)
        for layer in flow.layers:
            y, layer_logdet = coupling_forward(layer, x, 0.0)
            _, expected = np.linalg.slogdet(numeric_jacobian(lambda v: coupling_forward(layer, v, 0.0)[0], x))
            self.assertAlmostEqual(layer_logdet, expected, delta=1e-4 * abs(expected) + 1e-6)
            x = y

    def test_layer_logdets_sum(self):
        stages = flow_layer_logdets(self.flow, self.u, 0.1)
        _, total = flow_forward(self.flow, self.u, 0.1)
        self.assertEqual(len(stages), self.flow.n_layers + 1)
        np.testing.assert_allclose(np.sum(stages, axis=0), total, rtol=1e-12)

    def test_noise_level_changes_map(self):
        z0, _ = flow_forward(self.flow, self.u, 0.0)
        z1, _ = flow_forward(self.flow, self.u, 0.3)
        self.assertFalse(np.allclose(z0, z1))

    def test_negative_sigma(self):
        with self.assertRaises(DomainError):
            flow_forward(self.flow, self.u, -0.1)

    def test_sample_reproducible(self):
        a = flow_sample(self.flow, 50, 0.0, np.random.default_rng(3))
        b = flow_sample(self.flow, 50, 0.0, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)
        self.assertTrue(np.all((a > 0) & (a < 1)))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        flow = perturb(init_flow(4, rng, n_layers=2, hidden=(8,)), rng, scale=0.3)
        u = rng.uniform(0.1, 0.9, size=(16, 4))
        sigma = rng.uniform(0.0, 0.3, size=16)
        noise = rng.standard_normal((16, 4))
        nets = flow.parameters()
        loss, grads = flow_grad(flow, u, sigma, noise)
        analytic = np.concatenate([a.ravel() for g in grads for a in g.arrays()])
        theta = np.concatenate([a.ravel() for net in nets for a in net.arrays()])
        picked = rng.choice(theta.size, size=100, replace=False)

        def loss_at(values):
            arrays, pos = [], 0
            for net in nets:
                rebuilt = []
                for a in net.arrays():
                    rebuilt.append(values[pos:pos + a.size].reshape(a.shape))
                    pos += a.size
                arrays.append(net.with_arrays(rebuilt))
            return flow_grad(flow.with_parameters(arrays), u, sigma, noise)[0]

        step = 1e-6
        for k in picked:
            plus, minus = theta.copy(), theta.copy()
            plus[k] += step
            minus[k] -= step
            numeric = (loss_at(plus) - loss_at(minus)) / (2 * step)
            self.assertAlmostEqual(analytic[k], numeric, delta=1e-3 * abs(numeric) + 1e-7)
        self.assertAlmostEqual(loss, -float(np.mean(
            flow_log_prob_noisy(flow, u, sigma, noise))), places=10)

    def test_non_finite_conditioner(self):
        flow = init_flow(2, self.rng, n_layers=2, hidden=(4,))
        nets = flow.parameters()
        bad = nets[0].with_arrays([np.full(a.shape, np.nan) for a in nets[0].arrays()])
        broken = flow.with_parameters([bad] + nets[1:])
        with self.assertRaises(FlowNumericalError) as cm:
            flow_forward(broken, np.array([0.3, 0.6]))
        self.assertEqual(cm.exception.layer, 0)


def flow_log_prob_noisy(flow, u, sigma, noise):
    """log density of the noisy logit-space input, built from the public pieces."""
    y, logdet = logit_forward(u)
    h = y + np.asarray(sigma)[:, None] * noise
    total = np.array(logdet)
    for layer in flow.layers:
        h, layer_logdet = coupling_forward(layer, h, sigma)
        total = total + layer_logdet
    return stats.norm.logpdf(h).sum(axis=1) + total


# ============================================
# TRAINING CONFIG
# ============================================

class TrainConfigTests(SimpleTestCase):

    def test_validation(self):
        with self.assertRaises(ParameterError):
            TrainConfig(quantiles=(0.9, 0.1))
        with self.assertRaises(ParameterError):
            TrainConfig(patience=0)
        with self.assertRaises(ParameterError):
            TrainConfig(mode='maf')
        with self.assertRaises(ParameterError):
            TrainConfig(column_quantiles=(('x1', 0.5, 0.2),))

    def test_mode_alias(self):
        self.assertEqual(TrainConfig(mode='realnvp').mode, MODE_BASELINE)

    @override_settings(COMET_CONFIG={'LAYERS': 4, 'HIDDEN': (16,), 'QUANTILES': (0.1, 0.9)})
    def test_from_settings(self):
        cfg = TrainConfig.from_settings(seed=9)
        self.assertEqual((cfg.n_layers, cfg.hidden, cfg.quantiles, cfg.seed), (4, (16,), (0.1, 0.9), 9))

    @override_settings(
        COMET_CONFIG={'LAYERS': 10, 'HIDDEN': (64, 64), 'MAX_EPOCHS': 100, 'BATCH_SIZE': 256},
        COMET_DESK_CONFIG={'LAYERS': 6, 'HIDDEN': (32, 32), 'MAX_EPOCHS': 30},
    )
    def test_desk_profile(self):
        desk = TrainConfig.from_settings(desk=True)
        self.assertEqual((desk.n_layers, desk.hidden, desk.max_epochs, desk.batch_size), (6, (32, 32), 30, 256))
        self.assertEqual(TrainConfig.from_settings().n_layers, 10)
        self.assertEqual(TrainConfig.from_settings(desk=True, n_layers=4).n_layers, 4)

    def test_merged_mapping(self):
        cfg = TrainConfig().merged({'layers': 6, 'learning_rate': 0.01, 'quantiles': (0.01, 0.99)})
        self.assertEqual((cfg.n_layers, cfg.lr, cfg.quantiles), (6, 0.01, (0.01, 0.99)))
        with self.assertRaises(ParameterError):
            TrainConfig().merged({'momentum': 0.9})

    def test_column_quantiles(self):
        cfg = TrainConfig(column_quantiles=(('x2', 0.1, 0.9),))
        self.assertEqual(cfg.quantiles_for('x2'), (0.1, 0.9))
        self.assertEqual(cfg.quantiles_for('x1'), (0.05, 0.95))

    def test_hash_tracks_content(self):
        self.assertEqual(TrainConfig().config_hash(), TrainConfig().config_hash())
        self.assertNotEqual(TrainConfig().config_hash(), TrainConfig(seed=1).config_hash())


# ============================================
# COMET MODEL
# ============================================

class CometFitTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.train = gaussian_data(1200, seed=1)
        cls.val = gaussian_data(300, seed=2)
        cls.cfg = TrainConfig(**SMALL)
        cls.model, cls.log = fit(cls.train, cls.val, cls.cfg)

    def test_training_log(self):
        best = [e.best_val_loss for e in self.log.epochs]
        self.assertTrue(all(b2 <= b1 for b1, b2 in zip(best, best[1:])))
        self.assertLessEqual(self.log.epochs_run, self.log.best_epoch + self.cfg.patience)

    def test_train_and_val_losses_share_a_scale(self):
        frozen = dict(SMALL, max_epochs=1, lr=1e-12, sigma_max=0.0)
        for mode in (MODE_COMET, MODE_BASELINE):
            _, log = fit(self.train, self.train, TrainConfig(mode=mode, **frozen))
            epoch = log.epochs[0]
            self.assertAlmostEqual(epoch.train_loss, epoch.val_loss, delta=1e-6, msg=mode)
        self.assertEqual(self.log.best_val_loss, min(e.val_loss for e in self.log.epochs))
        self.assertEqual(self.model.metadata['best_epoch'], self.log.best_epoch)

    def test_marginals_fixed_before_flow(self):
        for i, m in enumerate(self.model.marginals):
            fresh = fit_marginal(self.train.values[:, i], 0.05, 0.95, name=f"x{i + 1}")
            self.assertEqual((m.alpha, m.beta), (fresh.alpha, fresh.beta))
            self.assertEqual(m.left_tail, fresh.left_tail)
            self.assertEqual(m.right_tail, fresh.right_tail)
            np.testing.assert_array_equal(m.center.points, fresh.center.points)

    def test_deterministic(self):
        model, _ = fit(self.train, self.val, self.cfg)
        for a, b in zip(self.model.flow.parameters(), model.flow.parameters()):
            for x, y in zip(a.arrays(), b.arrays()):
                np.testing.assert_array_equal(x, y)

    def test_log_prob_finite_and_pure(self):
        x = self.val.values[:50]
        first = self.model.log_prob(x)
        self.model.log_prob(self.train.values[:10])
        np.testing.assert_array_equal(first, self.model.log_prob(x))
        self.assertTrue(np.all(np.isfinite(first)))
        self.assertIsInstance(self.model.log_prob(x[0]), float)

    def test_log_prob_dimension(self):
        with self.assertRaises(ShapeError):
            self.model.log_prob(np.zeros(3))

    def test_end_to_end_round_trip(self):
        x = self.val.values[:200]
        z = self.model.to_latent(x)
        self.assertLess(np.max(np.abs(self.model.from_latent(z) - x)), 1e-5)

    def test_density_normalizes(self):
        grid = np.linspace(-6.0, 6.0, 400)
        cell = (grid[1] - grid[0]) ** 2
        xx, yy = np.meshgrid(grid, grid)
        points = np.column_stack([xx.ravel(), yy.ravel()])
        total = np.exp(self.model.log_prob(points)).sum() * cell
        self.assertAlmostEqual(total, 1.0, delta=0.02)

    def test_sample(self):
        a = self.model.sample(30, rng=np.random.default_rng(4))
        b = self.model.sample(30, rng=np.random.default_rng(4))
        np.testing.assert_array_equal(a, b)
        self.assertEqual(a.shape, (30, 2))
        with self.assertRaises(DomainError):
            self.model.sample(0)
        with self.assertRaises(DomainError):
            self.model.sample(5, sigma=-1.0)


class BaselineFitTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.model, cls.log = fit(gaussian_data(1200, 1), gaussian_data(300, 2), TrainConfig(mode='realnvp', **SMALL))

    def test_mode_and_parts(self):
        self.assertEqual(self.model.mode, MODE_BASELINE)
        self.assertIsNone(self.model.marginals)
        self.assertFalse(self.model.flow.logit)

    def test_log_prob_includes_standardization(self):
        x = gaussian_data(20, 5).values
        mean, std = self.model.standardization
        expected = flow_log_prob(self.model.flow, (x - mean) / std) - np.log(std).sum()
        np.testing.assert_allclose(self.model.log_prob(x), expected, rtol=1e-12)

    def test_round_trip(self):
        x = gaussian_data(20, 6).values
        np.testing.assert_allclose(self.model.from_latent(self.model.to_latent(x)), x, atol=1e-9)


class FitErrorTests(SimpleTestCase):

    def test_preconditions(self):
        cfg = TrainConfig(**SMALL)
        with self.assertRaises(InsufficientDataError):
            fit(gaussian_data(500, 1), gaussian_data(100, 2), cfg)
        with self.assertRaises(ShapeError):
            fit(gaussian_data(1200, 1), np.zeros((10, 3)), cfg)

    def test_marginal_failure_names_column(self):
        values = gaussian_data(1200, 1).values.copy()
        values[:, 1] = 4.0
        with self.assertRaises(MarginalFitError) as cm:
            fit(Dataset(values, ('a', 'b')), gaussian_data(100, 2), TrainConfig(**SMALL))
        self.assertEqual(cm.exception.column, 'b')

    def test_baseline_constant_column(self):
        values = gaussian_data(1200, 1).values.copy()
        values[:, 0] = 1.0
        with self.assertRaises(DegenerateDataError):
            fit(values, gaussian_data(100, 2), TrainConfig(mode='realnvp', **SMALL))

    def test_diverged_loss_reports_position(self):
        with mock.patch('flows.services.comet.flow_grad', return_value=(float('nan'), None)):
            with self.assertRaises(TrainingDivergedError) as cm:
                fit(gaussian_data(1200, 1), gaussian_data(100, 2), TrainConfig(**SMALL))
        self.assertEqual((cm.exception.epoch, cm.exception.batch), (1, 0))


# ============================================
# MODEL FILES
# ============================================

class SerializationTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)
        cls.model, _ = fit(gaussian_data(1200, 1), gaussian_data(300, 2), TrainConfig(**SMALL))
        cls.path = cls.dir / 'model.json'
        save_model(cls.model, cls.path)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_round_trip_is_exact(self):
        loaded = load_model(self.path)
        x = gaussian_data(100, 9).values
        self.assertEqual(np.max(np.abs(loaded.log_prob(x) - self.model.log_prob(x))), 0.0)
        np.testing.assert_array_equal(
            loaded.sample(20, rng=np.random.default_rng(1)),
            self.model.sample(20, rng=np.random.default_rng(1)),
        )
        self.assertEqual(loaded.columns, self.model.columns)
        self.assertEqual(loaded.metadata['version'], 'comet-v1')
        self.assertEqual(loaded.flow.order, self.model.flow.order)

    def test_resave_is_byte_identical(self):
        again = self.dir / 'again.json'
        save_model(load_model(self.path), again)
        self.assertEqual(again.read_bytes(), self.path.read_bytes())

    def test_tampered_checksum(self):
        doc = json.loads(self.path.read_text())
        doc['checksum'] = '0' * 64
        bad = self.dir / 'tampered.json'
        bad.write_text(json.dumps(doc))
        with self.assertRaises(CorruptModelError):
            load_model(bad)

    def test_tampered_payload(self):
        doc = json.loads(self.path.read_text())
        doc['payload']['d'] = 3
        bad = self.dir / 'payload.json'
        bad.write_text(json.dumps(doc))
        with self.assertRaises(CorruptModelError):
            load_model(bad)

    def test_version_mismatch(self):
        doc = json.loads(self.path.read_text())
        doc['version'] = 'comet-v0'
        bad = self.dir / 'old.json'
        bad.write_text(json.dumps(doc))
        with self.assertRaises(ModelVersionError):
            load_model(bad)

    def test_not_json(self):
        bad = self.dir / 'garbage.json'
        bad.write_text('comet-v1 {')
        with self.assertRaises(CorruptModelError):
            load_model(bad)

    def test_not_utf8(self):
        bad = self.dir / 'binary.json'
        bad.write_bytes(b'\xff\xfe\x00comet')
        with self.assertRaises(CorruptModelError):
            load_model(bad)

    def test_baseline_mode_comes_from_file(self):
        baseline, _ = fit(gaussian_data(1200, 1), gaussian_data(300, 2), TrainConfig(mode='realnvp', **SMALL))
        path = self.dir / 'baseline.json'
        save_model(baseline, path)
        loaded = load_model(path)
        self.assertEqual(loaded.mode, MODE_BASELINE)
        self.assertIsNone(loaded.marginals)


# ============================================
# CLI PLUMBING
# ============================================

class CliHelperTests(SimpleTestCase):

    def test_config_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'train.cfg'
            path.write_text("# defaults\nlayers = 4\nhidden = 16, 16\nquantiles = 0.1 0.9\n\nlr=0.01  # faster\n")
            self.assertEqual(
                read_config_file(path),
                {'layers': 4, 'hidden': (16, 16), 'quantiles': (0.1, 0.9), 'lr': 0.01},
            )
            path.write_text("momentum = 0.9\n")
            with self.assertRaises(ParameterError):
                read_config_file(path)

    def test_exit_codes(self):
        self.assertEqual(exit_code_for(FileNotFoundError('x')), 2)
        self.assertEqual(exit_code_for(CorruptModelError('x')), 3)
        self.assertEqual(exit_code_for(ModelVersionError('x')), 3)
        self.assertEqual(exit_code_for(ShapeError('x')), 4)
        self.assertEqual(exit_code_for(TrainingDivergedError(1, 0)), 5)
        self.assertEqual(exit_code_for(ParameterError('x')), 1)


# ============================================
# COMMANDS
# ============================================

class CommandTests(TestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)
        call_command('synth', '--n', '1200', '--seed', '1', '--out', str(cls.dir / 'train.csv'), stdout=StringIO())
        call_command('synth', '--n', '400', '--seed', '2', '--out', str(cls.dir / 'val.csv'), stdout=StringIO())

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def train(self, *extra, out='model.json'):
        args = [
            '--train', str(self.dir / 'train.csv'),
            '--val', str(self.dir / 'val.csv'),
            '--out', str(self.dir / out),
            '--layers', '2', '--hidden', '8', '--batch-size', '256', '--max-epochs', '2',
            *extra,
        ]
        stdout = StringIO()
        call_command('train', *args, stdout=stdout)
        return self.dir / out, stdout.getvalue()

    def test_train_writes_model_log_and_registry(self):
        path, output = self.train('--quantiles', '0.05', '0.95', '--seed', '3')
        model = load_model(path)
        self.assertEqual((model.mode, model.d), (MODE_COMET, 8))
        log = pd.read_csv(path.with_name('model.log.csv'))
        self.assertEqual(list(log.columns), ['epoch', 'train_loss', 'val_loss', 'best_val_loss', 'is_best'])
        self.assertIn('TRAINING COMPLETE', output)

        run = TrainingRun.objects.get()
        self.assertEqual((run.status, run.seed, run.dimension), ('completed', 3, 8))
        self.assertEqual(EpochRecord.objects.filter(run=run).count(), run.epochs_run)
        self.assertEqual(run.epochs_run, len(log))

    def test_train_baseline_mode(self):
        path, _ = self.train('--mode', 'realnvp', out='baseline.json')
        self.assertEqual(load_model(path).mode, MODE_BASELINE)

    def test_train_config_file_and_flag_precedence(self):
        cfg = self.dir / 'train.cfg'
        cfg.write_text("seed = 5\nlayers = 4\n")
        path, _ = self.train('--config', str(cfg), '--seed', '6', out='cfg.json')
        model = load_model(path)
        self.assertEqual(model.metadata['seed'], 6)
        self.assertEqual(model.flow.n_layers, 2)

    def test_train_column_quantiles(self):
        path, _ = self.train('--column-quantiles', 'x2', '0.1', '0.9', out='cq.json')
        marginals = load_model(path).marginals
        self.assertEqual((marginals[0].a, marginals[0].b), (0.05, 0.95))
        self.assertEqual((marginals[1].a, marginals[1].b), (0.1, 0.9))

    def test_train_rejects_reversed_quantiles(self):
        with self.assertRaises(CommandError) as cm:
            self.train('--quantiles', '0.9', '0.1', out='bad.json')
        self.assertEqual(cm.exception.returncode, 1)
        self.assertFalse((self.dir / 'bad.json').exists())

    def test_train_missing_val(self):
        missing = self.dir / 'nowhere.csv'
        with self.assertRaises(CommandError) as cm:
            call_command('train', '--train', str(self.dir / 'train.csv'), '--val', str(missing),
                         '--out', str(self.dir / 'm.json'), stdout=StringIO())
        self.assertEqual(cm.exception.returncode, 2)
        self.assertIn(str(missing), str(cm.exception))

    def test_sample_command(self):
        path, _ = self.train(out='sampler.json')
        outputs = {}
        for name, sigma, seed in (('a', '0', '1'), ('b', '0', '1'), ('c', '0.3', '1')):
            out = self.dir / f"samples_{name}.csv"
            call_command('sample', '--model', str(path), '--n', '5', '--seed', seed, '--sigma', sigma,
                         '--out', str(out), stdout=StringIO())
            outputs[name] = out.read_bytes()
        ds = load_csv(self.dir / 'samples_a.csv')
        self.assertEqual((ds.n, ds.d), (5, 8))
        self.assertEqual(outputs['a'], outputs['b'])
        self.assertNotEqual(outputs['a'], outputs['c'])

    def test_sample_corrupt_model(self):
        bad = self.dir / 'corrupt.json'
        bad.write_text('{"version": "comet-v1", "checksum": "abc", "payload": {}}')
        with self.assertRaises(CommandError) as cm:
            call_command('sample', '--model', str(bad), '--n', '5', '--out', str(self.dir / 's.csv'),
                         stdout=StringIO())
        self.assertEqual(cm.exception.returncode, 3)

    def test_sample_undecodable_model(self):
        bad = self.dir / 'binary.json'
        bad.write_bytes(b'\x89PNG\r\n\x1a\n\xff\xff')
        with self.assertRaises(CommandError) as cm:
            call_command('sample', '--model', str(bad), '--n', '5', '--out', str(self.dir / 's.csv'),
                         stdout=StringIO())
        self.assertEqual(cm.exception.returncode, 3)

    @override_settings(COMET_DESK_CONFIG={'LAYERS': 2, 'HIDDEN': (8,), 'MAX_EPOCHS': 1})
    def test_benchmark_uses_desk_profile(self):
        small = (gen_synthetic(4000, 1, split='train'), gen_synthetic(300, 2, split='val'),
                 gen_synthetic(300, 3, split='test'))
        out = self.dir / 'bench.csv'
        models = self.dir / 'bench_models'
        with mock.patch('flows.management.commands.benchmark.standard_splits', return_value=small):
            call_command('benchmark', '--out', str(out), '--model-dir', str(models), stdout=StringIO())
        results = pd.read_csv(out)
        self.assertEqual(list(results['mode']), [MODE_COMET] * 3 + [MODE_BASELINE])
        self.assertTrue((results['epochs_run'] == 1).all())
        for path in sorted(models.glob('*.json')):
            self.assertEqual(load_model(path).flow.n_layers, 2)
        self.assertEqual(len(list(models.glob('*.json'))), 4)

    def test_determinism_end_to_end(self):
        first, _ = self.train('--seed', '4', out='det1.json')
        second, _ = self.train('--seed', '4', out='det2.json')
        self.assertEqual(first.read_bytes(), second.read_bytes())


# ============================================
# ACCEPTANCE (slow)
# ============================================

@unittest.skipUnless(SLOW_TESTS, "set COMET_SLOW_TESTS=1 for desk-scale training runs")
class DeskScaleTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.train, cls.val, cls.test = standard_splits(0, DESK_SIZES)
        base = TrainConfig.from_settings(desk=True, seed=0)
        cls.comet, _ = fit(cls.train, cls.val, base)
        cls.baseline, _ = fit(cls.train, cls.val, base.replace(mode='realnvp'))
        cls.data_upper = tail_dep_coeff(cls.test.values, 0, 1, 0.95)

    def manifold_checks(self, model):
        """(upper tail dependence of (x1, x2) within 0.15 of the data, corr(x7, x8) > 0.95)."""
        samples = model.sample(10_000, rng=np.random.default_rng(0))
        upper = tail_dep_coeff(samples, 0, 1, 0.95)
        return abs(upper - self.data_upper) <= 0.15, np.corrcoef(samples[:, 6], samples[:, 7])[0, 1] > 0.95

    def test_comet_beats_baseline(self):
        comet_nll = -float(np.mean(self.comet.log_prob(self.test.values)))
        baseline_nll = -float(np.mean(self.baseline.log_prob(self.test.values)))
        self.assertLess(comet_nll, 0.0)
        self.assertGreater(baseline_nll, comet_nll + 5.0)

    def test_collinear_pair_survives_sampling(self):
        samples = self.comet.sample(10_000, rng=np.random.default_rng(0))
        self.assertGreater(np.corrcoef(samples[:, 6], samples[:, 7])[0, 1], 0.95)

    def test_shared_excess_pair_tail_dependence(self):
        self.assertGreater(self.data_upper, 0.5)
        samples = self.comet.sample(10_000, rng=np.random.default_rng(0))
        self.assertAlmostEqual(tail_dep_coeff(samples, 0, 1, 0.95), self.data_upper, delta=0.15)

    def test_baseline_misses_manifold_structure(self):
        self.assertEqual(self.manifold_checks(self.comet), (True, True))
        self.assertFalse(all(self.manifold_checks(self.baseline)))

    def test_sample_tails_heavier_than_baseline(self):
        comet = np.quantile(self.comet.sample(10_000, rng=np.random.default_rng(1)), 0.99, axis=0)
        baseline = np.quantile(self.baseline.sample(10_000, rng=np.random.default_rng(1)), 0.99, axis=0)
        self.assertGreater(comet[0], baseline[0])

    def test_pit_uniformity(self):
        for i, m in enumerate(self.comet.marginals):
            self.assertLess(ks_uniformity(marginal_transform(m, self.test.values[:, i])), 0.03)


@unittest.skipUnless(SLOW_TESTS, "set COMET_SLOW_TESTS=1 for the quantile sweep")
class QuantileSweepTests(SimpleTestCase):

    def test_nll_orders_with_tail_width(self):
        train, val, test = standard_splits(0, DESK_SIZES)
        base = TrainConfig.from_settings(desk=True, seed=0)
        nll = []
        for quantiles in ((0.01, 0.99), (0.05, 0.95), (0.10, 0.90)):
            model, _ = fit(train, val, base.replace(quantiles=quantiles))
            nll.append(-float(np.mean(model.log_prob(test.values))))
        self.assertLess(nll[0], nll[1])
        self.assertLess(nll[1], nll[2])
