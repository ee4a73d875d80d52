import json
import math
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase
from scipy import stats

from cometflows.exceptions import DomainError, InsufficientDataError, ShapeError, UndefinedCoefficientError
from datasets.services.synthetic import gen_synthetic
from datasets.services.tabular import Dataset, save_csv
from evaluation.models import EvaluationRecord
from evaluation.services.metrics import avg_nll, empirical_cdf, ks_uniformity, pearson, tail_dep_coeff
from evaluation.services.report import (
    PLOT_COLUMNS,
    QUANTILE_LEVELS,
    EvalReport,
    consecutive_pairs,
    evaluate,
    read_report,
    write_plot_csv,
    write_report,
)
from flows.services.comet import TrainConfig, fit
from flows.services.serialization import save_model

SMALL = dict(n_layers=2, hidden=(8,), batch_size=256, max_epochs=2, patience=2, seed=0)


class StandardNormal:
    """One-dimensional N(0, 1) stand-in for a trained model."""
    d = 1

    def log_prob(self, x):
        return stats.norm.logpdf(np.asarray(x, dtype=float)[:, 0])


def small_model(mode='comet'):
    train = gen_synthetic(1200, seed=1)
    val = gen_synthetic(300, seed=2)
    model, _ = fit(train, val, TrainConfig(mode=mode, **SMALL))
    return model


# ============================================
# METRICS
# ============================================

class AvgNllTests(SimpleTestCase):

    def test_standard_normal_at_origin(self):
        self.assertAlmostEqual(avg_nll(StandardNormal(), np.zeros((1, 1))), 0.5 * math.log(2 * math.pi), places=12)
        self.assertAlmostEqual(avg_nll(StandardNormal(), [[0.0]]), 0.918938533, places=8)

    def test_shift(self):
        base = avg_nll(StandardNormal(), np.zeros((3, 1)))
        self.assertAlmostEqual(avg_nll(StandardNormal(), np.ones((3, 1))), base + 0.5, places=12)

    def test_union_is_weighted_mean(self):
        a = np.random.default_rng(0).normal(size=(30, 1))
        b = np.random.default_rng(1).normal(size=(70, 1))
        model = StandardNormal()
        expected = (30 * avg_nll(model, a) + 70 * avg_nll(model, b)) / 100
        self.assertAlmostEqual(avg_nll(model, np.vstack([a, b])), expected, places=12)

    def test_width_mismatch(self):
        with self.assertRaises(ShapeError):
            avg_nll(StandardNormal(), np.zeros((4, 2)))


class TailDependenceTests(SimpleTestCase):

    def test_identical_columns(self):
        x = np.random.default_rng(0).normal(size=5000)
        samples = np.column_stack([x, x])
        self.assertEqual(tail_dep_coeff(samples, 0, 1, 0.95), 1.0)
        self.assertEqual(tail_dep_coeff(samples, 0, 1, 0.05, side='lower'), 1.0)

    def test_independent_columns(self):
        samples = np.random.default_rng(1).uniform(size=(200_000, 2))
        self.assertAlmostEqual(tail_dep_coeff(samples, 0, 1, 0.95), 0.05, delta=0.01)
        self.assertAlmostEqual(tail_dep_coeff(samples, 0, 1, 0.05, side='lower'), 0.05, delta=0.01)

    def test_empty_conditioning_set(self):
        samples = np.column_stack([np.arange(100.0), np.ones(100)])
        with self.assertRaises(UndefinedCoefficientError):
            tail_dep_coeff(samples, 0, 1, 0.99)

    def test_invariant_under_monotone_maps(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(20_000, 2))
        z[:, 1] += z[:, 0]
        before = tail_dep_coeff(z, 0, 1, 0.95)
        after = tail_dep_coeff(np.column_stack([np.exp(z[:, 0]), z[:, 1] ** 3]), 0, 1, 0.95)
        self.assertEqual(before, after)

    def test_synthetic_upper_pair(self):
        ds = gen_synthetic(50_000, seed=0)
        self.assertGreaterEqual(tail_dep_coeff(ds, 0, 1, 0.99), 0.5)
        self.assertGreaterEqual(tail_dep_coeff(ds, 2, 3, 0.01, side='lower'), 0.5)

    def test_arguments(self):
        samples = np.zeros((10, 2))
        with self.assertRaises(DomainError):
            tail_dep_coeff(samples, 0, 1, 1.0)
        with self.assertRaises(DomainError):
            tail_dep_coeff(samples, 0, 1, 0.5, side='middle')


class UniformityTests(SimpleTestCase):

    def test_evenly_spaced(self):
        n = 200
        self.assertAlmostEqual(ks_uniformity(np.arange(1, n + 1) / n), 1.0 / n, places=12)

    def test_point_mass(self):
        self.assertAlmostEqual(ks_uniformity(np.full(20, 0.5)), 0.5, places=12)

    def test_domain_and_size(self):
        with self.assertRaises(DomainError):
            ks_uniformity(np.linspace(-0.1, 0.9, 20))
        with self.assertRaises(InsufficientDataError):
            ks_uniformity([0.2, 0.4])

    def test_empirical_cdf(self):
        np.testing.assert_array_equal(empirical_cdf([3.0, 1.0, 2.0, 4.0], [0.0, 2.0, 2.5, 9.0]), [0.0, 0.5, 0.5, 1.0])

    def test_pearson(self):
        x = np.arange(10.0)
        self.assertAlmostEqual(pearson(x, 2 * x + 1), 1.0, places=12)
        self.assertIsNone(pearson(x, np.ones(10)))


# ============================================
# REPORT
# ============================================

class EvaluateTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.model = small_model()
        cls.test = gen_synthetic(500, seed=3)
        cls.report = evaluate(cls.model, cls.test, 2000, seed=5)

    def test_pairs(self):
        self.assertEqual(consecutive_pairs(8), [(0, 1), (2, 3), (4, 5), (6, 7)])
        self.assertEqual(consecutive_pairs(5), [(0, 1), (2, 3)])

    def test_contents(self):
        report = self.report
        self.assertAlmostEqual(report.avg_nll, avg_nll(self.model, self.test), places=12)
        self.assertEqual((report.mode, report.n_test, report.n_samples), ('comet', 500, 2000))
        self.assertEqual(len(report.tail_dependence), 16)
        self.assertEqual(len(report.quantiles), 8 * len(QUANTILE_LEVELS))
        self.assertEqual(len(report.correlations), 4)
        self.assertEqual(set(report.ks), set(self.model.columns))
        self.assertTrue(all(0.0 <= v <= 1.0 for v in report.ks.values()))

    def test_collinear_pair_in_data(self):
        entry = self.report.tail(('x7', 'x8'), 'upper', 0.95)
        self.assertEqual(entry.data, 1.0)
        self.assertAlmostEqual(self.report.correlations[3].data, 1.0, places=12)

    def test_reproducible(self):
        again = evaluate(self.model, self.test, 2000, seed=5)
        self.assertEqual(again.to_dict(), self.report.to_dict())

    def test_width_mismatch(self):
        with self.assertRaises(ShapeError):
            evaluate(self.model, np.zeros((10, 3)), 100, seed=0)

    def test_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            report_path = Path(tmp) / 'report.json'
            plot_path = Path(tmp) / 'report.plot.csv'
            write_report(self.report, report_path)
            write_plot_csv(self.report, plot_path)

            doc = json.loads(report_path.read_text())
            self.assertEqual(list(doc)[:2], ['avg_nll', 'mode'])
            self.assertEqual(read_report(report_path).to_dict(), self.report.to_dict())

            plot = pd.read_csv(plot_path)
            self.assertEqual(list(plot.columns), PLOT_COLUMNS)
            self.assertEqual(len(plot), 16)
            self.assertEqual(plot['pair'].iloc[0], 'x1-x2')

    def test_round_trip_through_dict(self):
        self.assertEqual(EvalReport.from_dict(self.report.to_dict()).to_dict(), self.report.to_dict())

    def test_baseline_mode(self):
        baseline = small_model(mode='realnvp')
        report = evaluate(baseline, self.test, 1000, seed=1)
        self.assertEqual(report.mode, 'realnvp_baseline')
        self.assertTrue(all(0.0 <= v <= 1.0 for v in report.ks.values()))


# ============================================
# EVAL COMMAND
# ============================================

class EvalCommandTests(TestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)
        cls.model_path = cls.dir / 'model.json'
        save_model(small_model(), cls.model_path)
        cls.test_path = cls.dir / 'test.csv'
        save_csv(gen_synthetic(400, seed=3), cls.test_path)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def evaluate(self, *extra, test=None):
        stdout = StringIO()
        call_command(
            'eval',
            '--model', str(self.model_path),
            '--test', str(test or self.test_path),
            '--out', str(self.dir / 'report.json'),
            '--samples', '1000',
            *extra,
            stdout=stdout,
        )
        return stdout.getvalue()

    def test_writes_report_plot_and_record(self):
        output = self.evaluate('--seed', '2')
        self.assertTrue(output.startswith('avg_nll: '))
        doc = json.loads((self.dir / 'report.json').read_text())
        self.assertIn('avg_nll', doc)
        self.assertTrue(math.isfinite(doc['avg_nll']))
        self.assertEqual(len(pd.read_csv(self.dir / 'report.plot.csv')), 16)

        record = EvaluationRecord.objects.get()
        self.assertEqual((record.mode, record.sample_count), ('comet', 1000))
        self.assertAlmostEqual(record.avg_nll, doc['avg_nll'], places=12)

    def test_width_mismatch(self):
        narrow = self.dir / 'narrow.csv'
        save_csv(Dataset(np.random.default_rng(0).normal(size=(50, 3))), narrow)
        with self.assertRaises(CommandError) as cm:
            self.evaluate(test=narrow)
        self.assertEqual(cm.exception.returncode, 4)
        self.assertFalse(EvaluationRecord.objects.exists())

    def test_missing_test_file(self):
        with self.assertRaises(CommandError) as cm:
            self.evaluate(test=self.dir / 'absent.csv')
        self.assertEqual(cm.exception.returncode, 2)

    def test_explicit_plot_path(self):
        plot = self.dir / 'tails.csv'
        self.evaluate('--plot', str(plot))
        self.assertEqual(list(pd.read_csv(plot).columns), PLOT_COLUMNS)
