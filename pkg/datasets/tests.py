import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from cometflows.exceptions import CsvFormatError, DataError, DegenerateDataError, DomainError, ParameterError
from datasets.services.synthetic import DESK_SIZES, EXTREME_PROB, gen_synthetic, standard_splits
from datasets.services.tabular import Dataset, load_csv, save_csv, split, split_counts, standardize
from marginals.services.marginal import empirical_quantile
from marginals.services.univariate import gp_fit_mle


class TempDirMixin:

    def setUp(self):
        super().setUp()
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.dir = Path(tmp.name)

    def write(self, name, text):
        path = self.dir / name
        path.write_text(text, encoding='utf-8')
        return path


# ============================================
# CSV
# ============================================

class LoadCsvTests(TempDirMixin, SimpleTestCase):

    def test_header_and_values(self):
        ds = load_csv(self.write('ok.csv', "a,b\n1,2\n3,4\n"))
        self.assertEqual(ds.columns, ('a', 'b'))
        np.testing.assert_array_equal(ds.values, [[1.0, 2.0], [3.0, 4.0]])
        self.assertEqual((ds.n, ds.d), (2, 2))

    def test_headerless(self):
        ds = load_csv(self.write('raw.csv', "1,2,3\n4,5,6\n"), has_header=False)
        self.assertEqual(ds.columns, ('x1', 'x2', 'x3'))
        self.assertEqual(ds.n, 2)

    def test_non_numeric_cell_position(self):
        with self.assertRaises(CsvFormatError) as cm:
            load_csv(self.write('bad.csv', "a,b\n1,2\n3,abc\n"))
        self.assertEqual((cm.exception.row, cm.exception.column), (3, 2))
        self.assertIn('abc', str(cm.exception))

    def test_short_row(self):
        with self.assertRaises(CsvFormatError) as cm:
            load_csv(self.write('short.csv', "a,b\n1,2\n3\n5,6\n"))
        self.assertEqual(cm.exception.row, 3)

    def test_long_row(self):
        with self.assertRaises(CsvFormatError) as cm:
            load_csv(self.write('long.csv', "a,b\n1,2\n3,4,5\n"))
        self.assertEqual(cm.exception.row, 3)

    def test_non_finite(self):
        with self.assertRaises(CsvFormatError) as cm:
            load_csv(self.write('inf.csv', "a,b\n1,inf\n"))
        self.assertEqual((cm.exception.row, cm.exception.column), (2, 2))

    def test_empty_inputs(self):
        with self.assertRaises(CsvFormatError):
            load_csv(self.write('empty.csv', ""))
        with self.assertRaises(CsvFormatError):
            load_csv(self.write('header.csv', "a,b\n"))

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_csv(self.dir / 'absent.csv')

    def test_save_round_trip_is_exact(self):
        values = np.array([[0.1 + 0.2, -1e-300], [1.0 / 3.0, 123456789.123456789]])
        path = self.dir / 'exact.csv'
        save_csv(Dataset(values, ('p', 'q')), path)
        back = load_csv(path)
        np.testing.assert_array_equal(back.values, values)
        self.assertEqual(back.columns, ('p', 'q'))
        self.assertTrue(path.read_bytes().endswith(b"\n"))
        self.assertNotIn(b"\r", path.read_bytes())


# ============================================
# PREPROCESSING
# ============================================

class PreprocessingTests(SimpleTestCase):

    def setUp(self):
        self.ds = Dataset(np.random.default_rng(0).normal(3.0, 2.0, size=(500, 3)))

    def test_standardize(self):
        scaled, mean, std = standardize(self.ds)
        np.testing.assert_allclose(scaled.values.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(scaled.values.std(axis=0), 1.0, rtol=1e-12)
        np.testing.assert_allclose(scaled.values * std + mean, self.ds.values, rtol=1e-12)
        again, _, _ = standardize(scaled)
        np.testing.assert_allclose(again.values, scaled.values, atol=1e-12)

    def test_constant_column(self):
        values = self.ds.values.copy()
        values[:, 1] = 7.0
        with self.assertRaises(DegenerateDataError) as cm:
            standardize(Dataset(values))
        self.assertEqual(cm.exception.column, 'x2')

    def test_split_counts(self):
        self.assertEqual(split_counts(1000, (0.8, 0.1, 0.1)), [800, 100, 100])
        self.assertEqual(split_counts(1003, (0.8, 0.1, 0.1)), [803, 100, 100])
        with self.assertRaises(ParameterError):
            split_counts(10, (0.5, 0.4))

    def test_split_partitions_rows(self):
        ds = Dataset(np.arange(2000.0).reshape(1000, 2))
        train, val, test = split(ds, seed=4)
        self.assertEqual((train.n, val.n, test.n), (800, 100, 100))
        self.assertEqual((train.split, val.split, test.split), ('train', 'val', 'test'))
        combined = np.sort(np.concatenate([train.values[:, 0], val.values[:, 0], test.values[:, 0]]))
        np.testing.assert_array_equal(combined, ds.values[:, 0])
        again, _, _ = split(ds, seed=4)
        np.testing.assert_array_equal(again.values, train.values)

    def test_split_too_small(self):
        with self.assertRaises(DataError):
            split(Dataset(np.ones((5, 2))))

    def test_dataset_rejects_non_finite(self):
        with self.assertRaises(DataError):
            Dataset(np.array([[1.0, np.nan]]))


# ============================================
# SYNTHETIC BENCHMARK
# ============================================

class SyntheticTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.ds = gen_synthetic(100_000, seed=0)

    def test_shape_and_names(self):
        self.assertEqual((self.ds.n, self.ds.d), (100_000, 8))
        self.assertEqual(self.ds.columns, tuple(f"x{i}" for i in range(1, 9)))

    def test_collinear_pair(self):
        np.testing.assert_array_equal(self.ds.column('x7'), self.ds.column('x8'))

    def test_extreme_rate(self):
        self.assertAlmostEqual(np.mean(self.ds.column('x1') > 1.0), EXTREME_PROB, delta=0.005)
        self.assertAlmostEqual(np.mean(self.ds.column('x3') < 0.0), EXTREME_PROB, delta=0.005)

    def test_extremes_are_shared(self):
        x = self.ds.values
        upper = x[:, 0] > 1.0
        np.testing.assert_array_equal(x[upper, 0], x[upper, 1])
        lower = x[:, 2] < 0.0
        np.testing.assert_array_equal(x[lower, 2], x[lower, 3])
        outside = (x[:, 4] > 1.0) | (x[:, 4] < 0.0)
        np.testing.assert_array_equal(x[outside, 4], x[outside, 5])
        self.assertGreater(np.sum(x[:, 4] > 1.0), 0)
        self.assertGreater(np.sum(x[:, 4] < 0.0), 0)

    def test_bulk_is_uniform(self):
        col = self.ds.column('x2')
        bulk = col[(col >= 0.0) & (col <= 1.0)]
        self.assertAlmostEqual(np.mean(bulk), 0.5, delta=0.01)

    def test_heavy_upper_tail(self):
        col = self.ds.column('x1')
        threshold = empirical_quantile(col, 0.99)
        dist = gp_fit_mle(col[col > threshold] - threshold)
        self.assertGreater(dist.xi, 0.5)

    def test_deterministic(self):
        np.testing.assert_array_equal(gen_synthetic(500, seed=3).values, gen_synthetic(500, seed=3).values)
        self.assertFalse(np.array_equal(gen_synthetic(500, seed=3).values, gen_synthetic(500, seed=4).values))

    def test_row_count(self):
        with self.assertRaises(DomainError):
            gen_synthetic(0, seed=0)

    def test_desk_splits(self):
        train, val, test = standard_splits(0, DESK_SIZES)
        self.assertEqual((train.n, val.n, test.n), DESK_SIZES)
        self.assertEqual((train.split, val.split, test.split), ('train', 'val', 'test'))
        seen = [set(part.column('x7')) for part in (train, val, test)]
        self.assertFalse(seen[0] & seen[1])
        self.assertFalse(seen[0] & seen[2])
        self.assertFalse(seen[1] & seen[2])

    def test_splits_record_seed_and_stream(self):
        parts = standard_splits(7, (10, 5, 5))
        self.assertEqual([p.n for p in parts], [10, 5, 5])
        self.assertEqual([p.provenance['base_seed'] for p in parts], [7, 7, 7])
        self.assertEqual([p.provenance['stream'] for p in parts], [0, 1, 2])
        again = standard_splits(7, (10, 5, 5))
        for first, second in zip(parts, again):
            np.testing.assert_array_equal(first.values, second.values)


# ============================================
# SYNTH COMMAND
# ============================================

class SynthCommandTests(TempDirMixin, SimpleTestCase):

    def synth(self, *args):
        stdout = StringIO()
        call_command('synth', *args, stdout=stdout)
        return stdout.getvalue()

    def test_default_rows(self):
        path = self.dir / 'data.csv'
        output = self.synth('--out', str(path), '--seed', '1')
        ds = load_csv(path)
        self.assertEqual((ds.n, ds.d), (1000, 8))
        np.testing.assert_array_equal(ds.column('x7'), ds.column('x8'))
        self.assertIn('SYNTHETIC DATA', output)

    def test_same_seed_same_bytes(self):
        first, second = self.dir / 'a.csv', self.dir / 'b.csv'
        self.synth('--n', '300', '--seed', '9', '--out', str(first))
        self.synth('--n', '300', '--seed', '9', '--out', str(second))
        self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_matches_generator(self):
        path = self.dir / 'gen.csv'
        self.synth('--n', '200', '--seed', '5', '--out', str(path))
        np.testing.assert_array_equal(load_csv(path).values, gen_synthetic(200, 5).values)

    def test_desk_splits(self):
        self.synth('--splits', 'desk', '--seed', '0', '--out', str(self.dir / 'bench.csv'))
        for name, size in zip(('train', 'val', 'test'), DESK_SIZES):
            self.assertEqual(load_csv(self.dir / f"bench_{name}.csv").n, size)

    def test_missing_output_directory(self):
        with self.assertRaises(CommandError) as cm:
            self.synth('--out', str(self.dir / 'nowhere' / 'data.csv'))
        self.assertEqual(cm.exception.returncode, 2)

    def test_bad_row_count(self):
        with self.assertRaises(CommandError) as cm:
            self.synth('--n', '0', '--out', str(self.dir / 'zero.csv'))
        self.assertEqual(cm.exception.returncode, 1)
