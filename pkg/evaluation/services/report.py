"""
EvalReport: what `eval` writes.

evaluate() scores a model on a held-out set and compares model samples
(drawn at sigma = 0) against the data: tail dependence of consecutive column
pairs, a quantile table and pair correlations. PIT values for the KS column
statistics come from the marginal transforms in comet mode and from the
empirical CDF of the model's own samples in baseline mode.

The JSON report keeps a fixed key order; the plot CSV has one row per
(pair, side, level).
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from cometflows.exceptions import ShapeError, UndefinedCoefficientError
from evaluation.services.metrics import avg_nll, empirical_cdf, ks_uniformity, pearson, tail_dep_coeff
from marginals.services.marginal import empirical_quantile, marginal_transform

logger = logging.getLogger(__name__)

UPPER_LEVELS = (0.95, 0.99)
LOWER_LEVELS = (0.05, 0.01)
QUANTILE_LEVELS = (0.01, 0.05, 0.5, 0.95, 0.99)
PLOT_COLUMNS = ['pair', 'side', 'level', 'data_lambda', 'sample_lambda']


@dataclass(frozen=True)
class TailDependence:
    pair: tuple
    side: str
    level: float
    data: float = None      # None when the conditioning set is empty
    sample: float = None


@dataclass(frozen=True)
class QuantileRow:
    column: str
    level: float
    data: float
    sample: float


@dataclass(frozen=True)
class Correlation:
    pair: tuple
    data: float = None
    sample: float = None


@dataclass(frozen=True)
class EvalReport:
    avg_nll: float
    mode: str
    n_test: int
    n_samples: int
    tail_dependence: tuple = ()
    ks: dict = field(default_factory=dict)
    quantiles: tuple = ()
    correlations: tuple = ()
    config: dict = field(default_factory=dict)

    def tail(self, pair, side, level):
        for entry in self.tail_dependence:
            if entry.pair == tuple(pair) and entry.side == side and entry.level == level:
                return entry
        raise KeyError((tuple(pair), side, level))

    def to_dict(self):
        return {
            'avg_nll': self.avg_nll,
            'mode': self.mode,
            'n_test': self.n_test,
            'n_samples': self.n_samples,
            'tail_dependence': [
                {'pair': list(e.pair), 'side': e.side, 'level': e.level, 'data': e.data, 'sample': e.sample}
                for e in self.tail_dependence
            ],
            'ks': dict(self.ks),
            'quantiles': [
                {'column': q.column, 'level': q.level, 'data': q.data, 'sample': q.sample}
                for q in self.quantiles
            ],
            'correlations': [
                {'pair': list(c.pair), 'data': c.data, 'sample': c.sample}
                for c in self.correlations
            ],
            'config': dict(self.config),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            avg_nll=float(doc['avg_nll']),
            mode=doc['mode'],
            n_test=int(doc['n_test']),
            n_samples=int(doc['n_samples']),
            tail_dependence=tuple(
                TailDependence(tuple(e['pair']), e['side'], e['level'], e['data'], e['sample'])
                for e in doc.get('tail_dependence', [])
            ),
            ks=dict(doc.get('ks', {})),
            quantiles=tuple(
                QuantileRow(q['column'], q['level'], q['data'], q['sample'])
                for q in doc.get('quantiles', [])
            ),
            correlations=tuple(
                Correlation(tuple(c['pair']), c['data'], c['sample'])
                for c in doc.get('correlations', [])
            ),
            config=dict(doc.get('config', {})),
        )

    def plot_frame(self):
        return pd.DataFrame(
            [
                ['-'.join(e.pair), e.side, e.level, e.data, e.sample]
                for e in self.tail_dependence
            ],
            columns=PLOT_COLUMNS,
        )


def consecutive_pairs(d):
    """(0, 1), (2, 3), ...; an odd last column is left out."""
    return [(i, i + 1) for i in range(0, d - 1, 2)]


def _coefficient(values, i, j, level, side, label):
    try:
        return tail_dep_coeff(values, i, j, level, side)
    except UndefinedCoefficientError as exc:
        logger.warning(f"[EVAL] {label}: {exc}")
        return None


def pit_values(model, test_values, samples):
    if model.mode == 'comet':
        return np.column_stack([
            marginal_transform(m, test_values[:, i]) for i, m in enumerate(model.marginals)
        ])
    return np.column_stack([
        empirical_cdf(samples[:, i], test_values[:, i]) for i in range(model.d)
    ])


def evaluate(model, test, sample_count, rng=None, seed=None):
    """Score model on test and compare sample_count model draws against it."""
    values = np.asarray(getattr(test, 'values', test), dtype=float)
    if values.ndim != 2 or values.shape[1] != model.d:
        raise ShapeError(f"model has dimension {model.d}, test data has shape {values.shape}")
    rng = np.random.default_rng(seed) if rng is None else rng
    columns = list(model.columns)

    nll = avg_nll(model, values)
    samples = model.sample(int(sample_count), 0.0, rng)

    tails = []
    correlations = []
    for i, j in consecutive_pairs(model.d):
        pair = (columns[i], columns[j])
        for side, levels in (('upper', UPPER_LEVELS), ('lower', LOWER_LEVELS)):
            for level in levels:
                label = f"{pair} {side} {level}"
                tails.append(TailDependence(
                    pair, side, level,
                    data=_coefficient(values, i, j, level, side, 'data ' + label),
                    sample=_coefficient(samples, i, j, level, side, 'samples ' + label),
                ))
        correlations.append(Correlation(
            pair,
            data=pearson(values[:, i], values[:, j]),
            sample=pearson(samples[:, i], samples[:, j]),
        ))

    pit = pit_values(model, values, samples)
    ks = {name: ks_uniformity(pit[:, i]) for i, name in enumerate(columns)}

    quantiles = tuple(
        QuantileRow(
            name, level,
            data=empirical_quantile(values[:, i], level),
            sample=empirical_quantile(samples[:, i], level),
        )
        for i, name in enumerate(columns)
        for level in QUANTILE_LEVELS
    )

    report = EvalReport(
        avg_nll=nll,
        mode=model.mode,
        n_test=int(values.shape[0]),
        n_samples=int(sample_count),
        tail_dependence=tuple(tails),
        ks=ks,
        quantiles=quantiles,
        correlations=tuple(correlations),
        config={
            'sigma': 0.0,
            'sample_count': int(sample_count),
            'seed': seed,
            'model': dict(model.metadata),
        },
    )
    logger.info(f"[EVAL] mode={model.mode} avg_nll={nll:.6f} n_test={values.shape[0]} samples={sample_count}")
    return report


def write_report(report, path):
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + '\n', encoding='utf-8')


def read_report(path):
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding='utf-8')))


def write_plot_csv(report, path):
    report.plot_frame().to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
