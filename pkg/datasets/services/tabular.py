"""
Numeric tables: the Dataset record, CSV IO, standardization and splitting.

CSV files are comma-separated with an optional single header row and "\\n"
line endings. Values are written with 17 significant digits, so a saved
table reads back bit-identically. Row numbers in errors are physical line
numbers (the header is line 1); column numbers start at 1.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from cometflows.exceptions import CsvFormatError, DataError, DegenerateDataError, ParameterError, ShapeError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
SPLIT_NAMES = ('train', 'val', 'test')

_PANDAS_LINE = re.compile(r'line (\d+)')


def default_columns(d):
    return tuple(f"x{i + 1}" for i in range(d))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Row-major finite matrix with column names and a provenance record."""
    values: np.ndarray
    columns: tuple = ()
    split: str = ''
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeError(f"a dataset needs an n x d matrix with n, d >= 1, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("dataset entries must be finite")
        columns = tuple(str(c) for c in self.columns) or default_columns(values.shape[1])
        if len(columns) != values.shape[1]:
            raise ShapeError(f"{len(columns)} column names for {values.shape[1]} columns")
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'columns', columns)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    def column(self, name):
        return self.values[:, self.columns.index(name)]

    def with_values(self, values, split=None, **provenance):
        return Dataset(
            values,
            self.columns,
            self.split if split is None else split,
            {**self.provenance, **provenance},
        )

    def to_frame(self):
        return pd.DataFrame(self.values, columns=list(self.columns))


# ============================================
# CSV
# ============================================

def _ragged_error(path, line, detail=''):
    return CsvFormatError(f"{path}: ragged row at line {line}{detail}", row=line)


def load_csv(path, has_header=True):
    """
    Read a rectangular numeric CSV into a Dataset.

    Raises FileNotFoundError for a missing file and CsvFormatError for empty
    files, ragged rows, non-numeric or non-finite cells.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"CSV file not found: {path}")
    try:
        frame = pd.read_csv(
            path,
            header=0 if has_header else None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            encoding='utf-8',
        )
    except pd.errors.EmptyDataError as exc:
        raise CsvFormatError(f"{path}: file is empty") from exc
    except pd.errors.ParserError as exc:
        match = _PANDAS_LINE.search(str(exc))
        raise _ragged_error(path, int(match.group(1)) if match else None, f" ({exc})") from exc
    except UnicodeDecodeError as exc:
        raise CsvFormatError(f"{path}: not UTF-8 text") from exc

    offset = 2 if has_header else 1
    if frame.shape[0] == 0:
        raise CsvFormatError(f"{path}: no data rows")

    # Short rows come back with missing (NaN) cells
    missing = frame.isna().to_numpy()
    if missing.any():
        row = int(np.argmax(missing.any(axis=1)))
        raise _ragged_error(path, row + offset)

    try:
        values = frame.to_numpy().astype(float)
    except ValueError:
        for j in range(frame.shape[1]):
            bad = pd.to_numeric(frame.iloc[:, j].str.strip(), errors='coerce').isna().to_numpy()
            if bad.any():
                i = int(np.argmax(bad))
                cell = frame.iat[i, j]
                raise CsvFormatError(
                    f"{path}: non-numeric cell '{cell}' at row {i + offset}, column {j + 1}",
                    row=i + offset, column=j + 1,
                )
        raise

    nonfinite = ~np.isfinite(values)
    if nonfinite.any():
        i, j = (int(k) for k in np.argwhere(nonfinite)[0])
        raise CsvFormatError(
            f"{path}: non-finite cell at row {i + offset}, column {j + 1}",
            row=i + offset, column=j + 1,
        )

    columns = tuple(str(c).strip() for c in frame.columns) if has_header else default_columns(values.shape[1])
    dataset = Dataset(values, columns, provenance={'source': str(path)})
    logger.info(f"[CSV LOADED] {path} rows={dataset.n} cols={dataset.d}")
    return dataset


def save_csv(ds, path, header=True):
    """Write with a header row, 17 significant digits and "\\n" line endings."""
    ds.to_frame().to_csv(
        path,
        index=False,
        header=header,
        float_format=FLOAT_FORMAT,
        lineterminator='\n',
        encoding='utf-8',
    )
    logger.info(f"[CSV SAVED] {path} rows={ds.n} cols={ds.d}")


# ============================================
# PREPROCESSING
# ============================================

def standardize(ds):
    """Return (standardized dataset, mean, std); std uses ddof = 0."""
    mean = ds.values.mean(axis=0)
    std = ds.values.std(axis=0)
    for name, s in zip(ds.columns, std):
        if not s > 0:
            raise DegenerateDataError(f"column '{name}' has zero variance", column=name)
    scaled = ds.with_values((ds.values - mean) / std, standardized=True)
    return scaled, mean, std


def split_counts(n, fractions):
    """floor(f * n) rows per part; the remainder goes to the first part."""
    fractions = [float(f) for f in fractions]
    if not fractions or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ParameterError(f"split fractions must be nonnegative and sum to 1, got {fractions}")
    counts = [math.floor(f * n + 1e-9) for f in fractions]
    counts[0] += n - sum(counts)
    return counts


def split(ds, fractions=(0.8, 0.1, 0.1), seed=0):
    """Seeded permutation partition of the rows."""
    counts = split_counts(ds.n, fractions)
    order = np.random.default_rng(seed).permutation(ds.n)
    names = SPLIT_NAMES if len(counts) == len(SPLIT_NAMES) else tuple(f"part{i + 1}" for i in range(len(counts)))

    parts, start = [], 0
    for name, count in zip(names, counts):
        if count < 1:
            raise DataError(f"split '{name}' would be empty ({ds.n} rows, fractions {tuple(fractions)})")
        rows = order[start:start + count]
        parts.append(ds.with_values(ds.values[rows], split=name, split_seed=seed))
        start += count
    return tuple(parts)
