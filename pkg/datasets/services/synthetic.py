"""
Eight-dimensional heavy-tail benchmark.

Every row starts as a uniform draw on [0, 1]^8. Each of the pairs below
independently enters its extreme regime with probability 0.05, using one
GP(0, 1, 1) excess g shared by both coordinates of the pair:

    (x1, x2)  ->  1 + g                 upper tail
    (x3, x4)  ->  -g                    lower tail
    (x5, x6)  ->  1 + g or -g           both tails, fair coin

x8 is always a copy of x7, and x7 itself becomes 1 + g or -g (fair coin) with
probability 0.05.
"""

import logging

import numpy as np
from scipy import stats

from cometflows.exceptions import DomainError
from datasets.services.tabular import Dataset, SPLIT_NAMES, default_columns

logger = logging.getLogger(__name__)

N_DIMS = 8
EXTREME_PROB = 0.05
GP_PARAMS = {'loc': 0.0, 'scale': 1.0, 'c': 1.0}   # (mu, sigma, xi) = (0, 1, 1)

STANDARD_SIZES = (200_000, 25_000, 25_000)
DESK_SIZES = (20_000, 2_500, 2_500)
SPLIT_SIZES = {'full': STANDARD_SIZES, 'desk': DESK_SIZES}


def gen_synthetic(n, seed, split='', **provenance):
    """n rows of the benchmark; bit-identical for the same seed."""
    n = int(n)
    if n < 1:
        raise DomainError(f"row count must be at least 1, got {n}")
    rng = np.random.default_rng(seed)

    x = rng.uniform(0.0, 1.0, size=(n, N_DIMS))
    extreme = rng.uniform(size=(n, 4)) < EXTREME_PROB
    excess = stats.genpareto.rvs(size=(n, 4), random_state=rng, **GP_PARAMS)
    upper = rng.uniform(size=(n, 4)) < 0.5

    up = 1.0 + excess
    down = -excess
    both = np.where(upper, up, down)

    rows = extreme[:, 0]
    x[rows, 0] = x[rows, 1] = up[rows, 0]
    rows = extreme[:, 1]
    x[rows, 2] = x[rows, 3] = down[rows, 1]
    rows = extreme[:, 2]
    x[rows, 4] = x[rows, 5] = both[rows, 2]
    rows = extreme[:, 3]
    x[rows, 6] = both[rows, 3]
    x[:, 7] = x[:, 6]

    logger.debug(f"[SYNTH] n={n} extreme rows per pair={extreme.sum(axis=0).tolist()}")
    return Dataset(
        x,
        default_columns(N_DIMS),
        split=split,
        provenance={'generator': 'synthetic', **provenance},
    )


def standard_splits(seed, sizes=STANDARD_SIZES):
    """
    Train / validation / test sets from three independent sub-seeds of seed.

    sizes defaults to (200000, 25000, 25000); DESK_SIZES is the scaled-down
    variant.
    """
    streams = np.random.SeedSequence(int(seed)).spawn(len(SPLIT_NAMES))
    splits = tuple(
        gen_synthetic(size, stream, split=name, base_seed=int(seed), stream=i)
        for i, (name, size, stream) in enumerate(zip(SPLIT_NAMES, sizes, streams))
    )
    logger.info(f"[SYNTH] splits seed={seed} sizes={tuple(int(s) for s in sizes)}")
    return splits
