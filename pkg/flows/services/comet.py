"""
End-to-end COMET model: marginal transforms f_m followed by the copula flow f_c.

    log p(x) = sum_i log f_m,i'(x_i) + log c(f_m(x) | sigma = 0)

Training is stage-wise. Stage 1 fits and freezes the d marginals; Stage 2
trains the flow on the transformed data with logit-space noise
sigma * eps, sigma ~ U[0, sigma_max] per sample. Validation runs at sigma = 0
and the checkpoint with the best validation loss is returned.

The RealNVP baseline mode skips the marginals and the noise: columns are
standardized and the same coupling flow (without the logit layer) is trained
on them.
"""

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from django.conf import settings

from cometflows.exceptions import (
    CometError,
    DegenerateDataError,
    DomainError,
    FlowNumericalError,
    InsufficientDataError,
    MarginalFitError,
    ParameterError,
    ShapeError,
    TrainingDivergedError,
)
from flows.services.copula_flow import (
    flow_forward,
    flow_grad,
    flow_inverse,
    flow_layer_logdets,
    flow_log_prob,
    init_flow,
)
from flows.services.nn_core import adam_init, adam_step
from marginals.services.marginal import (
    LOG_DENSITY_FLOOR,
    fit_marginal,
    marginal_inverse,
    marginal_log_density,
    marginal_transform,
)

logger = logging.getLogger(__name__)

MODEL_VERSION = 'comet-v1'
MODE_COMET = 'comet'
MODE_BASELINE = 'realnvp_baseline'
MODES = (MODE_COMET, MODE_BASELINE)
MODE_ALIASES = {'comet': MODE_COMET, 'realnvp': MODE_BASELINE, 'realnvp_baseline': MODE_BASELINE}

MIN_TRAIN_ROWS = 1000


# ============================================
# TRAINING CONFIGURATION
# ============================================

# Config-file / mapping keys -> TrainConfig fields
CONFIG_KEYS = {
    'quantiles': 'quantiles',
    'layers': 'n_layers',
    'n_layers': 'n_layers',
    'hidden': 'hidden',
    'lr': 'lr',
    'learning_rate': 'lr',
    'batch_size': 'batch_size',
    'sigma_max': 'sigma_max',
    'max_epochs': 'max_epochs',
    'patience': 'patience',
    'scale_clamp': 'scale_clamp',
    'seed': 'seed',
    'mode': 'mode',
}


def _check_quantiles(a, b, label='quantiles'):
    if not (0.0 < a < b < 1.0):
        raise ParameterError(f"{label} must satisfy 0 < a < b < 1, got ({a}, {b})")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run. Immutable; use .replace()."""
    quantiles: tuple = (0.05, 0.95)
    column_quantiles: tuple = ()        # ((column name, a, b), ...)
    n_layers: int = 10
    hidden: tuple = (64, 64)
    lr: float = 1e-3
    batch_size: int = 256
    sigma_max: float = 0.3
    max_epochs: int = 100
    patience: int = 2
    scale_clamp: float = 5.0
    seed: int = 0
    mode: str = MODE_COMET

    def __post_init__(self):
        quantiles = tuple(float(q) for q in self.quantiles)
        if len(quantiles) != 2:
            raise ParameterError(f"quantiles must be a pair (a, b), got {self.quantiles}")
        _check_quantiles(*quantiles)
        column_quantiles = tuple((str(name), float(a), float(b)) for name, a, b in self.column_quantiles)
        for name, a, b in column_quantiles:
            _check_quantiles(a, b, label=f"quantiles for column '{name}'")
        mode = MODE_ALIASES.get(str(self.mode))
        if mode is None:
            raise ParameterError(f"unknown mode '{self.mode}'; expected comet or realnvp")
        hidden = tuple(int(h) for h in self.hidden)
        if not hidden or min(hidden) < 1:
            raise ParameterError(f"hidden sizes must be positive, got {self.hidden}")
        if int(self.n_layers) < 2:
            raise ParameterError(f"at least 2 coupling layers are required, got {self.n_layers}")
        if int(self.patience) < 1:
            raise ParameterError(f"patience must be at least 1, got {self.patience}")
        if int(self.batch_size) < 1 or int(self.max_epochs) < 1:
            raise ParameterError("batch_size and max_epochs must be at least 1")
        if not (self.lr > 0 and self.scale_clamp > 0 and self.sigma_max >= 0):
            raise ParameterError("lr and scale_clamp must be positive, sigma_max nonnegative")

        object.__setattr__(self, 'quantiles', quantiles)
        object.__setattr__(self, 'column_quantiles', column_quantiles)
        object.__setattr__(self, 'mode', mode)
        object.__setattr__(self, 'hidden', hidden)
        for name in ('n_layers', 'batch_size', 'max_epochs', 'patience', 'seed'):
            object.__setattr__(self, name, int(getattr(self, name)))
        for name in ('lr', 'sigma_max', 'scale_clamp'):
            object.__setattr__(self, name, float(getattr(self, name)))

    @classmethod
    def from_settings(cls, desk=False, **overrides):
        """
        Defaults from settings.COMET_CONFIG, then keyword overrides.

        desk=True layers settings.COMET_DESK_CONFIG (the smaller architecture
        used on the 20,000-row benchmark split) over COMET_CONFIG.
        """
        conf = dict(getattr(settings, 'COMET_CONFIG', {}))
        if desk:
            conf.update(getattr(settings, 'COMET_DESK_CONFIG', {}))
        values = {
            'quantiles': conf.get('QUANTILES', cls.quantiles),
            'n_layers': conf.get('LAYERS', cls.n_layers),
            'hidden': conf.get('HIDDEN', cls.hidden),
            'lr': conf.get('LEARNING_RATE', cls.lr),
            'batch_size': conf.get('BATCH_SIZE', cls.batch_size),
            'sigma_max': conf.get('SIGMA_MAX', cls.sigma_max),
            'max_epochs': conf.get('MAX_EPOCHS', cls.max_epochs),
            'patience': conf.get('PATIENCE', cls.patience),
            'scale_clamp': conf.get('SCALE_CLAMP', cls.scale_clamp),
            'seed': conf.get('SEED', cls.seed),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def merged(self, mapping):
        """
        New config with values from a key/value mapping (config-file keys).

        Unknown keys raise ParameterError.
        """
        changes = {}
        for key, value in mapping.items():
            name = CONFIG_KEYS.get(key.strip().lower())
            if name is None:
                raise ParameterError(f"unknown config key '{key}'")
            changes[name] = value
        return self.replace(**changes)

    def replace(self, **changes):
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def quantiles_for(self, column):
        for name, a, b in self.column_quantiles:
            if name == column:
                return a, b
        return self.quantiles

    def as_dict(self):
        out = dataclasses.asdict(self)
        out['quantiles'] = list(self.quantiles)
        out['hidden'] = list(self.hidden)
        out['column_quantiles'] = [list(entry) for entry in self.column_quantiles]
        return out

    def config_hash(self):
        canonical = json.dumps(self.as_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]


# ============================================
# TRAINING LOG
# ============================================

@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    best_val_loss: float
    is_best: bool


@dataclass
class TrainingLog:
    mode: str
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def epochs_run(self):
        return len(self.epochs)

    @property
    def best_val_loss(self):
        return self.epochs[self.best_epoch - 1].val_loss if self.best_epoch else math.inf

    def to_frame(self):
        return pd.DataFrame(
            [dataclasses.asdict(e) for e in self.epochs],
            columns=['epoch', 'train_loss', 'val_loss', 'best_val_loss', 'is_best'],
        )

    def write_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format='%.17g', lineterminator='\n')


# ============================================
# MODEL
# ============================================

@dataclass(frozen=True, eq=False)
class CometModel:
    """
    Trained model. marginals is a tuple of MarginalModel in comet mode and
    None in baseline mode; standardization is (mean, std) in baseline mode.
    """
    d: int
    mode: str
    flow: object
    marginals: tuple = None
    standardization: tuple = None
    columns: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"unknown model mode '{self.mode}'")
        if self.flow.d != self.d:
            raise ShapeError(f"flow dimension {self.flow.d} does not match model dimension {self.d}")
        if self.mode == MODE_COMET:
            if self.marginals is None or len(self.marginals) != self.d:
                raise ShapeError("comet mode needs one marginal per dimension")
            object.__setattr__(self, 'marginals', tuple(self.marginals))
        else:
            if self.marginals is not None:
                raise ParameterError("baseline mode carries no marginals")
            if self.standardization is None:
                raise ParameterError("baseline mode needs the training standardization")
            mean, std = (np.asarray(a, dtype=float) for a in self.standardization)
            if mean.shape != (self.d,) or std.shape != (self.d,) or np.any(std <= 0):
                raise ShapeError("standardization must be two length-d vectors with std > 0")
            object.__setattr__(self, 'standardization', (mean, std))
        columns = tuple(self.columns) or tuple(f"x{i + 1}" for i in range(self.d))
        if len(columns) != self.d:
            raise ShapeError(f"{len(columns)} column names for a {self.d}-dimensional model")
        object.__setattr__(self, 'columns', columns)

    @property
    def is_baseline(self):
        return self.mode == MODE_BASELINE

    def log_prob(self, x):
        return log_prob(self, x)

    def sample(self, n, sigma=0.0, rng=None):
        return sample(self, n, sigma, rng)

    def to_latent(self, x, sigma=0.0):
        return to_latent(self, x, sigma)

    def from_latent(self, z, sigma=0.0):
        return from_latent(self, z, sigma)


def _as_rows(x, d):
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ShapeError(f"expected vectors of length {d}, got shape {np.shape(x)}")
    return arr, single


def _transform_columns(marginals, x):
    return np.column_stack([marginal_transform(m, x[:, i]) for i, m in enumerate(marginals)])


def _marginal_log_density_sum(marginals, x):
    return np.sum([marginal_log_density(m, x[:, i]) for i, m in enumerate(marginals)], axis=0)


def _standardize(model, x):
    mean, std = model.standardization
    return (x - mean) / std


def log_prob(model, x):
    """
    Log density at sigma = 0. Accepts one vector or a batch of rows.

    Off-support points (and any non-finite result) get LOG_DENSITY_FLOOR.
    """
    arr, single = _as_rows(x, model.d)
    with np.errstate(invalid='ignore', over='ignore'):
        if model.mode == MODE_COMET:
            u = _transform_columns(model.marginals, arr)
            out = _marginal_log_density_sum(model.marginals, arr) + flow_log_prob(model.flow, u, 0.0)
        else:
            _, std = model.standardization
            out = flow_log_prob(model.flow, _standardize(model, arr), 0.0) - np.log(std).sum()
    out = np.where(np.isfinite(out), out, LOG_DENSITY_FLOOR)
    out = np.maximum(out, LOG_DENSITY_FLOOR)
    return float(out[0]) if single else out


def _check_sigma(sigma):
    if not (np.isfinite(sigma) and sigma >= 0):
        raise DomainError(f"sigma must be finite and nonnegative, got {sigma}")
    return float(sigma)


def from_latent(model, z, sigma=0.0):
    """Generative direction: f_m^-1(f_c^-1(z)) or de-standardization."""
    arr, single = _as_rows(z, model.d)
    h = flow_inverse(model.flow, arr, _check_sigma(sigma))
    if model.mode == MODE_COMET:
        x = np.column_stack([marginal_inverse(m, h[:, i]) for i, m in enumerate(model.marginals)])
    else:
        mean, std = model.standardization
        x = h * std + mean
    return x[0] if single else x


def to_latent(model, x, sigma=0.0):
    """Normalizing direction: f_c(f_m(x)) at the given noise level."""
    arr, single = _as_rows(x, model.d)
    sigma = _check_sigma(sigma)
    if model.mode == MODE_COMET:
        h = _transform_columns(model.marginals, arr)
    else:
        h = _standardize(model, arr)
    z, _ = flow_forward(model.flow, h, sigma)
    return z[0] if single else z


def sample(model, n, sigma=0.0, rng=None):
    """n draws of dimension d; z ~ N(0, I) pushed through the generative direction."""
    if int(n) < 1:
        raise DomainError(f"sample count must be at least 1, got {n}")
    rng = np.random.default_rng() if rng is None else rng
    z = rng.standard_normal((int(n), model.d))
    return from_latent(model, z, sigma)


# ============================================
# FITTING
# ============================================

def _matrix(ds):
    """(values, columns) from a Dataset, DataFrame or plain array."""
    values = np.asarray(getattr(ds, 'values', ds), dtype=float)
    columns = getattr(ds, 'columns', None)
    columns = tuple(columns) if columns is not None else ()
    if values.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {values.shape}")
    if not columns:
        columns = tuple(f"x{i + 1}" for i in range(values.shape[1]))
    return values, tuple(str(c) for c in columns)


def _fit_marginals(train, columns, cfg):
    marginals = []
    for i, name in enumerate(columns):
        a, b = cfg.quantiles_for(name)
        try:
            marginals.append(fit_marginal(train[:, i], a, b, name=name))
        except CometError as exc:
            logger.error(f"[MARGINAL FIT] column {name} failed: {exc}")
            raise MarginalFitError(name, exc) from exc
    return tuple(marginals)


def _baseline_standardization(train, columns):
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    for name, s in zip(columns, std):
        if not s > 0:
            raise DegenerateDataError(f"column '{name}' has zero variance", column=name)
    return mean, std


def _first_bad_layer(flow, batch, sigma):
    """Index of the first coupling layer whose log-determinant is non-finite."""
    try:
        stages = flow_layer_logdets(flow, batch, sigma)
    except FlowNumericalError as exc:
        return exc.layer
    for i, stage in enumerate(stages[1:]):
        if not np.all(np.isfinite(stage)):
            return i
    return None


def fit(train, val, cfg=None, on_epoch=None):
    """
    Train a model; returns (CometModel, TrainingLog).

    on_epoch, when given, is called with each EpochStats as it is produced.
    """
    cfg = cfg or TrainConfig.from_settings()
    x_train, columns = _matrix(train)
    x_val, _ = _matrix(val)
    n, d = x_train.shape
    if x_val.shape[1] != d:
        raise ShapeError(f"train has {d} columns, validation has {x_val.shape[1]}")
    if n < MIN_TRAIN_ROWS:
        raise InsufficientDataError(f"training set has {n} rows, at least {MIN_TRAIN_ROWS} required")
    if x_val.shape[0] < 1:
        raise InsufficientDataError("validation set is empty")

    init_seq, shuffle_seq, noise_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng = np.random.default_rng(init_seq)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    noise_rng = np.random.default_rng(noise_seq)
    comet = cfg.mode == MODE_COMET

    # Stage 1: marginals (fixed from here on) or standardization
    marginals, standardization = None, None
    if comet:
        marginals = _fit_marginals(x_train, columns, cfg)
        u_train = _transform_columns(marginals, x_train)
        u_val = _transform_columns(marginals, x_val)
        train_offset = float(np.mean(_marginal_log_density_sum(marginals, x_train)))
        val_offset = float(np.mean(_marginal_log_density_sum(marginals, x_val)))
    else:
        standardization = _baseline_standardization(x_train, columns)
        mean, std = standardization
        u_train = (x_train - mean) / std
        u_val = (x_val - mean) / std
        train_offset = val_offset = -float(np.log(std).sum())

    # Stage 2: copula flow
    flow = init_flow(
        d, init_rng,
        n_layers=cfg.n_layers,
        hidden=cfg.hidden,
        scale_clamp=cfg.scale_clamp,
        sigma_max=cfg.sigma_max if comet else 0.0,
        logit=comet,
    )
    adam = adam_init(flow.parameters(), lr=cfg.lr)
    logger.info(
        f"[FLOW FIT] mode={cfg.mode} d={d} n_train={n} n_val={x_val.shape[0]} "
        f"layers={cfg.n_layers} hidden={cfg.hidden} batch={cfg.batch_size} seed={cfg.seed}"
    )

    log = TrainingLog(mode=cfg.mode)
    best_flow, best_val, since_best = flow, math.inf, 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for batch_index, start in enumerate(range(0, n, cfg.batch_size)):
            batch = u_train[order[start:start + cfg.batch_size]]
            if comet:
                sigma = noise_rng.uniform(0.0, cfg.sigma_max, size=batch.shape[0])
                noise = noise_rng.standard_normal(batch.shape)
            else:
                sigma, noise = 0.0, None
            try:
                loss, grads = flow_grad(flow, batch, sigma, noise)
            except FlowNumericalError as exc:
                raise TrainingDivergedError(epoch, batch_index, layer=exc.layer, detail=str(exc)) from exc
            if not np.isfinite(loss):
                layer = _first_bad_layer(flow, batch, sigma)
                logger.error(f"[DIVERGED] epoch={epoch} batch={batch_index} layer={layer}")
                raise TrainingDivergedError(epoch, batch_index, layer=layer)
            params, adam = adam_step(flow.parameters(), grads, adam)
            flow = flow.with_parameters(params)
            total += loss * batch.shape[0]

        # train_loss is the noisy objective on the data-space scale of val_loss
        train_loss = total / n - train_offset
        try:
            val_loss = -float(np.mean(flow_log_prob(flow, u_val, 0.0))) - val_offset
        except FlowNumericalError as exc:
            raise TrainingDivergedError(epoch, 'validation', layer=exc.layer, detail=str(exc)) from exc
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(epoch, 'validation', detail="non-finite validation loss")

        is_best = val_loss < best_val
        if is_best:
            best_flow, best_val, since_best = flow, val_loss, 0
            log.best_epoch = epoch
        else:
            since_best += 1
        stats = EpochStats(epoch, train_loss, val_loss, best_val, is_best)
        log.epochs.append(stats)
        logger.info(
            f"[EPOCH] {epoch} train={train_loss:.6f} val={val_loss:.6f} "
            f"best={best_val:.6f}{' *' if is_best else ''}"
        )
        if on_epoch is not None:
            on_epoch(stats)
        if since_best >= cfg.patience:
            log.stopped_early = True
            logger.info(f"[EARLY STOP] epoch {epoch}: no improvement for {since_best} epochs, best epoch {log.best_epoch}")
            break

    model = CometModel(
        d=d,
        mode=cfg.mode,
        flow=best_flow,
        marginals=marginals,
        standardization=standardization,
        columns=columns,
        metadata={
            'version': MODEL_VERSION,
            'seed': cfg.seed,
            'config_hash': cfg.config_hash(),
            'config': cfg.as_dict(),
            'best_epoch': log.best_epoch,
            'best_val_loss': best_val,
            'epochs_run': log.epochs_run,
        },
    )
    return model, log
