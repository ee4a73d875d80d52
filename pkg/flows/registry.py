"""
Best-effort run registry.

Every helper swallows database errors with a warning, so an unmigrated or
unreachable database never stops a command from writing its files.
"""

import logging
import math

from django.db import DatabaseError
from django.utils import timezone

from .models import EpochRecord, TrainingRun

logger = logging.getLogger(__name__)


def _finite_or_none(value):
    return value if value is not None and math.isfinite(value) else None


def start_run(cfg, train_path, val_path, model_path, dimension=None):
    try:
        a, b = cfg.quantiles
        return TrainingRun.objects.create(
            mode=cfg.mode,
            dimension=dimension,
            quantile_a=a,
            quantile_b=b,
            seed=cfg.seed,
            config_hash=cfg.config_hash(),
            config=cfg.as_dict(),
            train_path=str(train_path),
            val_path=str(val_path),
            model_path=str(model_path),
        )
    except DatabaseError as exc:
        logger.warning(f"[REGISTRY] run not recorded: {exc}")
        return None


def record_epoch(run, stats):
    if run is None:
        return
    try:
        EpochRecord.objects.create(
            run=run,
            epoch=stats.epoch,
            train_loss=stats.train_loss,
            val_loss=stats.val_loss,
            is_best=stats.is_best,
        )
    except DatabaseError as exc:
        logger.warning(f"[REGISTRY] epoch {stats.epoch} not recorded: {exc}")


def complete_run(run, model, log):
    if run is None:
        return
    try:
        run.status = 'completed'
        run.dimension = model.d
        run.best_epoch = log.best_epoch
        run.best_val_loss = _finite_or_none(log.best_val_loss)
        run.epochs_run = log.epochs_run
        run.finished_at = timezone.now()
        run.save()
    except DatabaseError as exc:
        logger.warning(f"[REGISTRY] run #{run.pk} completion not recorded: {exc}")


def fail_run(run, error):
    if run is None:
        return
    try:
        run.status = 'failed'
        run.error_message = str(error)
        run.finished_at = timezone.now()
        run.save()
    except DatabaseError as exc:
        logger.warning(f"[REGISTRY] run #{run.pk} failure not recorded: {exc}")
