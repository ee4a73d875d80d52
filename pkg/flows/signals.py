from django.db.models.signals import post_save
from django.dispatch import receiver
from .models import TrainingRun
import logging

logger = logging.getLogger(__name__)


# ============================================
# TRAINING RUN SIGNALS
# ============================================

@receiver(post_save, sender=TrainingRun)
def training_run_post_save(sender, instance, created, **kwargs):
    """Log run creation and status transitions."""
    if created:
        logger.info(
            f"Training run created: #{instance.pk} {instance.mode} "
            f"quantiles=({instance.quantile_a}, {instance.quantile_b}) seed={instance.seed}"
        )
    elif instance.status == 'completed':
        logger.info(
            f"Training run #{instance.pk} completed: best epoch {instance.best_epoch}, "
            f"val loss {instance.best_val_loss}, {instance.epochs_run} epochs"
        )
    elif instance.status == 'failed':
        logger.warning(f"Training run #{instance.pk} failed: {instance.error_message}")
