# ====================================
# FLOWS IMPORTS
# ====================================
from django.db import models
import logging


logger = logging.getLogger(__name__)


# ====================================
# TRAINING RUN MODEL
# ====================================

class TrainingRun(models.Model):
    """
    One invocation of the train command.

    Written best-effort: model files never depend on these rows.
    """

    STATUS_CHOICES = [
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    MODE_CHOICES = [
        ('comet', 'COMET'),
        ('realnvp_baseline', 'RealNVP baseline'),
    ]

    mode = models.CharField(max_length=20, choices=MODE_CHOICES, default='comet')
    dimension = models.PositiveIntegerField(null=True, blank=True)
    quantile_a = models.FloatField()
    quantile_b = models.FloatField()
    seed = models.BigIntegerField(default=0)
    config_hash = models.CharField(max_length=16, db_index=True)
    config = models.JSONField(default=dict, help_text="Full training configuration")

    train_path = models.CharField(max_length=500)
    val_path = models.CharField(max_length=500)
    model_path = models.CharField(max_length=500)

    status = models.CharField(max_length=10, choices=STATUS_CHOICES, default='running')
    best_epoch = models.PositiveIntegerField(null=True, blank=True)
    best_val_loss = models.FloatField(null=True, blank=True)
    epochs_run = models.PositiveIntegerField(default=0)
    error_message = models.TextField(blank=True)

    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-started_at']
        verbose_name = 'Training Run'
        verbose_name_plural = 'Training Runs'

    def __str__(self):
        return f"Run #{self.pk} {self.get_mode_display()} ({self.quantile_a}, {self.quantile_b}) - {self.status}"

    @property
    def is_finished(self):
        return self.status in ('completed', 'failed')


# ====================================
# EPOCH RECORD MODEL
# ====================================

class EpochRecord(models.Model):
    """Train/validation loss of one epoch."""
    run = models.ForeignKey(TrainingRun, on_delete=models.CASCADE, related_name='epochs')
    epoch = models.PositiveIntegerField()
    train_loss = models.FloatField()
    val_loss = models.FloatField()
    is_best = models.BooleanField(default=False)

    class Meta:
        ordering = ['run', 'epoch']
        unique_together = [('run', 'epoch')]

    def __str__(self):
        return f"Run #{self.run_id} epoch {self.epoch}: val {self.val_loss:.4f}"
