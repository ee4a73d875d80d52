from django.db import models


class EvaluationRecord(models.Model):
    """One invocation of the eval command."""
    model_path = models.CharField(max_length=500)
    test_path = models.CharField(max_length=500)
    mode = models.CharField(max_length=20)
    avg_nll = models.FloatField()
    sample_count = models.PositiveIntegerField()
    report = models.JSONField(default=dict)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at']
        verbose_name = 'Evaluation'
        verbose_name_plural = 'Evaluations'

    def __str__(self):
        return f"{self.mode} on {self.test_path}: NLL {self.avg_nll:.4f}"
