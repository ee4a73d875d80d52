from django.contrib import admin
from .models import EvaluationRecord


@admin.register(EvaluationRecord)
class EvaluationRecordAdmin(admin.ModelAdmin):
    list_display = ('id', 'mode', 'avg_nll', 'sample_count', 'test_path', 'created_at')
    list_filter = ('mode',)
    search_fields = ('model_path', 'test_path')
    readonly_fields = ('created_at', 'report')
