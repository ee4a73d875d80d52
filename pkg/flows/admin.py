from django.contrib import admin
from .models import TrainingRun, EpochRecord


# ============================================
# INLINES
# ============================================

class EpochRecordInline(admin.TabularInline):
    model = EpochRecord
    extra = 0
    can_delete = False
    fields = ('epoch', 'train_loss', 'val_loss', 'is_best')
    readonly_fields = fields


# ============================================
# TRAINING RUN ADMIN
# ============================================

@admin.register(TrainingRun)
class TrainingRunAdmin(admin.ModelAdmin):
    list_display = (
        'id', 'mode', 'quantile_a', 'quantile_b', 'seed', 'status',
        'best_epoch', 'best_val_loss', 'epochs_run', 'started_at',
    )
    list_filter = ('mode', 'status')
    search_fields = ('config_hash', 'model_path', 'train_path')
    readonly_fields = ('started_at', 'finished_at', 'config_hash', 'config')
    inlines = [EpochRecordInline]

    fieldsets = (
        ('Run', {
            'fields': ('mode', 'dimension', 'quantile_a', 'quantile_b', 'seed', 'config_hash', 'config')
        }),
        ('Files', {
            'fields': ('train_path', 'val_path', 'model_path')
        }),
        ('Outcome', {
            'fields': ('status', 'best_epoch', 'best_val_loss', 'epochs_run', 'error_message',
                       'started_at', 'finished_at')
        }),
    )


@admin.register(EpochRecord)
class EpochRecordAdmin(admin.ModelAdmin):
    list_display = ('run', 'epoch', 'train_loss', 'val_loss', 'is_best')
    list_filter = ('is_best',)
