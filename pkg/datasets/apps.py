from django.apps import AppConfig


class DatasetsConfig(AppConfig):
    """
    Configuration for the Datasets application.

    Synthetic data generation, CSV reading/writing, standardization and
    train/validation/test splitting. No database models.
    """

    default_auto_field = 'django.db.models.BigAutoField'
    name = 'datasets'
    verbose_name = 'Datasets'
