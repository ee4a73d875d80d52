from django.apps import AppConfig


class FlowsConfig(AppConfig):
    """
    Configuration for the Flows application.

    This app manages:
    - Affine coupling flows conditioned on the noise level sigma
    - The end-to-end COMET model and its RealNVP baseline mode
    - Model files (save / load with checksum)
    - Training runs and per-epoch losses (run registry)
    """

    default_auto_field = 'django.db.models.BigAutoField'
    name = 'flows'
    verbose_name = 'Copula Flows'

    def ready(self):
        """Import signal handlers (run status logging)."""
        import flows.signals  # noqa: F401
