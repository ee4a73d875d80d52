from django.apps import AppConfig


class MarginalsConfig(AppConfig):
    """
    Univariate machinery: generalized Pareto tails, kernel density centre,
    and the per-column marginal transform built from them.
    """

    default_auto_field = 'django.db.models.BigAutoField'
    name = 'marginals'
    verbose_name = 'Marginal Transforms'
