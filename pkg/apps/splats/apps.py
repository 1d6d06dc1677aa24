from django.apps import AppConfig


class SplatsConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "apps.splats"
    verbose_name = "Student's t Mixture Core"
