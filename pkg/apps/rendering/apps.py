from django.apps import AppConfig


class RenderingConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "apps.rendering"
    verbose_name = "Tile Rasterizer"
