"""Renderiza as câmeras de uma cena a partir de um checkpoint."""

from django.core.management.base import BaseCommand, CommandError

from apps.scenes.exceptions import SceneError
from apps.scenes.loaders import load_scene
from apps.training.checkpoint import load_checkpoint
from apps.training.trainer import render_views


class Command(BaseCommand):
    help = "Renderiza todas as câmeras da cena (PPM ou PNG) e grava metrics.csv"

    def add_arguments(self, parser):
        parser.add_argument("--ckpt", required=True)
        parser.add_argument("--scene", required=True)
        parser.add_argument("--out", required=True)
        parser.add_argument("--format", choices=["ppm", "png"], default="ppm")

    def handle(self, *args, **options):
        try:
            checkpoint = load_checkpoint(options["ckpt"])
            scene = load_scene(options["scene"])
        except (SceneError, FileNotFoundError, ValueError) as exc:
            raise CommandError(str(exc)) from exc

        try:
            csv_path = render_views(checkpoint, scene.cameras, options["out"], image_format=options["format"])
        except OSError as exc:
            raise CommandError(f"Falha de E/S: {exc}") from exc
        self.stdout.write(self.style.SUCCESS(f"✓ {len(scene.cameras)} vistas, métricas em {csv_path}"))
