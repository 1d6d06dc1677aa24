"""Mede PSNR/SSIM de um checkpoint nas câmeras de teste (ou em todas, se não houver split de teste)."""

import math

from django.core.management.base import BaseCommand, CommandError

from apps.scenes.exceptions import SceneError
from apps.scenes.loaders import load_scene
from apps.training.checkpoint import load_checkpoint
from apps.training.trainer import evaluate_views


class Command(BaseCommand):
    help = "Imprime PSNR/SSIM por vista e a média"

    def add_arguments(self, parser):
        parser.add_argument("--ckpt", required=True)
        parser.add_argument("--scene", required=True)

    def handle(self, *args, **options):
        try:
            checkpoint = load_checkpoint(options["ckpt"])
            scene = load_scene(options["scene"])
        except (SceneError, FileNotFoundError, ValueError) as exc:
            raise CommandError(str(exc)) from exc

        views = scene.test_cameras or scene.cameras
        rows = evaluate_views(checkpoint.mixture, views)
        for row in rows:
            self.stdout.write(f"{row['view']:>4}  {row['image']:<24} psnr={row['psnr']:.3f}  ssim={row['ssim']:.4f}")
        psnrs = [row["psnr"] for row in rows]
        ssims = [row["ssim"] for row in rows]
        mean_psnr = sum(psnrs) / len(psnrs) if psnrs else math.nan
        mean_ssim = sum(ssims) / len(ssims) if ssims else math.nan
        self.stdout.write(self.style.SUCCESS(f"média  psnr={mean_psnr:.3f}  ssim={mean_ssim:.4f}"))
