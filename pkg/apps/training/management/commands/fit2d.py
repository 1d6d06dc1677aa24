"""Modo brinquedo: ajusta uma única imagem com câmera fronto-paralela fixa."""

from pathlib import Path

from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError

from apps.rendering.rasterizer import render
from apps.scenes.exceptions import SceneError
from apps.scenes.loaders import read_image, write_image
from apps.training.metrics import psnr
from apps.training.trainer import Trainer, TrainingError, fit2d_config, make_fit2d_scene


class Command(BaseCommand):
    help = "Ajusta uma imagem PPM/PNG com N componentes (pipeline completo em 2D)"

    def add_arguments(self, parser):
        parser.add_argument("--image", required=True)
        parser.add_argument("--components", type=int, default=50)
        parser.add_argument("--iters", type=int, default=2000)
        parser.add_argument("--out", required=True)
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--opacity-mode", choices=["signed", "positive"], default="signed")
        parser.add_argument("--nu-init", type=float, default=50.0)
        parser.add_argument("--freeze-nu", action="store_true", help="ν fixo (com --nu-init 10000 vira o caso gaussiano)")

    def handle(self, *args, **options):
        out_dir = Path(options["out"])
        try:
            image = read_image(options["image"])
            config = fit2d_config(
                iterations=options["iters"],
                seed=options["seed"],
                opacity_mode=options["opacity_mode"],
                nu_init=options["nu_init"],
                learn_nu=not options["freeze_nu"],
                small=min(image.shape[:2]) < 11,
            )
            scene = make_fit2d_scene(image, options["components"], seed=options["seed"])
        except (SceneError, ValidationError, ValueError) as exc:
            raise CommandError(str(exc)) from exc

        trainer = Trainer(scene, config, out_dir)
        camera = scene.cameras[0].camera
        initial = psnr(render(trainer.mixture, camera, trainer.options).rgb, image)
        try:
            checkpoint = trainer.run()
        except TrainingError as exc:
            raise CommandError(str(exc)) from exc
        frame = render(checkpoint.mixture, camera, trainer.options)
        final = psnr(frame.rgb, image)
        write_image(out_dir / "fit.ppm", frame.rgb)
        self.stdout.write(self.style.SUCCESS(f"✓ PSNR {initial:.2f} → {final:.2f} dB ({out_dir / 'fit.ppm'})"))

