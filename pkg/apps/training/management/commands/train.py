"""Treina uma cena: python manage.py train --scene cena.json --out runs/x"""

import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError

from apps.scenes.exceptions import SceneError
from apps.scenes.loaders import load_scene
from apps.training.config import TrainConfig
from apps.training.trainer import TrainingError, train

logger = logging.getLogger("training.loop")

NU_GRAD_CHOICES = {"full": "full", "paper": "partial", "partial": "partial"}


class Command(BaseCommand):
    help = "Treina uma mistura de t com sinal (splatting + scooping) sobre uma cena"

    def add_arguments(self, parser):
        parser.add_argument("--scene", required=True, help="Descritor JSON da cena")
        parser.add_argument("--out", default=None, help="Diretório de saída (checkpoints e metrics.csv)")
        parser.add_argument("--iters", type=int, default=30000)
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--max-components", type=int, default=1_000_000)
        parser.add_argument("--burn-in-frac", type=float, default=0.5)
        parser.add_argument("--gate-t", type=float, default=0.005)
        parser.add_argument(
            "--nu-grad",
            choices=list(NU_GRAD_CHOICES),
            default="full",
            help="full: ∂T/∂ν completo; paper (ou partial): só o segundo termo",
        )
        parser.add_argument("--sampler", choices=["sghmc", "adam"], default="sghmc")
        parser.add_argument("--opacity-mode", choices=["signed", "positive"], default="signed")

    def handle(self, *args, **options):
        out_dir = Path(options["out"] or Path(settings.TSPLAT_OUTPUT_DIR) / Path(options["scene"]).stem)
        try:
            config = TrainConfig(
                iterations=options["iters"],
                seed=options["seed"],
                max_components=options["max_components"],
                burn_in_frac=options["burn_in_frac"],
                gate_t=options["gate_t"],
                nu_grad=NU_GRAD_CHOICES[options["nu_grad"]],
                sampler=options["sampler"],
                opacity_mode=options["opacity_mode"],
            )
            scene = load_scene(options["scene"])
        except ValidationError as exc:
            raise CommandError(f"Configuração inválida: {exc}") from exc
        except SceneError as exc:
            raise CommandError(f"Cena inválida: {exc}") from exc

        try:
            checkpoint = train(scene, config, out_dir)
        except TrainingError as exc:
            raise CommandError(str(exc)) from exc

        self.stdout.write(
            self.style.SUCCESS(
                f"✓ {checkpoint.iteration} iterações, {len(checkpoint.mixture)} componentes → {out_dir / 'checkpoint.json'}"
            )
        )
