"""
Laço de treino e avaliação.

Cada passo: renderiza uma câmera de treino → loss → backward → SGHMC nas
posições + Adam no resto. A cada `relocate_every` iterações recicla
componentes mortos e acrescenta novos até o máximo configurado.
"""

import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from apps.rendering.backward import render_backward
from apps.rendering.rasterizer import RenderOptions, render
from apps.scenes.loaders import write_image
from apps.scenes.models import SceneCamera, SceneSpec
from apps.splats.models import Camera, Mixture, sh_coeff_count
from apps.splats.params import NU_MAX, nu_inverse, opacity_inverse
from apps.splats.sh import rgb_to_sh0

from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig
from .lifecycle import add_components, recycle
from .losses import loss_image_gradient, regularizer_grads, total_loss
from .metrics import psnr, ssim
from .sampler import SamplerState, adam_step, lr_schedule, sghmc_step_positions

logger = logging.getLogger("training.loop")

METRIC_FIELDS = ["iteration", "loss", "l1", "dssim", "psnr", "components", "epsilon"]


class TrainingError(RuntimeError):
    """Falha dentro de um passo de treino, com a iteração em que ocorreu."""

    def __init__(self, iteration: int, message: str):
        super().__init__(f"Iteração {iteration}: {message}")
        self.iteration = iteration


def raw_nu_for(nu: float) -> float:
    return NU_MAX if nu >= NU_MAX else nu_inverse(nu)


def init_mixture(scene: SceneSpec, config: TrainConfig) -> Mixture:
    """
    Um componente por ponto inicial.

    Escala isotrópica = distância média aos 3 vizinhos mais próximos; com
    um único ponto (ou vizinhos coincidentes) usa 1% da extensão da cena.
    """
    points = np.asarray(scene.points, dtype=np.float64).reshape(-1, 3)
    count = len(points)
    if count == 0:
        raise ValueError("Nuvem de pontos vazia")

    fallback = 0.01 * scene.extent
    if count == 1:
        distances = np.array([fallback])
    else:
        neighbours = min(3, count - 1)
        dist, _ = cKDTree(points).query(points, k=neighbours + 1)
        distances = np.mean(np.asarray(dist).reshape(count, -1)[:, 1:], axis=1)
        distances = np.where(distances > 0.0, distances, fallback)

    colors = scene.colors if scene.colors is not None else np.full((count, 3), 0.5)
    sh = np.zeros((count, sh_coeff_count(config.sh_degree_max), 3))
    sh[:, 0] = rgb_to_sh0(colors)

    rotations = np.zeros((count, 4))
    rotations[:, 0] = 1.0
    mixture = Mixture(
        positions=points.copy(),
        log_scales=np.repeat(np.log(distances)[:, None], 3, axis=1),
        rotations=rotations,
        raw_nu=np.full(count, raw_nu_for(config.nu_init)),
        raw_opacity=np.full(count, opacity_inverse(config.opacity_init, config.opacity_mode)),
        sh=sh,
        sh_degree=0,
        background=config.background,
        opacity_mode=config.opacity_mode,
    )
    logger.info(f"Mistura inicial com {count} componentes (escala média {np.mean(distances):.4g})")
    return mixture


class Trainer:
    """Orquestra o treino de uma cena; o estado completo vive em `mixture` e `state`."""

    def __init__(
        self,
        scene: SceneSpec,
        config: TrainConfig,
        out_dir: Optional[Union[str, Path]] = None,
        mixture: Optional[Mixture] = None,
    ):
        if not scene.train_cameras:
            raise ValueError("A cena não tem câmeras de treino")
        self.scene = scene
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.mixture = mixture if mixture is not None else init_mixture(scene, config)
        self.state = SamplerState.create(self.mixture, config, lr_schedule(0, config, scene.extent))
        self.options = RenderOptions(
            tile_size=config.tile_size,
            tau=config.tau,
            transmittance_floor=config.transmittance_floor,
            low_pass=config.low_pass,
        )
        self.metric_log: List[Dict] = []
        self.iteration = 0
        self._order: List[int] = []

    def _next_camera(self) -> SceneCamera:
        cameras = self.scene.train_cameras
        if not self._order:
            self._order = self.state.rng.permutation(len(cameras)).tolist()
        return cameras[self._order.pop(0)]

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            mixture=self.mixture.copy(),
            state=self.state,
            iteration=self.iteration,
            config_hash=self.config.config_hash(),
            config=self.config.model_dump(mode="json"),
        )

    def step(self) -> Dict:
        """Um passo de otimização; devolve a linha de métricas do passo."""
        config = self.config
        view = self._next_camera()
        epsilon = lr_schedule(self.iteration, config, self.scene.extent)
        self.state.epsilon = epsilon

        frame = render(self.mixture, view.camera, self.options)
        breakdown = total_loss(frame.rgb, view.image, self.mixture, config)
        d_image = loss_image_gradient(frame.rgb, view.image, config)
        grads = render_backward(
            self.mixture, view.camera, d_image, frame, nu_grad=config.nu_grad, learn_nu=config.learn_nu
        )
        d_raw_opacity, d_log_scale = regularizer_grads(self.mixture, config)
        grads.d_raw_opacity += d_raw_opacity
        grads.d_log_scale += d_log_scale
        if not grads.is_finite():
            raise TrainingError(self.iteration, "gradientes não finitos")

        if config.sampler == "sghmc":
            sghmc_step_positions(self.state, self.mixture, grads.d_position, config)
            adam_step(self.state, self.mixture, grads, config)
        else:
            groups = ["position", "log_scale", "rotation", "sh", "raw_opacity"]
            if config.learn_nu:
                groups.append("raw_nu")
            adam_step(self.state, self.mixture, grads, config, groups=groups, position_lr=epsilon)

        return {
            "iteration": self.iteration,
            "loss": breakdown.total,
            "l1": breakdown.l1,
            "dssim": breakdown.dssim,
            "psnr": psnr(frame.rgb, view.image),
            "components": len(self.mixture),
            "epsilon": epsilon,
        }

    def _lifecycle(self):
        config = self.config
        if self.iteration % config.relocate_every or self.iteration > config.relocation_stop:
            return
        recycle(self.mixture, self.state.rng, self.state, config.dead_threshold, config.relocate_cap)
        if len(self.mixture) < config.max_components and config.add_fraction > 0.0:
            add_components(
                self.mixture, config.add_fraction, self.state.rng, config.max_components, self.state, config.dead_threshold
            )

    def run(self) -> Checkpoint:
        config = self.config
        logger.info(
            f"Treino: {config.iterations} iterações, {len(self.mixture)} componentes, "
            f"burn-in até {self.state.burn_in_until}, amostrador {config.sampler}"
        )
        while self.iteration < config.iterations:
            try:
                row = self.step()
                self.iteration += 1
                self.state.iteration = self.iteration
                if self.iteration % config.sh_up_every == 0:
                    self.mixture.sh_degree = min(self.mixture.sh_degree + 1, self.mixture.max_sh_degree)
                self._lifecycle()
            except TrainingError:
                raise
            except Exception as exc:
                logger.error(f"Falha na iteração {self.iteration}: {exc}", exc_info=True)
                raise TrainingError(self.iteration, str(exc)) from exc

            if row["iteration"] % config.log_every == 0 or self.iteration == config.iterations:
                self.metric_log.append(row)
                logger.info(
                    f"[{row['iteration']}] loss={row['loss']:.5f} l1={row['l1']:.5f} "
                    f"psnr={row['psnr']:.2f} K={row['components']}"
                )
            if self.out_dir and config.checkpoint_every and self.iteration % config.checkpoint_every == 0:
                save_checkpoint(self.out_dir / f"checkpoint_{self.iteration:06d}.json", self.checkpoint())

        final = self.checkpoint()
        if self.out_dir:
            save_checkpoint(self.out_dir / "checkpoint.json", final)
            write_metric_log(self.out_dir / "metrics.csv", self.metric_log)
        return final


def train(scene: SceneSpec, config: TrainConfig, out_dir: Optional[Union[str, Path]] = None) -> Checkpoint:
    """Treina a cena do zero e devolve o checkpoint final."""
    return Trainer(scene, config, out_dir).run()


def write_metric_log(path: Union[str, Path], rows: Sequence[Dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: repr(row[key]) if isinstance(row[key], float) else row[key] for key in METRIC_FIELDS})
    return path


def evaluate_views(mixture: Mixture, views: Sequence[SceneCamera], options: Optional[RenderOptions] = None) -> List[Dict]:
    """Renderiza cada vista e mede PSNR/SSIM contra a imagem alvo."""
    rows = []
    for index, view in enumerate(views):
        frame = render(mixture, view.camera, options)
        row = {"view": index, "image": Path(view.image_path).name if view.image_path else "", "frame": frame}
        if view.image is not None:
            row["psnr"] = psnr(frame.rgb, view.image)
            try:
                row["ssim"] = ssim(frame.rgb, view.image)
            except ValueError:
                logger.warning(f"Vista {index} menor que a janela SSIM; SSIM omitido")
                row["ssim"] = float("nan")
        rows.append(row)
    return rows


def render_views(
    checkpoint: Checkpoint,
    views: Sequence[SceneCamera],
    out_dir: Union[str, Path],
    image_format: str = "ppm",
    options: Optional[RenderOptions] = None,
) -> Path:
    """
    Grava uma imagem por câmera e `metrics.csv` com PSNR/SSIM por vista e a média.

    Returns:
        caminho do CSV
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = evaluate_views(checkpoint.mixture, views, options)
    for row in rows:
        write_image(out_dir / f"view_{row['view']:03d}.{image_format}", row["frame"].rgb)

    csv_path = out_dir / "metrics.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["view", "image", "psnr", "ssim"])
        for row in rows:
            writer.writerow([row["view"], row["image"], row.get("psnr", float("nan")), row.get("ssim", float("nan"))])
        psnrs = [row.get("psnr", float("nan")) for row in rows]
        ssims = [row.get("ssim", float("nan")) for row in rows]
        writer.writerow(
            ["mean", "", float(np.mean(psnrs)) if rows else float("nan"), float(np.mean(ssims)) if rows else float("nan")]
        )
    logger.info(f"{len(rows)} vistas renderizadas em {out_dir}")
    return csv_path


def make_fit2d_scene(image: np.ndarray, n_components: int, seed: int = 0) -> SceneSpec:
    """
    Cena de imagem única: câmera fronto-paralela na origem olhando para +z e
    pontos aleatórios no plano z = 1, coloridos pelo pixel onde projetam.
    """
    image = np.asarray(image, dtype=np.float64)
    height, width = image.shape[:2]
    if n_components < 1:
        raise ValueError("fit2d exige ao menos um componente")
    camera = Camera.fronto_parallel(width, height)
    rng = np.random.default_rng(seed)
    half_x = 0.5
    half_y = 0.5 * height / width
    points = np.stack(
        [
            rng.uniform(-half_x, half_x, n_components),
            rng.uniform(-half_y, half_y, n_components),
            np.ones(n_components),
        ],
        axis=1,
    )
    px = np.clip(np.floor(camera.fx * points[:, 0] + camera.cx).astype(int), 0, width - 1)
    py = np.clip(np.floor(camera.fy * points[:, 1] + camera.cy).astype(int), 0, height - 1)
    colors = image[py, px, :3]
    return SceneSpec(
        cameras=[SceneCamera(camera=camera, image=image, image_path="", split="train")],
        points=points,
        colors=colors,
        extent=1.0,
    )


def fit2d_config(iterations: int, seed: int = 0, small: bool = False, **overrides) -> TrainConfig:
    """
    Configuração do modo 2D: só SH de grau 0, regularizadores pela média e
    sem acréscimo de componentes. `small` desliga D-SSIM para imagens
    menores que a janela.
    """
    values = dict(
        iterations=iterations,
        seed=seed,
        sh_degree_max=0,
        checkpoint_every=0,
        log_every=max(1, iterations // 20) if iterations else 1,
        relocate_every=100,
        add_fraction=0.0,
        regularizer_reduction="mean",
        lambda_dssim=0.0 if small else 0.2,
        position_lr_init=1.6e-3,
    )
    values.update(overrides)
    return TrainConfig(**values)
