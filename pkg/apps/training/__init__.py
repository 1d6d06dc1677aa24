from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .lifecycle import (
    RelocationPlan,
    add_components,
    choose_targets,
    compute_K,
    find_dead,
    new_opacity,
    plan_relocation,
    relocate,
)
from .losses import LossBreakdown, l1_loss, loss_image_gradient, regularizer_grads, total_loss
from .metrics import psnr, ssim
from .sampler import SamplerState, adam_step, gate, lr_schedule, sghmc_step_positions
from .trainer import Trainer, TrainingError, init_mixture, make_fit2d_scene, render_views, train

__all__ = [
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "TrainConfig",
    "RelocationPlan",
    "add_components",
    "choose_targets",
    "compute_K",
    "find_dead",
    "new_opacity",
    "plan_relocation",
    "relocate",
    "LossBreakdown",
    "l1_loss",
    "loss_image_gradient",
    "regularizer_grads",
    "total_loss",
    "psnr",
    "ssim",
    "SamplerState",
    "adam_step",
    "gate",
    "lr_schedule",
    "sghmc_step_positions",
    "Trainer",
    "TrainingError",
    "init_mixture",
    "make_fit2d_scene",
    "render_views",
    "train",
]
