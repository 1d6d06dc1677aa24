"""
Objetivo de treino:

    L = (1 − λ_D)·L1 + λ_D·(1 − SSIM) + λ_o·Σ|oᵢ| + λ_Σ·Σᵢ Σⱼ √λᵢⱼ

Os regularizadores têm gradiente analítico em raw_opacity e log_scale.
"""

from dataclasses import asdict, dataclass
from typing import Dict, Tuple

import numpy as np

from apps.splats.models import Mixture
from apps.splats.params import opacity_derivative

from .config import TrainConfig
from .metrics import ssim, ssim_gradient


@dataclass
class LossBreakdown:
    l1: float
    dssim: float
    opacity_reg: float
    sigma_reg: float
    total: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def l1_loss(a: np.ndarray, b: np.ndarray) -> float:
    """Média do erro absoluto sobre pixels e canais."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"Formas diferentes: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def _reduction(mixture: Mixture, config: TrainConfig) -> float:
    if config.regularizer_reduction == "mean" and len(mixture):
        return 1.0 / len(mixture)
    return 1.0


def opacity_regularizer(mixture: Mixture) -> float:
    return float(np.sum(np.abs(mixture.opacities())))


def sigma_regularizer(mixture: Mixture) -> float:
    """Σᵢ Σⱼ √λᵢⱼ sobre os autovalores de cada Σᵢ."""
    if len(mixture) == 0:
        return 0.0
    eigenvalues = np.linalg.eigvalsh(mixture.covariances())
    return float(np.sum(np.sqrt(np.maximum(eigenvalues, 0.0))))


def total_loss(render: np.ndarray, target: np.ndarray, mixture: Mixture, config: TrainConfig) -> LossBreakdown:
    """
    Avalia a loss completa.

    D-SSIM só é calculado quando λ_D > 0 (imagens menores que a janela
    SSIM podem ser treinadas com λ_D = 0).
    """
    l1 = l1_loss(render, target)
    dssim = 1.0 - ssim(render, target) if config.lambda_dssim > 0.0 else 0.0
    scale = _reduction(mixture, config)
    opacity_reg = scale * opacity_regularizer(mixture)
    sigma_reg = scale * sigma_regularizer(mixture)
    total = (
        (1.0 - config.lambda_dssim) * l1
        + config.lambda_dssim * dssim
        + config.lambda_opacity * opacity_reg
        + config.lambda_sigma * sigma_reg
    )
    return LossBreakdown(l1=l1, dssim=dssim, opacity_reg=opacity_reg, sigma_reg=sigma_reg, total=total)


def loss_image_gradient(render: np.ndarray, target: np.ndarray, config: TrainConfig) -> np.ndarray:
    """∂L/∂render para os termos de imagem (L1 e D-SSIM)."""
    render = np.asarray(render, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if render.shape != target.shape:
        raise ValueError(f"Formas diferentes: {render.shape} vs {target.shape}")
    grad = (1.0 - config.lambda_dssim) * np.sign(render - target) / render.size
    if config.lambda_dssim > 0.0:
        grad -= config.lambda_dssim * ssim_gradient(render, target)
    return grad


def regularizer_grads(mixture: Mixture, config: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradientes dos regularizadores.

    Returns:
        (d_raw_opacity (K,), d_log_scale (K, 3)); √λ de Σ = R S² Rᵀ é exp(log_scale)
    """
    scale = _reduction(mixture, config)
    o = mixture.opacities()
    d_raw_opacity = (
        config.lambda_opacity * scale * np.sign(o) * opacity_derivative(mixture.raw_opacity, mixture.opacity_mode)
    )
    d_log_scale = config.lambda_sigma * scale * np.exp(mixture.log_scales)
    return np.asarray(d_raw_opacity).reshape(-1), d_log_scale
