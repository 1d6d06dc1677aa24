"""Gradientes por diferenças centrais, em dupla precisão."""

from typing import Callable, Optional, Sequence

import numpy as np

from apps.splats.models import Mixture

MIXTURE_GROUPS = ("positions", "log_scales", "rotations", "sh", "raw_opacity", "raw_nu")


def default_step(theta: float) -> float:
    return 1e-6 * max(1.0, abs(theta))


def finite_diff(
    loss: Callable[[np.ndarray], float],
    theta: np.ndarray,
    step: Callable[[float], float] = default_step,
    indices: Optional[Sequence[int]] = None,
    richardson: bool = False,
) -> np.ndarray:
    """
    ∂loss/∂θ por diferenças centrais, um elemento de cada vez.

    Args:
        loss: função do vetor/tensor θ
        indices: subconjunto de índices planos a avaliar (o resto fica 0)
        richardson: combina passos h e h/2 para cancelar o termo O(h²)
    """
    theta = np.asarray(theta, dtype=np.float64)
    flat = theta.reshape(-1)
    grad = np.zeros_like(flat)
    for j in range(flat.size) if indices is None else indices:
        h = step(flat[j])

        def central(h: float) -> float:
            plus = flat.copy()
            minus = flat.copy()
            plus[j] += h
            minus[j] -= h
            return (loss(plus.reshape(theta.shape)) - loss(minus.reshape(theta.shape))) / (2.0 * h)

        estimate = central(h)
        if richardson:
            estimate = (4.0 * central(0.5 * h) - estimate) / 3.0
        grad[j] = estimate
    return grad.reshape(theta.shape)


def finite_diff_mixture(
    loss: Callable[[Mixture], float],
    mixture: Mixture,
    group: str,
    step: Callable[[float], float] = default_step,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Diferenças centrais de `loss(mixture)` sobre um grupo de parâmetros brutos."""
    if group not in MIXTURE_GROUPS:
        raise ValueError(f"Grupo desconhecido: {group}")

    def perturbed(values: np.ndarray) -> float:
        candidate = mixture.copy()
        setattr(candidate, group, values)
        return loss(candidate)

    return finite_diff(perturbed, getattr(mixture, group), step, indices)
