"""
Matemática fechada da distribuição t de Student (não normalizada).

    T³ᴰ(x) = [1 + h/ν]^(−(ν+3)/2),  h = (x−μ)ᵀ Σ⁻¹ (x−μ)
    T²ᴰ(u) = [1 + h/ν]^(−(ν+2)/2),  h = (u−μ²ᴰ)ᵀ (Σ²ᴰ)⁻¹ (u−μ²ᴰ)

A projeção segue o EWA: Σ²ᴰ = J W Σ Wᵀ Jᵀ, J a jacobiana 2×3 da perspectiva
avaliada na média em coordenadas de câmera. Não há filtro passa-baixa por
padrão (t convoluída com t não é t).
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .models import Camera, Mixture, TComponent
from .params import covariance_of

logger = logging.getLogger("splats.tmath")

DEFAULT_TAU = 1.0 / 255.0
MIN_RADIUS_PX = 0.3


@dataclass
class Projected2D:
    """Footprint 2D de um componente no plano da imagem."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    nu: float
    cutoff_radius_px: float
    jacobian: Optional[np.ndarray] = None
    camera_point: Optional[np.ndarray] = None


def _log_t_kernel(h, nu, dims: int):
    # log1p evita cancelamento quando h/ν é pequeno (ν grande)
    return -0.5 * (nu + dims) * np.log1p(h / nu)


def density3d(x, mu, sigma, nu: float) -> float:
    """
    Densidade t 3D não normalizada.

    Args:
        x, mu: pontos (3,)
        sigma: covariância 3×3 positiva-definida
        nu: graus de liberdade (≥ 1)

    Returns:
        float em (0, 1]; vale 1 exatamente quando x = μ
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    d = np.asarray(x, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as e:
        raise ValueError(f"Σ singular ou não positiva-definida: {e}") from e
    w = np.linalg.solve(chol, d)
    h = float(w @ w)
    return float(np.exp(_log_t_kernel(h, nu, 3)))


def mahalanobis_cut_sq(nu, tau: float):
    """d² tal que T²ᴰ = τ na distância de Mahalanobis d: ν·(τ^(−2/(ν+2)) − 1)."""
    nu = np.asarray(nu, dtype=np.float64)
    return nu * np.expm1(-2.0 * np.log(tau) / (nu + 2.0))


def _max_eigenvalue_2x2(a, b, c):
    return 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))


def cutoff_radius(nu: float, cov2d, tau: float = DEFAULT_TAU) -> float:
    """
    Raio de truncamento em pixels: d·sqrt(λ_max(Σ²ᴰ)).

    d = sqrt(ν·(τ^(−2/(ν+2)) − 1)) é a distância de Mahalanobis em que a
    densidade 2D (pico 1) cai exatamente para τ.
    """
    cov2d = np.asarray(cov2d, dtype=np.float64)
    d = np.sqrt(mahalanobis_cut_sq(nu, tau))
    return float(d * np.sqrt(_max_eigenvalue_2x2(cov2d[0, 0], cov2d[0, 1], cov2d[1, 1])))


def projection_jacobian(p_cam: np.ndarray, fx: float, fy: float) -> np.ndarray:
    """Jacobiana 2×3 de (fx·x/z + cx, fy·y/z + cy) em p_cam (aceita lotes (..., 3))."""
    x, y, z = p_cam[..., 0], p_cam[..., 1], p_cam[..., 2]
    zero = np.zeros_like(z)
    return np.stack(
        [
            np.stack([fx / z, zero, -fx * x / (z * z)], axis=-1),
            np.stack([zero, fy / z, -fy * y / (z * z)], axis=-1),
        ],
        axis=-2,
    )


def project_component(
    component: TComponent,
    camera: Camera,
    tau: float = DEFAULT_TAU,
    low_pass: float = 0.0,
) -> Optional[Projected2D]:
    """
    Projeta um componente na imagem.

    Returns:
        Projected2D, ou None quando p_z ≤ z_near (fora do frustum)
    """
    p = camera.rotation_wc @ component.position + camera.translation_wc
    if p[2] <= camera.z_near:
        return None

    J = projection_jacobian(p, camera.fx, camera.fy)
    cov_cam = camera.rotation_wc @ covariance_of(component) @ camera.rotation_wc.T
    cov2d = J @ cov_cam @ J.T
    cov2d = 0.5 * (cov2d + cov2d.T) + low_pass * np.eye(2)
    mean2d = np.array([camera.fx * p[0] / p[2] + camera.cx, camera.fy * p[1] / p[2] + camera.cy])
    nu = component.nu

    return Projected2D(
        mean2d=mean2d,
        cov2d=cov2d,
        depth=float(p[2]),
        nu=nu,
        cutoff_radius_px=cutoff_radius(nu, cov2d, tau),
        jacobian=J,
        camera_point=p,
    )


def density2d(u, proj: Projected2D) -> float:
    """Densidade t 2D não normalizada do footprint projetado, expoente −(ν+2)/2."""
    cov = np.asarray(proj.cov2d, dtype=np.float64)
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if not det > 0.0:
        raise ValueError("cov2d singular")
    d = np.asarray(u, dtype=np.float64) - proj.mean2d
    h = float(d @ np.linalg.solve(cov, d))
    return float(np.exp(_log_t_kernel(h, proj.nu, 2)))


def squared_mixture_eval(weights: Sequence[float], densities: Sequence[float]) -> Tuple[float, float]:
    """
    Mistura quadrada (forma de referência, não usada na renderização).

    Returns:
        ((Σ wᵢdᵢ)², Σᵢ Σⱼ wᵢdᵢwⱼdⱼ): a expansão O(K²) com todos os pares
    """
    w = np.asarray(weights, dtype=np.float64)
    d = np.asarray(densities, dtype=np.float64)
    if w.shape != d.shape:
        raise ValueError("weights e densities precisam ter o mesmo tamanho")
    wd = w * d
    squared = float(np.sum(wd)) ** 2
    pairwise = float(np.sum(np.outer(wd, wd)))
    return squared, pairwise


@dataclass
class ProjectedBatch:
    """
    Projeção em lote de uma mistura inteira, com os intermediários que o
    backward reaproveita.
    """

    in_frustum: np.ndarray  # (K,) bool
    valid: np.ndarray  # (K,) bool: no frustum, cov2d PD e raio ≥ MIN_RADIUS_PX
    camera_points: np.ndarray  # (K, 3)
    mean2d: np.ndarray  # (K, 2)
    cov2d: np.ndarray  # (K, 2, 2)
    conic: np.ndarray  # (K, 2, 2) inversa de cov2d
    jacobian: np.ndarray  # (K, 2, 3)
    cov3d: np.ndarray  # (K, 3, 3)
    depth: np.ndarray  # (K,)
    nu: np.ndarray  # (K,)
    cut_sq: np.ndarray  # (K,) d² de truncamento
    radius: np.ndarray  # (K,) pixels

    def component(self, index: int) -> Optional[Projected2D]:
        if not self.in_frustum[index]:
            return None
        return Projected2D(
            mean2d=self.mean2d[index],
            cov2d=self.cov2d[index],
            depth=float(self.depth[index]),
            nu=float(self.nu[index]),
            cutoff_radius_px=float(self.radius[index]),
            jacobian=self.jacobian[index],
            camera_point=self.camera_points[index],
        )


def project_mixture(
    mixture: Mixture,
    camera: Camera,
    tau: float = DEFAULT_TAU,
    low_pass: float = 0.0,
) -> ProjectedBatch:
    """Versão vetorizada de project_component para todos os componentes."""
    k = len(mixture)
    p = camera.to_camera(mixture.positions).reshape(k, 3)
    in_frustum = p[:, 2] > camera.z_near
    z_safe = np.where(in_frustum, p[:, 2], 1.0)
    p_safe = np.concatenate([p[:, :2], z_safe[:, None]], axis=1)

    J = projection_jacobian(p_safe, camera.fx, camera.fy).reshape(k, 2, 3)
    cov3d = mixture.covariances().reshape(k, 3, 3)
    W = camera.rotation_wc
    cov_cam = np.einsum("ij,kjl,ml->kim", W, cov3d, W)
    cov2d = np.einsum("kij,kjl,kml->kim", J, cov_cam, J)
    cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, 1, 2))
    cov2d[:, 0, 0] += low_pass
    cov2d[:, 1, 1] += low_pass

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    pd = det > 0.0
    det_safe = np.where(pd, det, 1.0)
    conic = np.stack(
        [np.stack([c / det_safe, -b / det_safe], axis=-1), np.stack([-b / det_safe, a / det_safe], axis=-1)],
        axis=-2,
    )

    nu = mixture.nus()
    cut_sq = np.asarray(mahalanobis_cut_sq(nu, tau)).reshape(k)
    radius = np.sqrt(cut_sq * np.maximum(_max_eigenvalue_2x2(a, b, c), 0.0))
    mean2d = np.stack([camera.fx * p_safe[:, 0] / z_safe + camera.cx, camera.fy * p_safe[:, 1] / z_safe + camera.cy], axis=-1)

    valid = in_frustum & pd & (radius >= MIN_RADIUS_PX)
    if k and not np.all(valid == in_frustum):
        logger.debug(f"{int(np.sum(in_frustum & ~valid))} componentes descartados pelo guarda de footprint")

    return ProjectedBatch(
        in_frustum=in_frustum,
        valid=valid,
        camera_points=p,
        mean2d=mean2d,
        cov2d=cov2d,
        conic=conic,
        jacobian=J,
        cov3d=cov3d,
        depth=p[:, 2].copy(),
        nu=nu,
        cut_sq=cut_sq,
        radius=radius,
    )
