"""
Backward analítico do renderizador.

Cadeia: ∂L/∂rgb → ∂rgb/∂α (composição, segunda passada de trás para
frente) → ∂α/∂T²ᴰ → (∂T/∂h, ∂T/∂ν) → (μ²ᴰ, Σ²ᴰ) → (μ, log_scale, rotation).
O truncamento é tratado como gate não diferenciável.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from apps.splats.models import Camera, Mixture, TComponent
from apps.splats.params import (
    nu_derivative,
    opacity_derivative,
    quaternion_to_rotation,
    rotation_backward,
)
from apps.splats.sh import sh_basis_jacobian
from apps.splats.tmath import Projected2D

from .rasterizer import FrameBuffer, TRANSMITTANCE_FLOOR, replay_tile, tile_pixels

logger = logging.getLogger("rendering.backward")

NU_GRAD_FULL = "full"
NU_GRAD_PARTIAL = "partial"


@dataclass
class ParamGrads:
    """Gradientes por componente dos seis grupos de parâmetros."""

    d_position: np.ndarray  # (K, 3)
    d_log_scale: np.ndarray  # (K, 3)
    d_rotation: np.ndarray  # (K, 4)
    d_sh: np.ndarray  # (K, n, 3)
    d_raw_opacity: np.ndarray  # (K,)
    d_raw_nu: np.ndarray  # (K,)

    GROUPS = ("d_position", "d_log_scale", "d_rotation", "d_sh", "d_raw_opacity", "d_raw_nu")

    @classmethod
    def zeros(cls, count: int, n_coeffs: int) -> "ParamGrads":
        return cls(
            d_position=np.zeros((count, 3)),
            d_log_scale=np.zeros((count, 3)),
            d_rotation=np.zeros((count, 4)),
            d_sh=np.zeros((count, n_coeffs, 3)),
            d_raw_opacity=np.zeros(count),
            d_raw_nu=np.zeros(count),
        )

    def add_(self, other: "ParamGrads") -> "ParamGrads":
        for name in self.GROUPS:
            getattr(self, name).__iadd__(getattr(other, name))
        return self

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, name))) for name in self.GROUPS)


def dT2D_dh(h, nu):
    """∂T²ᴰ/∂h = −(ν+2)/(2ν) · [1 + h/ν]^(−(ν+4)/2)."""
    h = np.asarray(h, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    return -(nu + 2.0) / (2.0 * nu) * np.exp(-0.5 * (nu + 4.0) * np.log1p(h / nu))


def dT2D_dnu(h, nu, mode: str = NU_GRAD_FULL):
    """
    ∂T²ᴰ/∂ν.

    full:  T·[−½·ln(1+h/ν) + (ν+2)·h / (2ν²·(1+h/ν))]
    partial: só o segundo termo, (ν+2)/2 · h/ν² · [1+h/ν]^(−(ν+4)/2)
    """
    h = np.asarray(h, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    g = np.log1p(h / nu)
    inner = (nu + 2.0) * h / (2.0 * nu * nu * (1.0 + h / nu))
    T = np.exp(-0.5 * (nu + 2.0) * g)
    if mode == NU_GRAD_PARTIAL:
        return T * inner
    return T * (inner - 0.5 * g)


def composite_backward(
    pixel_grad,
    ordered: Sequence[Tuple[Sequence[float], float, float]],
    background=(0.0, 0.0, 0.0),
    early_stop: bool = True,
    floor: float = TRANSMITTANCE_FLOOR,
    forward_length: int = None,
) -> List[Tuple[np.ndarray, float, float]]:
    """
    Derivada reversa exata da composição de um pixel (opacidades com sinal).

    Primeira passada refaz as transmitâncias; a segunda, de trás para frente,
    reconstrói o sufixo R_i = Σ_{k>i} c_k α_k Π_{i<j<k}(1−α_j) + fundo·Π_{j>i}(1−α_j),
    de modo que ∂C/∂α_i = W_i (c_i − R_i).

    Returns:
        lista de (d_color (3,), d_opacity, d_density) por entrada
    """
    if forward_length is not None and forward_length != len(ordered):
        raise ValueError(f"Lista com {len(ordered)} entradas, forward tinha {forward_length}")

    g = np.asarray(pixel_grad, dtype=np.float64)
    colors = [np.asarray(c, dtype=np.float64) for c, _, _ in ordered]
    count = len(ordered)
    alphas = np.zeros(count)
    w_before = np.ones(count)
    included = np.zeros(count, dtype=bool)
    W = 1.0
    for i, (_, o, T) in enumerate(ordered):
        w_before[i] = W
        included[i] = True
        alphas[i] = o * T
        W *= 1.0 - alphas[i]
        if early_stop and W < floor:
            # entradas seguintes ficam fora da soma
            w_before[i + 1:] = W
            break

    R = np.asarray(background, dtype=np.float64).copy()
    grads = [None] * count
    for i in range(count - 1, -1, -1):
        _, o, T = ordered[i]
        d_alpha = w_before[i] * float(g @ (colors[i] - R)) if included[i] else 0.0
        d_color = g * alphas[i] * w_before[i]
        grads[i] = (d_color, d_alpha * T, d_alpha * o)
        R = colors[i] * alphas[i] + (1.0 - alphas[i]) * R
    return grads


def projection_backward(
    proj: Projected2D,
    d_mean2d,
    d_cov2d,
    component: TComponent,
    camera: Camera,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradientes de (μ, log_scale, rotation) a partir de ∂L/∂μ²ᴰ e ∂L/∂Σ²ᴰ.

    Inclui a dependência da jacobiana J em p = W·μ + t e a projeção do
    gradiente do quaternion no tangente da esfera unitária.
    """
    d_pos, d_ls, d_rot = _projection_backward_batch(
        p=np.asarray(proj.camera_point)[None, :],
        J=np.asarray(proj.jacobian)[None, :, :],
        d_mean2d=np.asarray(d_mean2d, dtype=np.float64)[None, :],
        d_cov2d=np.asarray(d_cov2d, dtype=np.float64)[None, :, :],
        log_scales=component.log_scale[None, :],
        rotations=component.rotation[None, :],
        camera=camera,
    )
    return d_pos[0], d_ls[0], d_rot[0]


def _projection_backward_batch(p, J, d_mean2d, d_cov2d, log_scales, rotations, camera: Camera):
    W = camera.rotation_wc
    fx, fy = camera.fx, camera.fy
    R = quaternion_to_rotation(rotations)
    s = np.exp(log_scales)
    M3 = R * s[:, None, :]
    cov3d = np.einsum("kij,klj->kil", M3, M3)

    dC = 0.5 * (d_cov2d + np.swapaxes(d_cov2d, 1, 2))
    M = np.einsum("kij,jl->kil", J, W)
    d_cov3d = np.einsum("kji,kjl,klm->kim", M, dC, M)
    dM = 2.0 * np.einsum("kij,kjl,klm->kim", dC, M, cov3d)
    dJ = np.einsum("kij,lj->kil", dM, W)

    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    d_p = np.einsum("kji,kj->ki", J, d_mean2d)
    d_p[:, 0] += dJ[:, 0, 2] * (-fx / (z * z))
    d_p[:, 1] += dJ[:, 1, 2] * (-fy / (z * z))
    d_p[:, 2] += (
        dJ[:, 0, 0] * (-fx / (z * z))
        + dJ[:, 0, 2] * (2.0 * fx * x / z**3)
        + dJ[:, 1, 1] * (-fy / (z * z))
        + dJ[:, 1, 2] * (2.0 * fy * y / z**3)
    )
    d_position = d_p @ W

    dM3 = 2.0 * np.einsum("kij,kjl->kil", 0.5 * (d_cov3d + np.swapaxes(d_cov3d, 1, 2)), M3)
    d_scale = np.sum(dM3 * R, axis=1)
    d_log_scale = d_scale * s
    d_R = dM3 * s[:, None, :]
    d_rotation = rotation_backward(rotations, d_R)
    return d_position, d_log_scale, d_rotation


def _backward_tile(tile_id: int, ctx, grad_image: np.ndarray, background, width: int, height: int, nu_mode: str):
    binning = ctx.binning
    members = binning.lists[tile_id]
    if len(members) == 0:
        return None
    x0, y0, x1, y1 = binning.tile_bounds(tile_id, width, height)
    pixels = tile_pixels(x0, y0, x1, y1)
    G = grad_image[y0:y1, x0:x1].reshape(-1, 3)
    state = replay_tile(ctx.projection, ctx.opacities, members, pixels, ctx.options)

    colors = ctx.colors[members]
    opac = ctx.opacities[members]
    L, P = state.alpha.shape

    d_color = np.einsum("lp,pc->lc", state.alpha * state.w_before, G)
    d_alpha = np.zeros((L, P))
    R = np.broadcast_to(background, (P, 3)).copy()
    for i in range(L - 1, -1, -1):
        d_alpha[i] = state.w_before[i] * np.sum(G * (colors[i][None, :] - R), axis=1)
        a = state.alpha[i][:, None]
        R = colors[i][None, :] * a + (1.0 - a) * R
    d_alpha *= state.included

    d_opacity = np.sum(d_alpha * state.density, axis=1)
    d_density = d_alpha * opac[:, None]
    nu = ctx.projection.nu[members][:, None]
    d_h = d_density * dT2D_dh(state.h, nu)
    d_nu = np.sum(d_density * dT2D_dnu(state.h, nu, nu_mode), axis=1)

    conic = ctx.projection.conic[members]
    off = state.offsets
    # ∂h/∂μ²ᴰ = −2 A d
    Ad = np.einsum("lij,lpj->lpi", conic, off)
    d_mean2d = -2.0 * np.einsum("lp,lpi->li", d_h, Ad)
    d_conic = np.einsum("lp,lpi,lpj->lij", d_h, off, off)
    return members, d_color, d_opacity, d_nu, d_mean2d, d_conic


def render_backward(
    mixture: Mixture,
    camera: Camera,
    d_image: np.ndarray,
    frame: FrameBuffer,
    nu_grad: str = NU_GRAD_FULL,
    learn_nu: bool = True,
) -> ParamGrads:
    """
    Backward completo: soma as contribuições por pixel em ParamGrads.

    Args:
        d_image: (H, W, 3) ∂L/∂rgb do frame (após o clamp)
        frame: FrameBuffer do forward com o mesmo mixture/câmera

    Returns:
        ParamGrads com as cadeias de reparametrização já aplicadas
    """
    ctx = frame.context
    if ctx is None:
        raise ValueError("FrameBuffer sem contexto do forward")
    k = len(mixture)
    n_total = mixture.sh.shape[1]
    grads = ParamGrads.zeros(k, n_total)
    if k == 0:
        return grads

    d_image = np.asarray(d_image, dtype=np.float64)
    if d_image.shape != frame.raw_rgb.shape:
        raise ValueError(f"d_image {d_image.shape} incompatível com o frame {frame.raw_rgb.shape}")
    grad_image = d_image * ((frame.raw_rgb >= 0.0) & (frame.raw_rgb <= 1.0))

    width, height = frame.width, frame.height
    tile_ids = range(len(ctx.binning.lists))
    with ThreadPoolExecutor(max_workers=ctx.options.threads) as executor:
        results = list(
            executor.map(
                lambda t: _backward_tile(t, ctx, grad_image, mixture.background, width, height, nu_grad),
                tile_ids,
            )
        )

    d_color = np.zeros((k, 3))
    d_opacity = np.zeros(k)
    d_nu = np.zeros(k)
    d_mean2d = np.zeros((k, 2))
    d_conic = np.zeros((k, 2, 2))
    # redução em ordem fixa de tiles: resultado bit a bit determinístico
    for result in results:
        if result is None:
            continue
        members, dc, do, dn, dm, dq = result
        np.add.at(d_color, members, dc)
        np.add.at(d_opacity, members, do)
        np.add.at(d_nu, members, dn)
        np.add.at(d_mean2d, members, dm)
        np.add.at(d_conic, members, dq)

    proj = ctx.projection
    touched = proj.valid
    A = proj.conic
    d_cov2d = -np.einsum("kij,kjl,klm->kim", A, d_conic, A)

    idx = np.flatnonzero(touched)
    if idx.size:
        d_pos, d_ls, d_rot = _projection_backward_batch(
            p=proj.camera_points[idx],
            J=proj.jacobian[idx],
            d_mean2d=d_mean2d[idx],
            d_cov2d=d_cov2d[idx],
            log_scales=mixture.log_scales[idx],
            rotations=mixture.rotations[idx],
            camera=camera,
        )
        grads.d_position[idx] = d_pos
        grads.d_log_scale[idx] = d_ls
        grads.d_rotation[idx] = d_rot

    # cor SH: clamp em 0 zera o gradiente
    d_raw_color = d_color * (ctx.color_raw > 0.0)
    n_active = ctx.basis.shape[1]
    grads.d_sh[:, :n_active] = np.einsum("kn,kc->knc", ctx.basis, d_raw_color)
    if mixture.sh_degree > 0:
        jac = sh_basis_jacobian(ctx.view_dirs, mixture.sh_degree)
        d_dir = np.einsum("kc,knc,kni->ki", d_raw_color, mixture.sh[:, :n_active], jac)
        dirs = ctx.view_dirs
        tangent = d_dir - np.sum(d_dir * dirs, axis=1, keepdims=True) * dirs
        norms = np.where(ctx.view_norms > 0.0, ctx.view_norms, 1.0)
        grads.d_position += tangent / norms[:, None]

    grads.d_raw_opacity = d_opacity * opacity_derivative(mixture.raw_opacity, mixture.opacity_mode)
    if learn_nu:
        grads.d_raw_nu = d_nu * nu_derivative(mixture.raw_nu)

    if not grads.is_finite():
        logger.warning("Gradientes não finitos no backward")
    return grads
