"""
Rasterização por tiles com opacidades com sinal.

    C(u) = Σᵢ cᵢ oᵢ Tᵢ(u) Πⱼ<ᵢ (1 − oⱼ Tⱼ(u))  +  fundo · W_final

Pipeline: projeção → cor SH por componente → ordenação global por
profundidade → binning em tiles → composição frente-para-trás por tile.
Cada tile é dono exclusivo dos seus pixels; os tiles rodam em paralelo.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from django.conf import settings

from apps.splats.models import Camera, Mixture
from apps.splats.sh import COLOR_OFFSET, sh_basis
from apps.splats.tmath import (
    DEFAULT_TAU,
    MIN_RADIUS_PX,
    Projected2D,
    ProjectedBatch,
    project_mixture,
)

logger = logging.getLogger("rendering.rasterizer")

TILE_SIZE = 16
TRANSMITTANCE_FLOOR = 1e-4


def setting(name: str, default):
    """Lê um setting do projeto sem exigir Django configurado."""
    if not settings.configured:
        return default
    return getattr(settings, name, default)


@dataclass
class RenderOptions:
    tile_size: int = TILE_SIZE
    tau: float = DEFAULT_TAU
    early_stop: Optional[bool] = None
    transmittance_floor: float = TRANSMITTANCE_FLOOR
    low_pass: float = 0.0
    threads: Optional[int] = None

    def __post_init__(self):
        if self.early_stop is None:
            self.early_stop = not setting("TSPLAT_TEST_MODE", False)
        if self.threads is None:
            self.threads = max(1, int(setting("TSPLAT_THREADS", 1)))
        if self.tile_size <= 0:
            raise ValueError("tile_size deve ser positivo")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("τ deve estar em (0, 1)")


@dataclass
class TileBinning:
    """Listas de componentes por tile, ordenadas por profundidade crescente (índice desempata)."""

    tile_size: int
    tiles_x: int
    tiles_y: int
    lists: List[np.ndarray]

    def tile_list(self, tx: int, ty: int) -> np.ndarray:
        return self.lists[ty * self.tiles_x + tx]

    def tile_bounds(self, tile_id: int, width: int, height: int) -> Tuple[int, int, int, int]:
        ty, tx = divmod(tile_id, self.tiles_x)
        x0, y0 = tx * self.tile_size, ty * self.tile_size
        return x0, y0, min(x0 + self.tile_size, width), min(y0 + self.tile_size, height)


@dataclass
class FrameContext:
    """Quantidades do forward que o backward reaproveita (aux do frame)."""

    projection: ProjectedBatch
    colors: np.ndarray  # (K, 3) após o clamp em 0
    color_raw: np.ndarray  # (K, 3) antes do clamp
    view_dirs: np.ndarray  # (K, 3) unitárias
    view_norms: np.ndarray  # (K,)
    basis: np.ndarray  # (K, n_ativos)
    opacities: np.ndarray  # (K,)
    binning: TileBinning
    options: RenderOptions


@dataclass
class FrameBuffer:
    width: int
    height: int
    rgb: np.ndarray  # (H, W, 3) em [0, 1]
    raw_rgb: np.ndarray  # (H, W, 3) antes do clamp
    transmittance: np.ndarray  # (H, W) antes da mistura com o fundo
    contributors: np.ndarray  # (H, W) int
    context: Optional[FrameContext] = field(default=None, repr=False)


def _bin_arrays(mean2d, radius, depth, valid, width, height, tile_size) -> TileBinning:
    tiles_x = (width + tile_size - 1) // tile_size
    tiles_y = (height + tile_size - 1) // tile_size
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return TileBinning(tile_size, tiles_x, tiles_y, [np.zeros(0, dtype=np.int64) for _ in range(tiles_x * tiles_y)])

    order = idx[np.lexsort((idx, depth[idx]))]
    m = mean2d[order]
    r = radius[order]

    # retângulo de centros de pixel de cada tile: [x0, x1] × [y0, y1]
    x0 = np.arange(tiles_x) * tile_size
    x1 = np.minimum(x0 + tile_size, width) - 1
    y0 = np.arange(tiles_y) * tile_size
    y1 = np.minimum(y0 + tile_size, height) - 1
    dx = np.maximum(np.maximum(x0[None, :] - m[:, :1], m[:, :1] - x1[None, :]), 0.0)
    dy = np.maximum(np.maximum(y0[None, :] - m[:, 1:], m[:, 1:] - y1[None, :]), 0.0)
    hits = (dx[:, None, :] ** 2 + dy[:, :, None] ** 2) <= (r * r)[:, None, None]

    lists = [order[hits[:, ty, tx]] for ty in range(tiles_y) for tx in range(tiles_x)]
    return TileBinning(tile_size, tiles_x, tiles_y, lists)


def sort_and_bin(
    projections: Union[ProjectedBatch, Sequence[Optional[Projected2D]]],
    width: int,
    height: int,
    tile_size: int = TILE_SIZE,
) -> TileBinning:
    """
    Ordena por profundidade e distribui os componentes nos tiles.

    Um componente entra num tile quando o disco de truncamento intercepta o
    retângulo de centros de pixel do tile. Entradas fora do frustum (None)
    ou abaixo do footprint mínimo ficam de fora.
    """
    if isinstance(projections, ProjectedBatch):
        return _bin_arrays(
            projections.mean2d, projections.radius, projections.depth, projections.valid, width, height, tile_size
        )

    k = len(projections)
    mean2d = np.zeros((k, 2))
    radius = np.zeros(k)
    depth = np.zeros(k)
    valid = np.zeros(k, dtype=bool)
    for i, proj in enumerate(projections):
        if proj is None:
            continue
        mean2d[i] = proj.mean2d
        radius[i] = proj.cutoff_radius_px
        depth[i] = proj.depth
        valid[i] = proj.cutoff_radius_px >= MIN_RADIUS_PX
    return _bin_arrays(mean2d, radius, depth, valid, width, height, tile_size)


def composite_pixel(
    ordered: Sequence[Tuple[Sequence[float], float, float]],
    background,
    early_stop: bool = True,
    floor: float = TRANSMITTANCE_FLOOR,
    depths: Optional[Sequence[float]] = None,
) -> Tuple[np.ndarray, float]:
    """
    Composição frente-para-trás de um pixel.

    Args:
        ordered: lista de (cor RGB, opacidade o, densidade T) em profundidade crescente
        background: cor de fundo RGB
        early_stop: para quando W < floor
        depths: profundidades opcionais; em modo de teste a ordem é verificada

    Returns:
        (RGB sem clamp, transmitância final antes do fundo)
    """
    if depths is not None and setting("TSPLAT_TEST_MODE", False):
        assert all(a <= b for a, b in zip(depths, depths[1:])), "lista fora de ordem de profundidade"

    color = np.zeros(3)
    W = 1.0
    for c, o, T in ordered:
        alpha = o * T
        color += np.asarray(c, dtype=np.float64) * alpha * W
        W *= 1.0 - alpha
        if early_stop and W < floor:
            break
    return color + np.asarray(background, dtype=np.float64) * W, W


def prepare_colors(mixture: Mixture, camera: Camera):
    """Cor SH de cada componente vista do centro da câmera."""
    k = len(mixture)
    offsets = mixture.positions - camera.center[None, :]
    norms = np.linalg.norm(offsets, axis=1)
    dirs = offsets / np.where(norms > 0.0, norms, 1.0)[:, None]
    n = (mixture.sh_degree + 1) ** 2
    basis = sh_basis(dirs, mixture.sh_degree).reshape(k, n)
    raw = np.einsum("kn,knc->kc", basis, mixture.sh[:, :n]) + COLOR_OFFSET
    return np.maximum(raw, 0.0), raw, dirs, norms, basis


def tile_pixels(x0: int, y0: int, x1: int, y1: int) -> np.ndarray:
    ys, xs = np.mgrid[y0:y1, x0:x1]
    return np.stack([xs.ravel(), ys.ravel()], axis=-1).astype(np.float64)


@dataclass
class TileState:
    """Forward de um tile reconstruído (usado por forward e backward)."""

    h: np.ndarray  # (L, P)
    density: np.ndarray  # (L, P), zero fora do corte
    alpha: np.ndarray  # (L, P), zero após o early stop
    w_before: np.ndarray  # (L, P)
    w_final: np.ndarray  # (P,)
    offsets: np.ndarray  # (L, P, 2)
    included: np.ndarray  # (L, P) bool


def replay_tile(ctx_proj: ProjectedBatch, opacities, members: np.ndarray, pixels: np.ndarray, options: RenderOptions) -> TileState:
    """Reavalia as densidades e transmitâncias de um tile."""
    mean = ctx_proj.mean2d[members]
    conic = ctx_proj.conic[members]
    nu = ctx_proj.nu[members][:, None]

    d = pixels[None, :, :] - mean[:, None, :]
    h = (
        conic[:, None, 0, 0] * d[..., 0] ** 2
        + 2.0 * conic[:, None, 0, 1] * d[..., 0] * d[..., 1]
        + conic[:, None, 1, 1] * d[..., 1] ** 2
    )
    h = np.maximum(h, 0.0)
    inside = h <= ctx_proj.cut_sq[members][:, None]
    density = np.where(inside, np.exp(-0.5 * (nu + 2.0) * np.log1p(h / nu)), 0.0)
    alpha = opacities[members][:, None] * density

    one_minus = 1.0 - alpha
    w_after = np.cumprod(one_minus, axis=0)
    included = np.ones_like(alpha, dtype=bool)
    if options.early_stop and len(members):
        crossed = w_after < options.transmittance_floor
        stopped_before = np.zeros_like(crossed)
        stopped_before[1:] = np.logical_or.accumulate(crossed, axis=0)[:-1]
        included = ~stopped_before
        alpha = np.where(included, alpha, 0.0)
        w_after = np.cumprod(1.0 - alpha, axis=0)

    w_before = np.ones_like(alpha)
    if len(members):
        w_before[1:] = w_after[:-1]
        w_final = w_after[-1]
    else:
        w_final = np.ones(len(pixels))

    return TileState(h, density, alpha, w_before, w_final, d, included & inside)


def _render_tile(tile_id: int, ctx: FrameContext, background, width: int, height: int):
    x0, y0, x1, y1 = ctx.binning.tile_bounds(tile_id, width, height)
    pixels = tile_pixels(x0, y0, x1, y1)
    members = ctx.binning.lists[tile_id]
    state = replay_tile(ctx.projection, ctx.opacities, members, pixels, ctx.options)
    color = np.einsum("lp,lc->pc", state.alpha * state.w_before, ctx.colors[members])
    color += background[None, :] * state.w_final[:, None]
    count = np.sum(state.included & (state.density > 0.0), axis=0)
    return (x0, y0, x1, y1), color, state.w_final, count


def build_context(mixture: Mixture, camera: Camera, options: RenderOptions) -> FrameContext:
    projection = project_mixture(mixture, camera, tau=options.tau, low_pass=options.low_pass)
    colors, raw, dirs, norms, basis = prepare_colors(mixture, camera)
    binning = sort_and_bin(projection, camera.width, camera.height, options.tile_size)
    return FrameContext(
        projection=projection,
        colors=colors,
        color_raw=raw,
        view_dirs=dirs,
        view_norms=norms,
        basis=basis,
        opacities=mixture.opacities(),
        binning=binning,
        options=options,
    )


def render(mixture: Mixture, camera: Camera, options: Optional[RenderOptions] = None) -> FrameBuffer:
    """
    Renderiza a mistura pela câmera.

    Returns:
        FrameBuffer com rgb em [0, 1], rgb bruto, transmitância final e
        contagem de contribuintes por pixel (aux para o backward)
    """
    options = options or RenderOptions()
    width, height = camera.width, camera.height
    if width <= 0 or height <= 0:
        raise ValueError("Imagem de tamanho zero")

    ctx = build_context(mixture, camera, options)
    background = mixture.background
    raw = np.zeros((height, width, 3))
    transmittance = np.ones((height, width))
    contributors = np.zeros((height, width), dtype=np.int64)

    tile_ids = range(len(ctx.binning.lists))
    with ThreadPoolExecutor(max_workers=options.threads) as executor:
        results = list(executor.map(lambda t: _render_tile(t, ctx, background, width, height), tile_ids))

    for (x0, y0, x1, y1), color, w_final, count in results:
        shape = (y1 - y0, x1 - x0)
        raw[y0:y1, x0:x1] = color.reshape(shape + (3,))
        transmittance[y0:y1, x0:x1] = w_final.reshape(shape)
        contributors[y0:y1, x0:x1] = count.reshape(shape)

    logger.debug(
        f"Frame {width}x{height}: {int(np.sum(ctx.projection.valid))}/{len(mixture)} componentes visíveis"
    )
    return FrameBuffer(
        width=width,
        height=height,
        rgb=np.clip(raw, 0.0, 1.0),
        raw_rgb=raw,
        transmittance=transmittance,
        contributors=contributors,
        context=ctx,
    )
