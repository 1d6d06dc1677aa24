"""
Métricas de imagem: PSNR e SSIM (janela gaussiana 11×11, σ = 1.5).

SSIM usa recorte da região válida (sem padding); o gradiente analítico
é a adjunta da convolução válida, i.e. uma convolução 'full'.
"""

import numpy as np
from scipy.signal import convolve2d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DYNAMIC_RANGE = 1.0


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


_WINDOW = gaussian_window()


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"Formas diferentes: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    return a, b


def _ssim_maps(x: np.ndarray, y: np.ndarray):
    """Estatísticas locais de um canal; devolve (s, A1, A2, B1, B2, μx, μy)."""
    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * DYNAMIC_RANGE) ** 2
    mu_x = convolve2d(x, _WINDOW, mode="valid")
    mu_y = convolve2d(y, _WINDOW, mode="valid")
    e_xx = convolve2d(x * x, _WINDOW, mode="valid")
    e_yy = convolve2d(y * y, _WINDOW, mode="valid")
    e_xy = convolve2d(x * y, _WINDOW, mode="valid")

    a1 = 2.0 * mu_x * mu_y + c1
    a2 = 2.0 * (e_xy - mu_x * mu_y) + c2
    b1 = mu_x * mu_x + mu_y * mu_y + c1
    b2 = (e_xx - mu_x * mu_x) + (e_yy - mu_y * mu_y) + c2
    s = (a1 * a2) / (b1 * b2)
    return s, a1, a2, b1, b2, mu_x, mu_y


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """
    SSIM médio (convenção de Wang et al.).

    Args:
        a, b: imagens (H, W) ou (H, W, C) em [0, 1]

    Returns:
        média do mapa local sobre pixels válidos e canais
    """
    a, b = _check_pair(a, b)
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"Imagem {a.shape[:2]} menor que a janela SSIM {SSIM_WINDOW}×{SSIM_WINDOW}")
    values = [np.mean(_ssim_maps(a[..., c], b[..., c])[0]) for c in range(a.shape[2])]
    return float(np.mean(values))


def ssim_gradient(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """∂ssim(a, b)/∂a com o mesmo formato de `a`."""
    squeeze = np.ndim(a) == 2
    a, b = _check_pair(a, b)
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"Imagem {a.shape[:2]} menor que a janela SSIM {SSIM_WINDOW}×{SSIM_WINDOW}")

    channels = a.shape[2]
    grad = np.zeros_like(a)
    for c in range(channels):
        x, y = a[..., c], b[..., c]
        s, a1, a2, b1, b2, mu_x, mu_y = _ssim_maps(x, y)
        scale = 1.0 / (s.size * channels)
        d_mu = s * (2.0 * mu_y / a1 - 2.0 * mu_x / b1 - 2.0 * mu_y / a2 + 2.0 * mu_x / b2) * scale
        d_exx = -s / b2 * scale
        d_exy = 2.0 * s / a2 * scale
        # janela simétrica: a adjunta da convolução válida é a convolução 'full'
        grad[..., c] = (
            convolve2d(d_mu, _WINDOW, mode="full")
            + 2.0 * x * convolve2d(d_exx, _WINDOW, mode="full")
            + y * convolve2d(d_exy, _WINDOW, mode="full")
        )
    return grad[..., 0] if squeeze else grad


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR em dB para faixa [0, 1]; +inf quando as imagens são idênticas."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(-10.0 * np.log10(mse))
