"""
Composição de referência: pixel a pixel, sem tiles, sobre a lista global
ordenada por profundidade (empate pelo índice).

Projeção, corte, mapas de parâmetros, SH e composição são reescritos aqui
de forma direta, sem importar os módulos que este oráculo confere:

    ν = min(1 + log(1 + e^raw), 10000),  o = tanh(raw) (ou 1/(1 + e^−raw))
    p = W μ + t,  J = [[fx/z, 0, −fx x/z²], [0, fy/z, −fy y/z²]]
    Σ²ᴰ = J W Σ Wᵀ Jᵀ (+ low_pass·I)
    h = dᵀ (Σ²ᴰ)⁻¹ d,  T = (1 + h/ν)^(−(ν+2)/2),  entra se T ≥ τ
    raio do disco = √(h_corte·λmax); componentes com raio < 0.3 px são descartados
"""

import math
from typing import List, Tuple

import numpy as np
from scipy.special import beta

from apps.splats.models import Camera, Mixture

MIN_FOOTPRINT_PX = 0.3


def _nus(raw_nu: np.ndarray) -> np.ndarray:
    return np.minimum(1.0 + np.logaddexp(0.0, raw_nu), 10000.0)


def _opacities(raw_opacity: np.ndarray, mode: str) -> np.ndarray:
    if mode == "signed":
        return np.tanh(raw_opacity)
    return 1.0 / (1.0 + np.exp(-raw_opacity))


def _sh_terms(d: np.ndarray, degree: int) -> List[float]:
    """Base SH real em forma fechada (normalização ortonormal, sinais de Condon-Shortley)."""
    x, y, z = d
    pi = math.pi
    terms = [0.5 / math.sqrt(pi)]
    if degree >= 1:
        k1 = math.sqrt(3.0 / (4.0 * pi))
        terms += [-k1 * y, k1 * z, -k1 * x]
    if degree >= 2:
        a = 0.5 * math.sqrt(15.0 / pi)
        b = 0.25 * math.sqrt(5.0 / pi)
        c = 0.25 * math.sqrt(15.0 / pi)
        terms += [a * x * y, -a * y * z, b * (2 * z * z - x * x - y * y), -a * x * z, c * (x * x - y * y)]
    if degree >= 3:
        e = 0.25 * math.sqrt(35.0 / (2.0 * pi))
        f = 0.5 * math.sqrt(105.0 / pi)
        g = 0.25 * math.sqrt(21.0 / (2.0 * pi))
        k = 0.25 * math.sqrt(7.0 / pi)
        m = 0.25 * math.sqrt(105.0 / pi)
        terms += [
            -e * y * (3 * x * x - y * y),
            f * x * y * z,
            -g * y * (4 * z * z - x * x - y * y),
            k * z * (2 * z * z - 3 * x * x - 3 * y * y),
            -g * x * (4 * z * z - x * x - y * y),
            m * z * (x * x - y * y),
            -e * x * (x * x - 3 * y * y),
        ]
    return terms


def _color(coeffs: np.ndarray, direction: np.ndarray, degree: int) -> np.ndarray:
    terms = _sh_terms(direction, degree)
    rgb = np.full(3, 0.5)
    for k, weight in enumerate(terms):
        rgb += weight * coeffs[k]
    return np.maximum(rgb, 0.0)


def _reference_projection(mixture: Mixture, camera: Camera, tau: float, low_pass: float) -> List[Tuple]:
    """(profundidade, índice, média 2D, inversa de Σ²ᴰ, ν, h de corte) dos componentes visíveis."""
    entries = []
    W = camera.rotation_wc
    nus = _nus(mixture.raw_nu)
    for i in range(len(mixture)):
        x, y, z = W @ mixture.positions[i] + camera.translation_wc
        if z <= camera.z_near:
            continue
        J = np.array([[camera.fx / z, 0.0, -camera.fx * x / (z * z)], [0.0, camera.fy / z, -camera.fy * y / (z * z)]])
        w, qx, qy, qz = mixture.rotations[i] / np.linalg.norm(mixture.rotations[i])
        R = np.array(
            [
                [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - w * qz), 2 * (qx * qz + w * qy)],
                [2 * (qx * qy + w * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - w * qx)],
                [2 * (qx * qz - w * qy), 2 * (qy * qz + w * qx), 1 - 2 * (qx * qx + qy * qy)],
            ]
        )
        S = np.diag(np.exp(mixture.log_scales[i]))
        sigma = R @ S @ S @ R.T
        cov2d = J @ W @ sigma @ W.T @ J.T + low_pass * np.eye(2)
        if np.linalg.det(cov2d) <= 0.0:
            continue
        nu = float(nus[i])
        h_cut = nu * (tau ** (-2.0 / (nu + 2.0)) - 1.0)
        radius = math.sqrt(h_cut * max(np.linalg.eigvalsh(cov2d)))
        if radius < MIN_FOOTPRINT_PX:
            continue
        mean2d = np.array([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy])
        entries.append((float(z), i, mean2d, np.linalg.inv(cov2d), nu, h_cut))
    entries.sort(key=lambda e: (e[0], e[1]))
    return entries


def reference_composite(
    mixture: Mixture,
    camera: Camera,
    tau: float = 1.0 / 255.0,
    low_pass: float = 0.0,
    early_stop: bool = False,
    floor: float = 1e-4,
) -> np.ndarray:
    """
    Imagem (H, W, 3) sem clamp, pixel por pixel.

    Para desk-scale (≤ 64×64, ≤ 200 componentes).
    """
    entries = _reference_projection(mixture, camera, tau, low_pass)
    center = -camera.rotation_wc.T @ camera.translation_wc
    opacities = _opacities(mixture.raw_opacity, mixture.opacity_mode)
    colors = {}
    for _, i, _, _, _, _ in entries:
        direction = mixture.positions[i] - center
        direction = direction / np.linalg.norm(direction)
        colors[i] = _color(mixture.sh[i], direction, mixture.sh_degree)

    image = np.zeros((camera.height, camera.width, 3))
    for v in range(camera.height):
        for u in range(camera.width):
            pixel = np.array([u, v], dtype=np.float64)
            color = np.zeros(3)
            transmittance = 1.0
            for _, i, mean2d, inverse, nu, h_cut in entries:
                d = pixel - mean2d
                h = float(d @ inverse @ d)
                if h > h_cut:
                    continue
                alpha = opacities[i] * (1.0 + h / nu) ** (-(nu + 2.0) / 2.0)
                color += colors[i] * alpha * transmittance
                transmittance *= 1.0 - alpha
                if early_stop and transmittance < floor:
                    break
            image[v, u] = color + mixture.background * transmittance
    return image


def direct_beta_K(n: int, o_new: float, nu: float) -> float:
    """K pela função beta direta e binomiais inteiros (referência para compute_K)."""
    total = 0.0
    for i in range(1, n + 1):
        for k in range(i):
            z = beta(0.5, ((k + 1) * (nu + 3.0) - 1.0) / 2.0)
            total += math.comb(i - 1, k) * (-1.0) ** k * o_new ** (k + 1) * z
    return float(total)
