"""
Mapas de parâmetros irrestritos → restritos e montagem de covariâncias.

Todos os parâmetros aprendíveis ficam em espaço irrestrito (raw) e são lidos
através destes mapas: ν = min(1 + softplus(raw), 10000), o = tanh(raw) (ou
sigmoid no modo só-positivo), Σ = R S Sᵀ Rᵀ com S = diag(exp(log_scale)).
"""

import numpy as np
from scipy.special import expit

NU_MIN = 1.0
NU_MAX = 10000.0
NU_INIT = 50.0
OPACITY_INIT = 0.1
RAW_NU_FLOOR = -40.0
CAUCHY_TOLERANCE = 1e-12

OPACITY_SIGNED = "signed"
OPACITY_POSITIVE = "positive"


def softplus(x):
    return np.logaddexp(0.0, x)


def nu_of(raw_nu):
    """ν = min(1 + softplus(raw), 10000). Função total e crescente."""
    nu = 1.0 + softplus(np.asarray(raw_nu, dtype=np.float64))
    nu = np.minimum(nu, NU_MAX)
    return float(nu) if np.ndim(nu) == 0 else nu


def nu_inverse(nu):
    """
    Inverso de nu_of no trecho não saturado (ν ∈ [1, 10000)).

    ν = 1 (Cauchy) não tem pré-imagem finita; devolve RAW_NU_FLOOR, cujo
    nu_of é 1 em precisão dupla.
    """
    y = np.asarray(nu, dtype=np.float64) - 1.0
    if np.any(y < 0.0):
        raise ValueError("nu_inverse exige ν ≥ 1")
    floor = y <= CAUCHY_TOLERANCE
    y = np.where(floor, 1.0, y)
    # log(expm1(y)) perde precisão para y grande; y + log1p(-exp(-y)) não
    raw = np.where(y > 20.0, y + np.log1p(-np.exp(-np.minimum(y, 700.0))), np.log(np.expm1(np.minimum(y, 20.0))))
    raw = np.where(floor, RAW_NU_FLOOR, raw)
    return float(raw) if np.ndim(raw) == 0 else raw


def clamp_raw_nu(raw_nu, nu_min: float = NU_MIN, nu_max: float = NU_MAX):
    """Restringe raw de forma que nu_of(raw) ∈ [nu_min, nu_max]."""
    raw = np.asarray(raw_nu, dtype=np.float64)
    lower = nu_inverse(nu_min) if nu_min > NU_MIN else -np.inf
    upper = nu_inverse(nu_max) if nu_max < NU_MAX else np.inf
    raw = np.clip(raw, lower, upper)
    return float(raw) if np.ndim(raw) == 0 else raw


def nu_derivative(raw_nu):
    """dν/draw: sigmoid(raw) enquanto não saturado, 0 acima do teto."""
    raw = np.asarray(raw_nu, dtype=np.float64)
    unclamped = (1.0 + softplus(raw)) < NU_MAX
    d = np.where(unclamped, expit(raw), 0.0)
    return float(d) if np.ndim(d) == 0 else d


def opacity_of(raw_opacity, mode: str = OPACITY_SIGNED):
    """o = tanh(raw) ∈ (−1, 1); no modo positivo o = sigmoid(raw) ∈ (0, 1)."""
    raw = np.asarray(raw_opacity, dtype=np.float64)
    o = np.tanh(raw) if mode == OPACITY_SIGNED else expit(raw)
    return float(o) if np.ndim(o) == 0 else o


def opacity_inverse(o, mode: str = OPACITY_SIGNED):
    o = np.asarray(o, dtype=np.float64)
    if mode == OPACITY_SIGNED:
        raw = np.arctanh(np.clip(o, -1.0 + 1e-15, 1.0 - 1e-15))
    else:
        p = np.clip(o, 1e-15, 1.0 - 1e-15)
        raw = np.log(p) - np.log1p(-p)
    return float(raw) if np.ndim(raw) == 0 else raw


def opacity_derivative(raw_opacity, mode: str = OPACITY_SIGNED):
    o = np.asarray(opacity_of(raw_opacity, mode))
    d = 1.0 - o * o if mode == OPACITY_SIGNED else o * (1.0 - o)
    return float(d) if np.ndim(d) == 0 else d


def normalize_quaternions(q):
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / np.where(norm > 0.0, norm, 1.0)


def quaternion_multiply(q, p):
    """Produto de Hamilton q·p, convenção (w, x, y, z)."""
    w1, x1, y1, z1 = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    w2, x2, y2, z2 = np.moveaxis(np.asarray(p, dtype=np.float64), -1, 0)
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quaternion_to_rotation(q):
    """
    Converte quaternions (..., 4) em matrizes de rotação (..., 3, 3).

    O quaternion armazenado não é normalizado; a normalização é aplicada
    na leitura.
    """
    w, x, y, z = np.moveaxis(normalize_quaternions(q), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=-2,
    )


def rotation_backward(q, d_rotation):
    """
    Propaga ∂L/∂R para o quaternion bruto.

    O gradiente em relação ao quaternion normalizado é projetado no
    tangente da esfera unitária e dividido pela norma do quaternion bruto.
    """
    q = np.asarray(q, dtype=np.float64)
    qn = normalize_quaternions(q)
    w, x, y, z = np.moveaxis(qn, -1, 0)
    g = np.asarray(d_rotation, dtype=np.float64)
    g00, g01, g02 = g[..., 0, 0], g[..., 0, 1], g[..., 0, 2]
    g10, g11, g12 = g[..., 1, 0], g[..., 1, 1], g[..., 1, 2]
    g20, g21, g22 = g[..., 2, 0], g[..., 2, 1], g[..., 2, 2]

    dw = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    dx = 2 * (y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12 + z * g20 + w * g21 - 2 * x * g22)
    dy = 2 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12 - w * g20 + z * g21 - 2 * y * g22)
    dz = 2 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11 + y * g12 + x * g20 + y * g21)
    d_unit = np.stack([dw, dx, dy, dz], axis=-1)

    tangent = d_unit - np.sum(d_unit * qn, axis=-1, keepdims=True) * qn
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    return tangent / np.where(norm > 0.0, norm, 1.0)


def covariances_from(log_scales, rotations):
    """Σ = R diag(exp(2·log_scale)) Rᵀ para lotes (K, 3) / (K, 4)."""
    R = quaternion_to_rotation(rotations)
    s2 = np.exp(2.0 * np.asarray(log_scales, dtype=np.float64))
    return np.einsum("...ij,...j,...kj->...ik", R, s2, R)


def covariance_of(component) -> np.ndarray:
    """
    Matriz de covariância 3×3 de um componente: Σ = R S Sᵀ Rᵀ.

    Args:
        component: TComponent (usa log_scale e rotation)

    Returns:
        np.ndarray (3, 3) simétrica positiva-definida
    """
    cov = covariances_from(component.log_scale[None, :], component.rotation[None, :])[0]
    return 0.5 * (cov + cov.T)


def eigenvalues_of(sigma, atol: float = 1e-9) -> np.ndarray:
    """Autovalores reais de Σ em ordem decrescente. Rejeita matriz não simétrica."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (3, 3):
        raise ValueError(f"Esperava matriz 3×3, recebi {sigma.shape}")
    scale = max(1.0, float(np.max(np.abs(sigma))))
    if not np.allclose(sigma, sigma.T, rtol=0.0, atol=atol * scale):
        raise ValueError("eigenvalues_of exige matriz simétrica")
    return np.linalg.eigvalsh(0.5 * (sigma + sigma.T))[::-1]
