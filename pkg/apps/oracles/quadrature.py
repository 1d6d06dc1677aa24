"""
Integrais de referência por quadratura adaptativa (QUADPACK via scipy).

As fórmulas são re-derivadas aqui, sem usar apps.splats.tmath:

    kernel t em 3D:  (1 + δᵀ Σ⁻¹ δ / ν)^(−(ν+3)/2)
    fatia 1D:        T(x) = (1 + x² / (ν σ²))^(−(ν+3)/2)
    composição de N cópias iguais de opacidade o:  Σ_{i=1..N} o T (1 − o T)^(i−1)
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate

logger = logging.getLogger("oracles.quadrature")


@dataclass(frozen=True)
class QuadratureSpec:
    half_width: float = 1.0e3
    tolerance: float = 1.0e-9
    max_subdivisions: int = 500

    def __post_init__(self):
        if self.tolerance <= 0.0:
            raise ValueError("tolerance deve ser positiva")
        if self.half_width <= 0.0:
            raise ValueError("half_width deve ser positiva")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions deve ser ≥ 1")


class QuadResult(NamedTuple):
    value: float
    error: float
    converged: bool


def _integrate(fn, lower: float, upper: float, breakpoints, spec: QuadratureSpec) -> QuadResult:
    """Integra em trechos [lower, b₀, b₁, ..., upper], somando valores e erros."""
    edges = [lower] + sorted(b for b in breakpoints if lower < b < upper) + [upper]
    value, error, converged = 0.0, 0.0, True
    for a, b in zip(edges[:-1], edges[1:]):
        result = integrate.quad(
            fn, a, b, epsabs=spec.tolerance, epsrel=spec.tolerance, limit=spec.max_subdivisions, full_output=1
        )
        # com full_output, QUADPACK acrescenta uma mensagem quando ier > 0
        value += result[0]
        error += result[1]
        if len(result) > 3:
            converged = False
            logger.warning(f"Quadratura não convergiu em [{a:.3g}, {b:.3g}]: {result[3]}")
    return QuadResult(value, error, converged)


def quad_ray_integral(mu, sigma, nu: float, origin, direction, spec: QuadratureSpec = QuadratureSpec()) -> QuadResult:
    """
    ∫ kernel3D(origin + s·d) ds ao longo do raio, centrado no ponto do raio
    mais próximo de μ.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("direction deve ser unitária")
    precision = np.linalg.inv(sigma)

    def kernel(s: float) -> float:
        delta = origin + s * direction - mu
        q = float(delta @ precision @ delta)
        return (1.0 + q / nu) ** (-(nu + 3.0) / 2.0)

    center = float((mu - origin) @ direction)
    scale = float(np.sqrt(np.max(np.linalg.eigvalsh(sigma))))
    half = spec.half_width * scale
    width = np.sqrt(nu) * scale
    return _integrate(kernel, center - half, center + half, [center - width, center, center + width], spec)


def quad_relocation_integral(o: float, sigma_1d: float, nu: float, n: int, spec: QuadratureSpec = QuadratureSpec()) -> QuadResult:
    """
    ∫ Σ_{i=1..N} o·T(x)·(1 − o·T(x))^(i−1) dx numa reta que passa pelo centro.

    Args:
        sigma_1d: variância ao longo da reta
    """
    if abs(o) >= 1.0:
        raise ValueError("|o| deve ser < 1")
    if n < 1:
        raise ValueError("N deve ser ≥ 1")

    def composite(x: float) -> float:
        T = (1.0 + x * x / (nu * sigma_1d)) ** (-(nu + 3.0) / 2.0)
        total, carry = 0.0, 1.0
        for _ in range(n):
            total += o * T * carry
            carry *= 1.0 - o * T
        return total

    sd = np.sqrt(sigma_1d)
    half = spec.half_width * sd
    width = np.sqrt(nu) * sd
    # integrando par: duas vezes a metade positiva
    result = _integrate(composite, 0.0, half, [0.1 * width, width, 10.0 * width], spec)
    return QuadResult(2.0 * result.value, 2.0 * result.error, result.converged)


def tail_bound(nu: float, sigma_1d: float, half_width: float) -> float:
    """Cota do trecho não integrado: ∫_{X}^∞ (x²/(νσ²))^(−(ν+3)/2) dx nas duas caudas."""
    sd = np.sqrt(sigma_1d)
    X = half_width * sd
    p = nu + 3.0
    a = np.sqrt(nu) * sd
    return float(2.0 * a**p * X ** (1.0 - p) / (p - 1.0))
