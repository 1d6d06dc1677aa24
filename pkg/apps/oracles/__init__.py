"""
Oráculos independentes usados pelos testes: quadratura, diferenças finitas
e composição de referência sem tiles.
"""

from .finite_diff import finite_diff, finite_diff_mixture
from .quadrature import QuadratureSpec, quad_ray_integral, quad_relocation_integral
from .reference import direct_beta_K, reference_composite

__all__ = [
    "finite_diff",
    "finite_diff_mixture",
    "QuadratureSpec",
    "quad_ray_integral",
    "quad_relocation_integral",
    "direct_beta_K",
    "reference_composite",
]
