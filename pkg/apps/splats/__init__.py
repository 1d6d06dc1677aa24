from .models import Camera, Mixture, TComponent, sh_coeff_count
from .params import (
    covariance_of,
    eigenvalues_of,
    nu_derivative,
    nu_inverse,
    nu_of,
    opacity_derivative,
    opacity_inverse,
    opacity_of,
    quaternion_to_rotation,
    rotation_backward,
)
from .sh import rgb_to_sh0, sh_basis, sh_basis_jacobian, sh_to_color
from .tmath import (
    Projected2D,
    cutoff_radius,
    density2d,
    density3d,
    project_component,
    project_mixture,
    squared_mixture_eval,
)

__all__ = [
    "Camera",
    "Mixture",
    "TComponent",
    "sh_coeff_count",
    "covariance_of",
    "eigenvalues_of",
    "nu_derivative",
    "nu_inverse",
    "nu_of",
    "opacity_derivative",
    "opacity_inverse",
    "opacity_of",
    "quaternion_to_rotation",
    "rotation_backward",
    "rgb_to_sh0",
    "sh_basis",
    "sh_basis_jacobian",
    "sh_to_color",
    "Projected2D",
    "cutoff_radius",
    "density2d",
    "density3d",
    "project_component",
    "project_mixture",
    "squared_mixture_eval",
]
