"""
Harmônicos esféricos reais (graus 0–3) para cor dependente da vista.

Mesma base e constantes do splatting clássico; cor = max(0, Σ c_k Y_k(d) + 0.5).
"""

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

COLOR_OFFSET = 0.5


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """
    Avalia a base SH.

    Args:
        dirs: (K, 3) direções unitárias
        degree: grau máximo (0..3)

    Returns:
        np.ndarray (K, (degree+1)²)
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    cols = [np.full_like(x, SH_C0)]
    if degree >= 1:
        cols += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        cols += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        cols += [
            SH_C3[0] * y * (3.0 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4.0 * zz - xx - yy),
            SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            SH_C3[4] * x * (4.0 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3.0 * yy),
        ]
    return np.stack(cols, axis=-1)


def sh_basis_jacobian(dirs: np.ndarray, degree: int) -> np.ndarray:
    """∂Y_k/∂d para cada direção: (K, (degree+1)², 3)."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    zero = np.zeros_like(x)
    rows = [(zero, zero, zero)]
    if degree >= 1:
        rows += [
            (zero, -SH_C1 + zero, zero),
            (zero, zero, SH_C1 + zero),
            (-SH_C1 + zero, zero, zero),
        ]
    if degree >= 2:
        rows += [
            (SH_C2[0] * y, SH_C2[0] * x, zero),
            (zero, SH_C2[1] * z, SH_C2[1] * y),
            (-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z),
            (SH_C2[3] * z, zero, SH_C2[3] * x),
            (2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, zero),
        ]
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        rows += [
            (SH_C3[0] * 6.0 * x * y, SH_C3[0] * (3.0 * xx - 3.0 * yy), zero),
            (SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y),
            (-2.0 * SH_C3[2] * x * y, SH_C3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * SH_C3[2] * y * z),
            (-6.0 * SH_C3[3] * x * z, -6.0 * SH_C3[3] * y * z, SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)),
            (SH_C3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * SH_C3[4] * x * y, 8.0 * SH_C3[4] * x * z),
            (2.0 * SH_C3[5] * x * z, -2.0 * SH_C3[5] * y * z, SH_C3[5] * (xx - yy)),
            (SH_C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * SH_C3[6] * x * y, zero),
        ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=1)


def sh_to_color(sh_coeffs: np.ndarray, view_dir: np.ndarray, degree: int) -> np.ndarray:
    """
    Cor RGB de um componente vista da direção `view_dir`.

    Args:
        sh_coeffs: (n, 3) coeficientes por canal
        view_dir: direção unitária (3,)
        degree: grau usado na avaliação

    Returns:
        np.ndarray (3,) com max(0, SH + 0.5)
    """
    sh_coeffs = np.asarray(sh_coeffs, dtype=np.float64).reshape(-1, 3)
    needed = (degree + 1) ** 2
    if needed > sh_coeffs.shape[0]:
        raise ValueError(
            f"Grau SH {degree} exige {needed} coeficientes, componente tem {sh_coeffs.shape[0]}"
        )
    basis = sh_basis(np.asarray(view_dir, dtype=np.float64)[None, :], degree)[0]
    return np.maximum(0.0, basis @ sh_coeffs[:needed] + COLOR_OFFSET)


def rgb_to_sh0(rgb: np.ndarray) -> np.ndarray:
    """Inverso de sh_to_color no grau 0: (c − 0.5)/Y₀₀."""
    return (np.asarray(rgb, dtype=np.float64) - COLOR_OFFSET) / SH_C0
