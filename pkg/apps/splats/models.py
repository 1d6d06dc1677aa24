"""
Modelo de dados: componentes t com sinal, a mistura e a câmera pinhole.

A mistura guarda os parâmetros em arrays (estrutura de arrays) porque o
renderizador e o otimizador trabalham em lote; TComponent é a visão por
componente usada na API pública e nos testes.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .params import (
    NU_INIT,
    OPACITY_INIT,
    OPACITY_SIGNED,
    covariances_from,
    normalize_quaternions,
    nu_inverse,
    nu_of,
    opacity_inverse,
    opacity_of,
)

MAX_SH_DEGREE = 3


def sh_coeff_count(degree: int) -> int:
    return (degree + 1) ** 2


@dataclass
class TComponent:
    """Um componente da mistura: posição, forma, cauda ν, opacidade e cor SH."""

    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    raw_nu: float
    raw_opacity: float
    sh_coeffs: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.raw_nu = float(self.raw_nu)
        self.raw_opacity = float(self.raw_opacity)
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=np.float64).reshape(-1, 3)

    @property
    def nu(self) -> float:
        return nu_of(self.raw_nu)

    def opacity(self, mode: str = OPACITY_SIGNED) -> float:
        return opacity_of(self.raw_opacity, mode)

    @classmethod
    def create(
        cls,
        position,
        scale=1.0,
        rotation=(1.0, 0.0, 0.0, 0.0),
        nu: float = NU_INIT,
        opacity: float = OPACITY_INIT,
        sh_coeffs=None,
        sh_degree: int = 0,
        mode: str = OPACITY_SIGNED,
    ) -> "TComponent":
        """Atalho com parâmetros já restritos (ν, o, escala linear)."""
        scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), (3,))
        if sh_coeffs is None:
            sh_coeffs = np.zeros((sh_coeff_count(sh_degree), 3))
        raw_nu = nu_inverse(nu) if nu < 10000.0 else 10000.0
        return cls(
            position=position,
            log_scale=np.log(scale),
            rotation=rotation,
            raw_nu=raw_nu,
            raw_opacity=opacity_inverse(opacity, mode),
            sh_coeffs=sh_coeffs,
        )


@dataclass
class Mixture:
    """
    Coleção ordenada de componentes + cor de fundo e grau SH ativo.

    Arrays (K = número de componentes, n = (max_sh_degree+1)²):
        positions (K, 3), log_scales (K, 3), rotations (K, 4),
        raw_nu (K,), raw_opacity (K,), sh (K, n, 3)
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    raw_nu: np.ndarray
    raw_opacity: np.ndarray
    sh: np.ndarray
    sh_degree: int = 0
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    opacity_mode: str = OPACITY_SIGNED

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(-1, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4)
        self.raw_nu = np.asarray(self.raw_nu, dtype=np.float64).reshape(-1)
        self.raw_opacity = np.asarray(self.raw_opacity, dtype=np.float64).reshape(-1)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        sh = np.asarray(self.sh, dtype=np.float64)
        if sh.size == 0:
            sh = sh.reshape(0, sh_coeff_count(self.sh_degree), 3)
        self.sh = sh
        self.validate()

    def validate(self):
        k = len(self.positions)
        for name in ("log_scales", "rotations", "raw_nu", "raw_opacity", "sh"):
            if len(getattr(self, name)) != k:
                raise ValueError(f"Mixture.{name} com {len(getattr(self, name))} linhas, esperado {k}")
        if not 0 <= self.sh_degree <= MAX_SH_DEGREE:
            raise ValueError(f"sh_degree {self.sh_degree} fora de 0..{MAX_SH_DEGREE}")
        n = self.sh.shape[1]
        stored = int(round(np.sqrt(n))) - 1
        if sh_coeff_count(stored) != n or stored < self.sh_degree:
            raise ValueError(
                f"sh com {n} coeficientes incompatível com sh_degree {self.sh_degree}"
            )
        if np.any(self.background < 0.0) or np.any(self.background > 1.0):
            raise ValueError("background deve estar em [0, 1]³")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def max_sh_degree(self) -> int:
        return int(round(np.sqrt(self.sh.shape[1]))) - 1

    @classmethod
    def empty(cls, sh_degree: int = 0, max_sh_degree: Optional[int] = None, background=(0.0, 0.0, 0.0), opacity_mode: str = OPACITY_SIGNED) -> "Mixture":
        n = sh_coeff_count(sh_degree if max_sh_degree is None else max_sh_degree)
        return cls(
            positions=np.zeros((0, 3)),
            log_scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            raw_nu=np.zeros(0),
            raw_opacity=np.zeros(0),
            sh=np.zeros((0, n, 3)),
            sh_degree=sh_degree,
            background=background,
            opacity_mode=opacity_mode,
        )

    @classmethod
    def from_components(
        cls,
        components: List[TComponent],
        sh_degree: int = 0,
        background=(0.0, 0.0, 0.0),
        opacity_mode: str = OPACITY_SIGNED,
    ) -> "Mixture":
        if not components:
            return cls.empty(sh_degree, background=background, opacity_mode=opacity_mode)
        n = max(c.sh_coeffs.shape[0] for c in components)
        sh = np.zeros((len(components), n, 3))
        for i, c in enumerate(components):
            sh[i, : c.sh_coeffs.shape[0]] = c.sh_coeffs
        return cls(
            positions=np.stack([c.position for c in components]),
            log_scales=np.stack([c.log_scale for c in components]),
            rotations=np.stack([c.rotation for c in components]),
            raw_nu=np.array([c.raw_nu for c in components]),
            raw_opacity=np.array([c.raw_opacity for c in components]),
            sh=sh,
            sh_degree=sh_degree,
            background=background,
            opacity_mode=opacity_mode,
        )

    def component(self, index: int) -> TComponent:
        return TComponent(
            position=self.positions[index].copy(),
            log_scale=self.log_scales[index].copy(),
            rotation=self.rotations[index].copy(),
            raw_nu=self.raw_nu[index],
            raw_opacity=self.raw_opacity[index],
            sh_coeffs=self.sh[index].copy(),
        )

    def components(self) -> List[TComponent]:
        return [self.component(i) for i in range(len(self))]

    def opacities(self) -> np.ndarray:
        return np.asarray(opacity_of(self.raw_opacity, self.opacity_mode)).reshape(-1)

    def nus(self) -> np.ndarray:
        return np.asarray(nu_of(self.raw_nu)).reshape(-1)

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def covariances(self) -> np.ndarray:
        return covariances_from(self.log_scales, self.rotations)

    def normalize_rotations(self):
        self.rotations = normalize_quaternions(self.rotations)

    def copy(self) -> "Mixture":
        return Mixture(
            positions=self.positions.copy(),
            log_scales=self.log_scales.copy(),
            rotations=self.rotations.copy(),
            raw_nu=self.raw_nu.copy(),
            raw_opacity=self.raw_opacity.copy(),
            sh=self.sh.copy(),
            sh_degree=self.sh_degree,
            background=self.background.copy(),
            opacity_mode=self.opacity_mode,
        )

    def append(self, other: "Mixture"):
        """Anexa os componentes de `other` (mesmo layout SH) ao final."""
        if other.sh.shape[1] != self.sh.shape[1]:
            raise ValueError("Layouts SH diferentes ao anexar componentes")
        self.positions = np.concatenate([self.positions, other.positions])
        self.log_scales = np.concatenate([self.log_scales, other.log_scales])
        self.rotations = np.concatenate([self.rotations, other.rotations])
        self.raw_nu = np.concatenate([self.raw_nu, other.raw_nu])
        self.raw_opacity = np.concatenate([self.raw_opacity, other.raw_opacity])
        self.sh = np.concatenate([self.sh, other.sh])

    def to_dict(self) -> Dict:
        """Parâmetros brutos na ordem declarada (usado pelo checkpoint)."""
        return {
            "sh_degree": self.sh_degree,
            "max_sh_degree": self.max_sh_degree,
            "opacity_mode": self.opacity_mode,
            "background": self.background.tolist(),
            "positions": self.positions.tolist(),
            "log_scales": self.log_scales.tolist(),
            "rotations": self.rotations.tolist(),
            "raw_nu": self.raw_nu.tolist(),
            "raw_opacity": self.raw_opacity.tolist(),
            "sh": self.sh.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Mixture":
        n = sh_coeff_count(data.get("max_sh_degree", data.get("sh_degree", 0)))
        return cls(
            positions=np.array(data["positions"], dtype=np.float64).reshape(-1, 3),
            log_scales=np.array(data["log_scales"], dtype=np.float64).reshape(-1, 3),
            rotations=np.array(data["rotations"], dtype=np.float64).reshape(-1, 4),
            raw_nu=np.array(data["raw_nu"], dtype=np.float64),
            raw_opacity=np.array(data["raw_opacity"], dtype=np.float64),
            sh=np.array(data["sh"], dtype=np.float64).reshape(-1, n, 3),
            sh_degree=data.get("sh_degree", 0),
            background=data.get("background", [0.0, 0.0, 0.0]),
            opacity_mode=data.get("opacity_mode", OPACITY_SIGNED),
        )


@dataclass
class Camera:
    """
    Câmera pinhole: p_cam = R_wc·x + t_wc, u = fx·p_x/p_z + cx, v = fy·p_y/p_z + cy.
    """

    rotation_wc: np.ndarray
    translation_wc: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    z_near: float = 0.01

    def __post_init__(self):
        self.rotation_wc = np.asarray(self.rotation_wc, dtype=np.float64).reshape(3, 3)
        self.translation_wc = np.asarray(self.translation_wc, dtype=np.float64).reshape(3)
        self.fx, self.fy = float(self.fx), float(self.fy)
        self.cx, self.cy = float(self.cx), float(self.cy)
        self.width, self.height = int(self.width), int(self.height)
        self.z_near = float(self.z_near)

        if not np.allclose(self.rotation_wc @ self.rotation_wc.T, np.eye(3), rtol=0.0, atol=1e-6):
            raise ValueError("rotation_wc deve ser ortonormal (tolerância 1e-6)")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("fx e fy devem ser positivos")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("width e height devem ser positivos")
        if self.z_near <= 0:
            raise ValueError("z_near deve ser positivo")

    @property
    def center(self) -> np.ndarray:
        """Centro da câmera em coordenadas de mundo: −Rᵀ t."""
        return -self.rotation_wc.T @ self.translation_wc

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation_wc.T + self.translation_wc

    def to_dict(self) -> Dict:
        return {
            "rotation_wc": self.rotation_wc.reshape(-1).tolist(),
            "translation_wc": self.translation_wc.tolist(),
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "z_near": self.z_near,
        }

    @classmethod
    def fronto_parallel(cls, width: int, height: int, focal: Optional[float] = None) -> "Camera":
        """Câmera na origem olhando para +z; o plano z=1 cobre a imagem inteira em x ∈ [−½, ½]."""
        focal = float(width) if focal is None else focal
        return cls(
            rotation_wc=np.eye(3),
            translation_wc=np.zeros(3),
            fx=focal,
            fy=focal,
            cx=width / 2.0,
            cy=height / 2.0,
            width=width,
            height=height,
        )
