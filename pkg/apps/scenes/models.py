"""
Esquema da cena: JSON validado por pydantic e a cena já carregada.

    {"extent": float, "points": "pontos.ply",
     "cameras": [{"image": "img.ppm", "width": W, "height": H,
                  "fx", "fy", "cx", "cy": float,
                  "rotation_wc": [9 floats, row-major], "translation_wc": [3 floats],
                  "split": "train" | "test"}]}
"""

from dataclasses import dataclass
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator

from apps.splats.models import Camera


class CameraEntry(BaseModel):
    image: str
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    rotation_wc: List[float]
    translation_wc: List[float]
    split: Literal["train", "test"] = "train"
    z_near: float = Field(0.01, gt=0)

    @field_validator("rotation_wc")
    @classmethod
    def nine_entries(cls, value: List[float]) -> List[float]:
        if len(value) != 9:
            raise ValueError("rotation_wc precisa de 9 valores (row-major)")
        return value

    @field_validator("translation_wc")
    @classmethod
    def three_entries(cls, value: List[float]) -> List[float]:
        if len(value) != 3:
            raise ValueError("translation_wc precisa de 3 valores")
        return value

    def to_camera(self) -> Camera:
        return Camera(
            rotation_wc=np.array(self.rotation_wc).reshape(3, 3),
            translation_wc=self.translation_wc,
            fx=self.fx,
            fy=self.fy,
            cx=self.cx,
            cy=self.cy,
            width=self.width,
            height=self.height,
            z_near=self.z_near,
        )


class SceneDocument(BaseModel):
    extent: float = Field(gt=0)
    cameras: List[CameraEntry]
    points: str

    @field_validator("cameras")
    @classmethod
    def has_train_camera(cls, value: List[CameraEntry]) -> List[CameraEntry]:
        if not any(c.split == "train" for c in value):
            raise ValueError("a cena precisa de ao menos uma câmera de treino")
        return value


@dataclass
class SceneCamera:
    camera: Camera
    image: Optional[np.ndarray]  # (H, W, 3) em [0, 1]
    image_path: str = ""
    split: str = "train"


@dataclass
class SceneSpec:
    """Cena carregada: câmeras com imagens, pontos iniciais e extensão."""

    cameras: List[SceneCamera]
    points: np.ndarray  # (P, 3)
    colors: Optional[np.ndarray]  # (P, 3) em [0, 1]
    extent: float

    @property
    def train_cameras(self) -> List[SceneCamera]:
        return [c for c in self.cameras if c.split == "train"]

    @property
    def test_cameras(self) -> List[SceneCamera]:
        return [c for c in self.cameras if c.split == "test"]
