from .exceptions import (
    ImageDimensionError,
    MalformedSceneError,
    PlyFormatError,
    SceneError,
    SceneNotFoundError,
)
from .loaders import load_scene, read_image, read_ply, write_image
from .models import SceneCamera, SceneSpec

__all__ = [
    "ImageDimensionError",
    "MalformedSceneError",
    "PlyFormatError",
    "SceneError",
    "SceneNotFoundError",
    "load_scene",
    "read_image",
    "read_ply",
    "write_image",
    "SceneCamera",
    "SceneSpec",
]
