"""
Leitura de cenas: descritor JSON, imagens PPM/PNG (Pillow) e pontos em PLY ASCII.
"""

import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import orjson
from PIL import Image, UnidentifiedImageError
from pydantic import ValidationError

from .exceptions import ImageDimensionError, MalformedSceneError, PlyFormatError, SceneNotFoundError
from .models import SceneCamera, SceneDocument, SceneSpec

logger = logging.getLogger("scenes.loader")

PathLike = Union[str, Path]

_PLY_INTEGER_TYPES = {"uchar", "uint8", "char", "int8", "ushort", "uint16", "short", "int16", "uint", "int"}


def read_image(path: PathLike) -> np.ndarray:
    """Lê PPM (P6) ou PNG como float64 (H, W, 3) em [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise SceneNotFoundError(f"Imagem não encontrada: {path}")
    try:
        with Image.open(path) as img:
            data = np.asarray(img.convert("RGB"), dtype=np.float64)
    except (UnidentifiedImageError, OSError) as exc:
        raise MalformedSceneError(f"Imagem ilegível {path}: {exc}") from exc
    return data / 255.0


def write_image(path: PathLike, rgb: np.ndarray) -> Path:
    """
    Grava a imagem quantizada em 8 bits.

    O formato vem da extensão: .ppm gera P6 binário com maxval 255, .png gera PNG.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.round(np.asarray(rgb, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    image_format = "PNG" if path.suffix.lower() == ".png" else "PPM"
    Image.fromarray(data).save(path, format=image_format)
    return path


def read_ply(path: PathLike) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Lê vértices de um PLY ASCII.

    Returns:
        (posições (P, 3), cores (P, 3) em [0, 1] ou None sem red/green/blue)
    """
    path = Path(path)
    if not path.exists():
        raise SceneNotFoundError(f"PLY não encontrado: {path}")

    lines = path.read_text(encoding="utf-8", errors="replace").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyFormatError(f"{path} não começa com 'ply'")

    vertex_count = None
    properties = []
    in_vertex = False
    header_end = None
    for i, line in enumerate(lines[1:], start=1):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "format" and tokens[1] != "ascii":
            raise PlyFormatError(f"Formato PLY {tokens[1]} não suportado (apenas ascii)")
        if tokens[0] == "element":
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                vertex_count = int(tokens[2])
        elif tokens[0] == "property" and in_vertex:
            properties.append((tokens[-1], tokens[1]))
        elif tokens[0] == "end_header":
            header_end = i
            break

    if header_end is None:
        raise PlyFormatError(f"{path} sem end_header")
    names = [name for name, _ in properties]
    if vertex_count is None or not all(axis in names for axis in ("x", "y", "z")):
        raise PlyFormatError(f"{path} sem posições de vértice (x, y, z)")

    rows = lines[header_end + 1 : header_end + 1 + vertex_count]
    if len(rows) < vertex_count:
        raise PlyFormatError(f"{path} declara {vertex_count} vértices, contém {len(rows)}")
    try:
        table = np.array([[float(v) for v in row.split()[: len(names)]] for row in rows], dtype=np.float64)
    except ValueError as exc:
        raise PlyFormatError(f"Valor inválido em {path}: {exc}") from exc
    table = table.reshape(vertex_count, len(names))

    column = {name: j for j, name in enumerate(names)}
    points = table[:, [column["x"], column["y"], column["z"]]]
    colors = None
    if all(c in column for c in ("red", "green", "blue")):
        colors = table[:, [column["red"], column["green"], column["blue"]]]
        kinds = dict(properties)
        if kinds["red"] in _PLY_INTEGER_TYPES:
            colors = colors / 255.0
    return points, colors


def load_scene(path: PathLike, load_images: bool = True) -> SceneSpec:
    """
    Carrega o descritor JSON, as imagens de cada câmera e os pontos iniciais.

    Caminhos relativos são resolvidos a partir do diretório do JSON.
    """
    path = Path(path)
    if not path.exists():
        raise SceneNotFoundError(f"Cena não encontrada: {path}")
    try:
        document = SceneDocument.model_validate(orjson.loads(path.read_bytes()))
    except orjson.JSONDecodeError as exc:
        raise MalformedSceneError(f"JSON inválido em {path}: {exc}") from exc
    except ValidationError as exc:
        raise MalformedSceneError(f"Cena fora do esquema em {path}: {exc}") from exc

    base = path.parent
    cameras = []
    for entry in document.cameras:
        try:
            camera = entry.to_camera()
        except ValueError as exc:
            raise MalformedSceneError(f"Câmera inválida ({entry.image}): {exc}") from exc
        image_path = base / entry.image
        image = None
        if load_images:
            image = read_image(image_path)
            if image.shape[:2] != (entry.height, entry.width):
                raise ImageDimensionError(
                    f"{image_path} tem {image.shape[1]}x{image.shape[0]}, câmera declara {entry.width}x{entry.height}"
                )
        cameras.append(SceneCamera(camera=camera, image=image, image_path=str(image_path), split=entry.split))

    points, colors = read_ply(base / document.points)
    logger.info(f"Cena {path.name}: {len(cameras)} câmeras, {len(points)} pontos")
    return SceneSpec(cameras=cameras, points=points, colors=colors, extent=document.extent)
