"""
Testes para a leitura de cenas (JSON, PPM/PNG e PLY).
"""

from pathlib import Path

import numpy as np
import orjson
import pytest
from numpy.testing import assert_allclose

from apps.scenes.exceptions import (
    ImageDimensionError,
    MalformedSceneError,
    PlyFormatError,
    SceneError,
    SceneNotFoundError,
)
from apps.scenes.loaders import load_scene, read_image, read_ply, write_image


def write_ply(path: Path, points, colors=None):
    header = ["ply", "format ascii 1.0", f"element vertex {len(points)}", "property float x", "property float y", "property float z"]
    if colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    rows = []
    for i, p in enumerate(points):
        values = [f"{v:.6f}" for v in p]
        if colors is not None:
            values += [str(int(c)) for c in colors[i]]
        rows.append(" ".join(values))
    path.write_text("\n".join(header + ["end_header"] + rows) + "\n", encoding="utf-8")
    return path


def write_scene_fixture(root: Path, width=16, height=16, n_points=12, n_test=1, seed=0, image_size=None):
    """
    Cena pequena em disco: câmeras olhando para a origem a partir de z = −4,
    imagens com um disco colorido e uma nuvem de pontos no plano z = 0.

    Returns:
        caminho do JSON
    """
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    image_w, image_h = image_size or (width, height)
    ys, xs = np.mgrid[0:image_h, 0:image_w]
    disc = ((xs - image_w / 2) ** 2 + (ys - image_h / 2) ** 2 < (0.3 * image_w) ** 2).astype(np.float64)
    image = np.stack([0.8 * disc, 0.4 * disc, 0.2 + 0.0 * disc], axis=-1)

    cameras = []
    for index in range(1 + n_test):
        name = f"view_{index}.ppm"
        write_image(root / name, image)
        cameras.append(
            {
                "image": name,
                "width": width,
                "height": height,
                "fx": 2.0 * width,
                "fy": 2.0 * width,
                "cx": width / 2.0,
                "cy": height / 2.0,
                "rotation_wc": [1, 0, 0, 0, 1, 0, 0, 0, 1],
                "translation_wc": [0.02 * index, 0.0, 4.0],
                "split": "train" if index == 0 else "test",
            }
        )

    points = np.column_stack([rng.uniform(-0.6, 0.6, (n_points, 2)), np.zeros(n_points)])
    colors = rng.integers(0, 256, size=(n_points, 3))
    write_ply(root / "points.ply", points, colors)
    scene_path = root / "scene.json"
    scene_path.write_bytes(orjson.dumps({"extent": 1.5, "points": "points.ply", "cameras": cameras}))
    return scene_path


class TestImages:
    """Testes para leitura e gravação de imagens."""

    def test_ppm_round_trip_is_quantized(self, tmp_path):
        """Testa que PPM grava em 8 bits e lê de volta em [0, 1]."""
        rgb = np.random.default_rng(0).uniform(size=(5, 7, 3))
        path = write_image(tmp_path / "img.ppm", rgb)

        # Verificar cabeçalho P6
        assert path.read_bytes().startswith(b"P6")
        loaded = read_image(path)
        assert loaded.shape == (5, 7, 3)
        assert_allclose(loaded, np.round(rgb * 255) / 255, atol=1e-12)

    def test_png_by_suffix(self, tmp_path):
        """Testa gravação PNG pela extensão."""
        path = write_image(tmp_path / "img.png", np.full((4, 4, 3), 0.5))
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        assert read_image(path)[0, 0, 0] == pytest.approx(128 / 255)

    def test_values_clamped(self, tmp_path):
        """Testa que valores fora de [0, 1] são saturados na gravação."""
        rgb = np.array([[[-0.5, 1.5, 0.5]]])
        loaded = read_image(write_image(tmp_path / "c.ppm", rgb))
        assert loaded[0, 0, 0] == 0.0
        assert loaded[0, 0, 1] == 1.0

    def test_missing_image(self, tmp_path):
        """Testa erro para imagem inexistente."""
        with pytest.raises(SceneNotFoundError):
            read_image(tmp_path / "nada.ppm")

    def test_unreadable_image(self, tmp_path):
        """Testa erro para arquivo que não é imagem."""
        path = tmp_path / "lixo.ppm"
        path.write_bytes(b"isto nao e imagem")
        with pytest.raises(MalformedSceneError):
            read_image(path)


class TestPly:
    """Testes para o leitor de PLY ASCII."""

    def test_points_and_colors(self, tmp_path):
        """Testa leitura de posições e cores uchar normalizadas."""
        path = write_ply(tmp_path / "p.ply", [[0, 1, 2], [3, 4, 5]], [[255, 0, 51], [0, 255, 0]])
        points, colors = read_ply(path)
        assert_allclose(points, [[0, 1, 2], [3, 4, 5]])
        assert_allclose(colors[0], [1.0, 0.0, 0.2])

    def test_points_without_colors(self, tmp_path):
        """Testa PLY sem cor → colors None."""
        points, colors = read_ply(write_ply(tmp_path / "p.ply", [[0, 0, 0]]))
        assert points.shape == (1, 3)
        assert colors is None

    def test_missing_xyz(self, tmp_path):
        """Testa PLY sem coordenadas de vértice."""
        path = tmp_path / "p.ply"
        path.write_text("ply\nformat ascii 1.0\nelement vertex 1\nproperty float a\nend_header\n1\n", encoding="utf-8")
        with pytest.raises(PlyFormatError):
            read_ply(path)

    def test_binary_rejected(self, tmp_path):
        """Testa que PLY binário é recusado."""
        path = tmp_path / "p.ply"
        path.write_text("ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n", encoding="utf-8")
        with pytest.raises(PlyFormatError):
            read_ply(path)

    def test_truncated_body(self, tmp_path):
        """Testa PLY que declara mais vértices do que contém."""
        path = write_ply(tmp_path / "p.ply", [[0, 0, 0]])
        text = path.read_text(encoding="utf-8").replace("element vertex 1", "element vertex 3")
        path.write_text(text, encoding="utf-8")
        with pytest.raises(PlyFormatError):
            read_ply(path)


class TestLoadScene:
    """Testes para load_scene."""

    def test_loads_fixture(self, tmp_path):
        """Testa carga completa: câmeras, splits, imagens e pontos."""
        scene = load_scene(write_scene_fixture(tmp_path, n_test=2))

        assert len(scene.cameras) == 3
        assert len(scene.train_cameras) == 1
        assert len(scene.test_cameras) == 2
        assert scene.cameras[0].image.shape == (16, 16, 3)
        assert scene.points.shape == (12, 3)
        assert np.all((scene.colors >= 0.0) & (scene.colors <= 1.0))
        assert scene.extent == 1.5

    def test_without_images(self, tmp_path):
        """Testa load_images=False."""
        scene = load_scene(write_scene_fixture(tmp_path), load_images=False)
        assert scene.cameras[0].image is None

    def test_dimension_mismatch(self, tmp_path):
        """Testa imagem com tamanho diferente do declarado na câmera."""
        path = write_scene_fixture(tmp_path, image_size=(12, 16))
        with pytest.raises(ImageDimensionError):
            load_scene(path)

    def test_missing_scene(self, tmp_path):
        """Testa cena inexistente; o erro também é FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            load_scene(tmp_path / "nada.json")

    def test_malformed_json(self, tmp_path):
        """Testa JSON inválido."""
        path = tmp_path / "scene.json"
        path.write_text("{nao e json", encoding="utf-8")
        with pytest.raises(MalformedSceneError):
            load_scene(path)

    def test_schema_violation(self, tmp_path):
        """Testa descritor sem câmera de treino."""
        path = write_scene_fixture(tmp_path)
        data = orjson.loads(path.read_bytes())
        for camera in data["cameras"]:
            camera["split"] = "test"
        path.write_bytes(orjson.dumps(data))
        with pytest.raises(MalformedSceneError):
            load_scene(path)

    def test_non_orthonormal_rotation(self, tmp_path):
        """Testa câmera com rotação não ortonormal."""
        path = write_scene_fixture(tmp_path)
        data = orjson.loads(path.read_bytes())
        data["cameras"][0]["rotation_wc"] = [2, 0, 0, 0, 1, 0, 0, 0, 1]
        path.write_bytes(orjson.dumps(data))
        with pytest.raises(SceneError):
            load_scene(path)
