"""Erros de ingestão de cena, um diagnóstico por tipo de falha."""


class SceneError(ValueError):
    """Base para falhas ao carregar uma cena."""


class SceneNotFoundError(SceneError, FileNotFoundError):
    """Descritor, imagem ou PLY inexistente."""


class MalformedSceneError(SceneError):
    """JSON inválido ou fora do esquema."""


class ImageDimensionError(SceneError):
    """Imagem não bate com width/height declarados na câmera."""


class PlyFormatError(SceneError):
    """PLY sem posições de vértice ou com cabeçalho inválido."""
