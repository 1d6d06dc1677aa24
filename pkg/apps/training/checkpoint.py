"""
Checkpoint em um único documento JSON (orjson).

Floats saem na menor representação decimal que faz round-trip, então
salvar → carregar → salvar reproduz os mesmos bytes.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

import orjson

from apps.splats.models import Mixture

from .sampler import SamplerState

logger = logging.getLogger("training.checkpoint")

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    mixture: Mixture
    state: Optional[SamplerState]
    iteration: int
    config_hash: str
    config: Optional[Dict] = None

    def to_dict(self) -> Dict:
        return {
            "version": FORMAT_VERSION,
            "iteration": self.iteration,
            "config_hash": self.config_hash,
            "config": self.config,
            "mixture": self.mixture.to_dict(),
            "sampler": None if self.state is None else self.state.to_dict(),
        }

    def dumps(self) -> bytes:
        return orjson.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: Dict) -> "Checkpoint":
        if data.get("version") != FORMAT_VERSION:
            raise ValueError(f"Versão de checkpoint não suportada: {data.get('version')}")
        mixture = Mixture.from_dict(data["mixture"])
        sampler = data.get("sampler")
        return cls(
            mixture=mixture,
            state=None if sampler is None else SamplerState.from_dict(sampler, mixture),
            iteration=data["iteration"],
            config_hash=data["config_hash"],
            config=data.get("config"),
        )


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint.dumps())
    logger.info(f"Checkpoint salvo em {path} (iteração {checkpoint.iteration}, {len(checkpoint.mixture)} componentes)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint não encontrado: {path}")
    try:
        data = orjson.loads(path.read_bytes())
    except orjson.JSONDecodeError as exc:
        raise ValueError(f"Checkpoint ilegível {path}: {exc}") from exc
    return Checkpoint.from_dict(data)
