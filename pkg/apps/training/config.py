"""
Hiperparâmetros de treino.

Valores padrão seguem a convenção de splatting (3DGS / 3DGS-MCMC) quando a
fonte não fixa números: pesos da loss, taxas do Adam, ε das posições.
"""

import hashlib
from typing import Literal, Optional

import orjson
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from apps.splats.params import NU_INIT, NU_MAX, NU_MIN, OPACITY_INIT


class TrainConfig(BaseModel):
    """Configuração completa de uma execução de treino."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # laço
    iterations: int = Field(30000, ge=0)
    seed: int = 0
    checkpoint_every: int = Field(5000, ge=0)
    log_every: int = Field(100, ge=1)
    sh_degree_max: int = Field(3, ge=0, le=3)
    sh_up_every: int = Field(1000, ge=1)

    # posições (SGHMC)
    sampler: Literal["sghmc", "adam"] = "sghmc"
    position_lr_init: float = 1.6e-4
    position_lr_final_ratio: float = 0.01
    friction: float = Field(1.0, ge=0.0)
    gate_k: float = 100.0
    gate_t: float = 0.005
    burn_in_frac: float = Field(0.5, ge=0.0, le=1.0)
    noise_mode: Literal["variance", "std"] = "variance"
    burnin_noise: Literal["sqrt", "covariance"] = "sqrt"

    # Adam
    lr_log_scale: float = 0.005
    lr_rotation: float = 0.001
    lr_sh: float = 0.0025
    lr_opacity: float = 0.05
    lr_nu: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15

    # loss
    lambda_dssim: float = Field(0.2, ge=0.0, le=1.0)
    lambda_opacity: float = Field(0.01, ge=0.0)
    lambda_sigma: float = Field(0.01, ge=0.0)
    regularizer_reduction: Literal["sum", "mean"] = "sum"

    # ciclo de vida
    relocate_every: int = Field(100, ge=1)
    relocate_cap: float = 0.05
    relocate_until: Optional[int] = None
    dead_threshold: float = 0.005
    add_fraction: float = Field(0.05, ge=0.0)
    max_components: int = Field(1_000_000, ge=1)

    # componentes
    opacity_mode: Literal["signed", "positive"] = "signed"
    learn_nu: bool = True
    nu_init: float = NU_INIT
    nu_min: float = NU_MIN
    nu_max: float = NU_MAX
    nu_grad: Literal["full", "partial"] = "full"
    opacity_init: float = OPACITY_INIT

    # renderização
    tau: float = 1.0 / 255.0
    transmittance_floor: float = 1e-4
    tile_size: int = Field(16, ge=1)
    low_pass: float = Field(0.0, ge=0.0)
    background: tuple = (0.0, 0.0, 0.0)

    @field_validator(
        "position_lr_init",
        "position_lr_final_ratio",
        "lr_log_scale",
        "lr_rotation",
        "lr_sh",
        "lr_opacity",
        "lr_nu",
        "adam_eps",
        "gate_k",
    )
    @classmethod
    def positive_rate(cls, value: float) -> float:
        if value <= 0.0:
            raise ValueError("taxas e constantes devem ser positivas")
        return value

    @field_validator("relocate_cap")
    @classmethod
    def cap_range(cls, value: float) -> float:
        if not 0.0 < value <= 1.0:
            raise ValueError("relocate_cap deve estar em (0, 1]")
        return value

    @field_validator("tau", "dead_threshold", "transmittance_floor")
    @classmethod
    def open_unit(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError("valor deve estar em (0, 1)")
        return value

    @field_validator("adam_beta1", "adam_beta2")
    @classmethod
    def beta_range(cls, value: float) -> float:
        if not 0.0 <= value < 1.0:
            raise ValueError("β deve estar em [0, 1)")
        return value

    @field_validator("background")
    @classmethod
    def background_rgb(cls, value) -> tuple:
        value = tuple(float(v) for v in value)
        if len(value) != 3 or any(v < 0.0 or v > 1.0 for v in value):
            raise ValueError("background deve ser RGB em [0, 1]³")
        return value

    @model_validator(mode="after")
    def nu_bounds(self) -> "TrainConfig":
        if not NU_MIN <= self.nu_min < self.nu_max <= NU_MAX:
            raise ValueError(f"limites de ν fora de ordem: {self.nu_min}, {self.nu_max}")
        if not self.nu_min <= self.nu_init <= self.nu_max:
            raise ValueError(f"nu_init {self.nu_init} fora de [{self.nu_min}, {self.nu_max}]")
        if not 0.0 < abs(self.opacity_init) < 1.0:
            raise ValueError("opacity_init deve estar em (0, 1) em módulo")
        if self.opacity_mode == "positive" and self.opacity_init <= 0.0:
            raise ValueError("opacity_init deve ser positiva no modo positivo")
        return self

    @property
    def burn_in_until(self) -> int:
        return int(self.burn_in_frac * self.iterations)

    @property
    def relocation_stop(self) -> int:
        return self.iterations if self.relocate_until is None else self.relocate_until

    def config_hash(self) -> str:
        """SHA-256 do dump canônico (chaves ordenadas)."""
        payload = orjson.dumps(self.model_dump(mode="json"), option=orjson.OPT_SORT_KEYS)
        return hashlib.sha256(payload).hexdigest()
