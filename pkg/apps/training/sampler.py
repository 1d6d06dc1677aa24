"""
Otimizadores: SGHMC com gate nas posições e Adam nos demais parâmetros.

Atualização das posições (massa = identidade):

    μ ← μ − ε²·g + σ(o)·ε(1 − εC)·r + σ(o)·N,   N ~ 𝒩(0, 2ε^(3/2)·C)
    r ← r − ε·g − εC·r + 𝒩(0, 2εC)

com σ(o) = sigmoid(−k(|o| − t)). No burn-in o termo de momento F = σ(o)·ε(1 − εC)·r sai da
atualização de μ e o ruído é moldado pela forma do componente.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np
from scipy.special import expit

from apps.rendering.backward import ParamGrads
from apps.splats.models import Mixture
from apps.splats.params import clamp_raw_nu, normalize_quaternions, quaternion_to_rotation

from .config import TrainConfig

logger = logging.getLogger("training.sampler")

# grupo do Adam → (atributo da mistura, atributo de ParamGrads, taxa no config)
ADAM_GROUPS = {
    "log_scale": ("log_scales", "d_log_scale", "lr_log_scale"),
    "rotation": ("rotations", "d_rotation", "lr_rotation"),
    "sh": ("sh", "d_sh", "lr_sh"),
    "raw_opacity": ("raw_opacity", "d_raw_opacity", "lr_opacity"),
    "raw_nu": ("raw_nu", "d_raw_nu", "lr_nu"),
    "position": ("positions", "d_position", None),
}


def _zeros_like_groups(mixture: Mixture) -> Dict[str, np.ndarray]:
    return {name: np.zeros_like(getattr(mixture, attr)) for name, (attr, _, _) in ADAM_GROUPS.items()}


@dataclass
class SamplerState:
    """Estado do otimizador: momentos, contadores e o gerador aleatório."""

    momentum: np.ndarray
    adam_m: Dict[str, np.ndarray]
    adam_v: Dict[str, np.ndarray]
    rng: np.random.Generator = field(repr=False)
    iteration: int = 0
    adam_steps: int = 0
    epsilon: float = 1.6e-4
    friction: float = 1.0
    burn_in_until: int = 0

    @classmethod
    def create(cls, mixture: Mixture, config: TrainConfig, epsilon: float) -> "SamplerState":
        return cls(
            momentum=np.zeros((len(mixture), 3)),
            adam_m=_zeros_like_groups(mixture),
            adam_v=_zeros_like_groups(mixture),
            rng=np.random.default_rng(config.seed),
            epsilon=epsilon,
            friction=config.friction,
            burn_in_until=config.burn_in_until,
        )

    @property
    def in_burn_in(self) -> bool:
        return self.iteration < self.burn_in_until

    def reset_rows(self, indices: Iterable[int]):
        """Zera momento e momentos do Adam das linhas indicadas."""
        idx = np.asarray(list(indices), dtype=np.int64)
        if idx.size == 0:
            return
        self.momentum[idx] = 0.0
        for moments in (self.adam_m, self.adam_v):
            for array in moments.values():
                array[idx] = 0.0

    def grow(self, mixture: Mixture):
        """Acrescenta linhas zeradas até acompanhar o tamanho da mistura."""
        extra = len(mixture) - len(self.momentum)
        if extra <= 0:
            return
        self.momentum = np.concatenate([self.momentum, np.zeros((extra, 3))])
        for moments in (self.adam_m, self.adam_v):
            for name, array in moments.items():
                attr = ADAM_GROUPS[name][0]
                pad = np.zeros((extra,) + getattr(mixture, attr).shape[1:])
                moments[name] = np.concatenate([array, pad])

    def to_dict(self) -> Dict:
        state = self.rng.bit_generator.state
        return {
            "iteration": self.iteration,
            "adam_steps": self.adam_steps,
            "epsilon": self.epsilon,
            "friction": self.friction,
            "burn_in_until": self.burn_in_until,
            "momentum": self.momentum.tolist(),
            "adam_m": {name: array.tolist() for name, array in self.adam_m.items()},
            "adam_v": {name: array.tolist() for name, array in self.adam_v.items()},
            # inteiros de 128 bits do PCG64 não cabem em JSON numérico
            "rng": {
                "bit_generator": state["bit_generator"],
                "state": str(state["state"]["state"]),
                "inc": str(state["state"]["inc"]),
                "has_uint32": state["has_uint32"],
                "uinteger": state["uinteger"],
            },
        }

    @classmethod
    def from_dict(cls, data: Dict, mixture: Mixture) -> "SamplerState":
        rng = np.random.Generator(np.random.PCG64())
        raw = data["rng"]
        rng.bit_generator.state = {
            "bit_generator": raw["bit_generator"],
            "state": {"state": int(raw["state"]), "inc": int(raw["inc"])},
            "has_uint32": raw["has_uint32"],
            "uinteger": raw["uinteger"],
        }

        def restore(moments: Dict) -> Dict[str, np.ndarray]:
            out = {}
            for name, (attr, _, _) in ADAM_GROUPS.items():
                shape = getattr(mixture, attr).shape
                out[name] = np.array(moments[name], dtype=np.float64).reshape(shape)
            return out

        return cls(
            momentum=np.array(data["momentum"], dtype=np.float64).reshape(len(mixture), 3),
            adam_m=restore(data["adam_m"]),
            adam_v=restore(data["adam_v"]),
            rng=rng,
            iteration=data["iteration"],
            adam_steps=data["adam_steps"],
            epsilon=data["epsilon"],
            friction=data["friction"],
            burn_in_until=data["burn_in_until"],
        )


def gate(o, k: float = 100.0, t_gate: float = 0.005):
    """σ(o) = sigmoid(−k·(|o| − t)); ≈1 para |o| baixo, ≈0 perto da saturação."""
    value = expit(-k * (np.abs(np.asarray(o, dtype=np.float64)) - t_gate))
    return float(value) if np.ndim(value) == 0 else value


def lr_schedule(iteration: int, config: TrainConfig, extent: float = 1.0) -> float:
    """ε(i) = ε₀·(ε_final/ε₀)^(i/I_max), com ε₀ proporcional à extensão da cena."""
    eps0 = config.position_lr_init * extent
    if config.iterations == 0:
        return eps0
    t = min(max(iteration / config.iterations, 0.0), 1.0)
    return float(eps0 * config.position_lr_final_ratio**t)


def shape_noise(z: np.ndarray, mixture: Mixture, mode: str = "sqrt") -> np.ndarray:
    """
    Molda sorteios 𝒩(0, I) pela forma de cada componente.

    sqrt: R·S·z, covariância resultante exatamente Σ.
    covariance: Σ·z.
    """
    if mode == "covariance":
        return np.einsum("kij,kj->ki", mixture.covariances(), z)
    R = quaternion_to_rotation(mixture.rotations)
    return np.einsum("kij,kj->ki", R, np.exp(mixture.log_scales) * z)


def sghmc_step_positions(
    state: SamplerState,
    mixture: Mixture,
    d_position: np.ndarray,
    config: TrainConfig,
    noise: Optional[np.ndarray] = None,
    momentum_noise: Optional[np.ndarray] = None,
    gates: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Um passo SGHMC nas posições (modifica mixture e state).

    Args:
        noise: sorteios 𝒩(0, I) (K, 3) para o ruído das posições; None usa o rng
        momentum_noise: sorteios 𝒩(0, I) (K, 3) para o momento; None usa o rng
        gates: valores σ(o) explícitos; None calcula a partir das opacidades

    Returns:
        novas posições (K, 3)
    """
    k = len(mixture)
    eps = state.epsilon
    C = state.friction
    g = np.asarray(d_position, dtype=np.float64).reshape(k, 3)
    r = state.momentum

    if gates is None:
        gates = gate(mixture.opacities(), config.gate_k, config.gate_t)
    gates = np.asarray(gates, dtype=np.float64).reshape(-1)[:, None] * np.ones((k, 1))

    if noise is None:
        noise = state.rng.standard_normal((k, 3))
    if momentum_noise is None:
        momentum_noise = state.rng.standard_normal((k, 3))

    magnitude = 2.0 * eps**1.5 * C
    noise_std = np.sqrt(magnitude) if config.noise_mode == "variance" else magnitude

    # burn-in: sem o termo de momento F, só gradiente + ruído anisotrópico
    if state.in_burn_in:
        position_noise = noise_std * shape_noise(noise, mixture, config.burnin_noise)
        drift = 0.0
    else:
        position_noise = noise_std * noise
        drift = eps * (1.0 - eps * C) * r

    positions = mixture.positions - eps * eps * g + gates * drift + gates * position_noise
    state.momentum = r - eps * g - eps * C * r + np.sqrt(2.0 * eps * C) * momentum_noise
    mixture.positions = positions
    return positions


def adam_step(
    state: SamplerState,
    mixture: Mixture,
    grads: ParamGrads,
    config: TrainConfig,
    groups: Optional[Iterable[str]] = None,
    position_lr: Optional[float] = None,
):
    """
    Passo Adam com correção de viés sobre os grupos indicados.

    Por padrão atualiza log_scale, rotation, sh, raw_opacity e raw_nu (este
    só com learn_nu); `position` entra quando o amostrador é Adam.
    """
    if groups is None:
        groups = ["log_scale", "rotation", "sh", "raw_opacity"]
        if config.learn_nu:
            groups.append("raw_nu")
    state.adam_steps += 1
    t = state.adam_steps
    b1, b2 = config.adam_beta1, config.adam_beta2
    correction1 = 1.0 - b1**t
    correction2 = 1.0 - b2**t

    for name in groups:
        attr, grad_attr, lr_attr = ADAM_GROUPS[name]
        lr = position_lr if lr_attr is None else getattr(config, lr_attr)
        if lr is None:
            raise ValueError(f"Grupo {name} exige taxa explícita")
        g = getattr(grads, grad_attr)
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + config.adam_eps)
        setattr(mixture, attr, getattr(mixture, attr) - update)

    if "rotation" in groups:
        mixture.rotations = normalize_quaternions(mixture.rotations)
    if "raw_nu" in groups:
        mixture.raw_nu = clamp_raw_nu(mixture.raw_nu, config.nu_min, config.nu_max)
