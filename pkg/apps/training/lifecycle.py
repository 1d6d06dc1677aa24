"""
Reciclagem de componentes: mortos (|o| baixo) são movidos para um alvo vivo
preservando a distribuição renderizada.

Para um grupo de N membros (alvo + N−1 mortos) no alvo de opacidade o_old:

    o_new = 1 − (1 − o_old)^(1/N)
    K     = Σ_{i=1..N} Σ_{k=0..i−1} C(i−1, k)·(−1)^k·o_new^(k+1)·β(½, ((k+1)(ν+3) − 1)/2)
    Σ_new = o_old²·(ν_old/ν_new)·(β(½, (ν_old+2)/2)/K)²·Σ_old
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

from apps.splats.models import Mixture
from apps.splats.params import opacity_inverse

from .sampler import SamplerState

logger = logging.getLogger("training.lifecycle")

DEAD_THRESHOLD = 0.005
RELOCATION_CAP = 0.05


def find_dead(mixture: Mixture, threshold: float = DEAD_THRESHOLD) -> np.ndarray:
    """Índices com |o| < threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold deve estar em (0, 1)")
    return np.flatnonzero(np.abs(mixture.opacities()) < threshold)


def choose_targets(
    mixture: Mixture,
    n_dead: int,
    rng: np.random.Generator,
    exclude: Optional[Sequence[int]] = None,
    threshold: float = DEAD_THRESHOLD,
) -> np.ndarray:
    """
    Sorteia alvos com reposição, probabilidade ∝ |o| sobre os vivos.

    Args:
        exclude: índices que não podem ser alvo (por padrão, os mortos)
    """
    weights = np.abs(mixture.opacities()).astype(np.float64)
    dead = find_dead(mixture, threshold) if exclude is None else np.asarray(exclude, dtype=np.int64)
    weights[dead] = 0.0
    total = float(weights.sum())
    if total <= 0.0:
        raise ValueError("Nenhum componente vivo para receber a realocação")
    if n_dead == 0:
        return np.zeros(0, dtype=np.int64)
    return rng.choice(len(weights), size=n_dead, replace=True, p=weights / total)


def new_opacity(o_old, n: int):
    """o_new = 1 − (1 − o_old)^(1/N); o sinal acompanha o de o_old."""
    if n < 1:
        raise ValueError("N deve ser ≥ 1")
    o_old = np.asarray(o_old, dtype=np.float64)
    o_new = 1.0 - np.power(1.0 - o_old, 1.0 / n)
    return float(o_new) if np.ndim(o_new) == 0 else o_new


def _log_beta(a, b):
    return gammaln(a) + gammaln(b) - gammaln(a + b)


def compute_K(n: int, o_new: float, nu: float) -> float:
    """Soma dupla de K em log-gama, termos somados em k crescente."""
    if n < 1:
        raise ValueError("N deve ser ≥ 1")
    total = 0.0
    for i in range(1, n + 1):
        for k in range(i):
            log_binom = gammaln(i) - gammaln(k + 1) - gammaln(i - k)
            z = np.exp(_log_beta(0.5, ((k + 1) * (nu + 3.0) - 1.0) / 2.0))
            total += (-1.0) ** k * np.exp(log_binom) * o_new ** (k + 1) * z
    return float(total)


def sigma_scale(o_old: float, n: int, nu_old: float, nu_new: Optional[float] = None) -> float:
    """Fator escalar aplicado a Σ_old."""
    nu_new = nu_old if nu_new is None else nu_new
    o_new = new_opacity(o_old, n)
    K = compute_K(n, o_new, nu_new)
    ratio = np.exp(_log_beta(0.5, (nu_old + 2.0) / 2.0)) / K
    return float(o_old * o_old * (nu_old / nu_new) * ratio * ratio)


@dataclass
class RelocationPlan:
    """Grupos (alvo, mortos) e as grandezas calculadas por grupo."""

    groups: List[Tuple[int, np.ndarray]]
    o_new: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma_scale: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nu_new: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def relocated(self) -> int:
        return int(sum(len(dead) for _, dead in self.groups))

    def members(self) -> np.ndarray:
        if not self.groups:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.concatenate([[target], dead]) for target, dead in self.groups]).astype(np.int64)

    def validate(self, count: int, cap: Optional[float] = RELOCATION_CAP):
        members = self.members()
        if len(np.unique(members)) != len(members):
            raise ValueError("Grupos de realocação sobrepostos")
        if np.any((members < 0) | (members >= count)):
            raise ValueError("Índice de realocação fora da mistura")
        if cap is not None and self.relocated > int(np.floor(cap * count)):
            raise ValueError(f"{self.relocated} realocações excedem o teto de {cap:.0%} de {count}")


def plan_relocation(mixture: Mixture, dead: Sequence[int], targets: Sequence[int]) -> RelocationPlan:
    """Agrupa os mortos por alvo e calcula o_new, fator de Σ e ν_new de cada grupo."""
    dead = np.asarray(dead, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    if len(dead) != len(targets):
        raise ValueError("Cada morto precisa de exatamente um alvo")

    by_target: Dict[int, List[int]] = {}
    for d, t in zip(dead.tolist(), targets.tolist()):
        by_target.setdefault(t, []).append(d)

    opacities = mixture.opacities()
    nus = mixture.nus()
    groups, o_new, scales, nu_new = [], [], [], []
    for target in sorted(by_target):
        members = np.array(sorted(by_target[target]), dtype=np.int64)
        n = 1 + len(members)
        o_old = float(opacities[target])
        nu = float(nus[target])
        groups.append((target, members))
        o_new.append(new_opacity(o_old, n))
        scales.append(sigma_scale(o_old, n, nu))
        nu_new.append(nu)
    return RelocationPlan(groups, np.array(o_new), np.array(scales), np.array(nu_new))


def relocate(
    mixture: Mixture,
    plan: RelocationPlan,
    state: Optional[SamplerState] = None,
    cap: Optional[float] = RELOCATION_CAP,
) -> Mixture:
    """
    Aplica o plano: todos os membros do grupo recebem μ, rotação, ν e SH do
    alvo, opacidade o_new e Σ escalado. Momentos do grupo são zerados.
    """
    plan.validate(len(mixture), cap)
    for (target, dead), o_new, scale in zip(plan.groups, plan.o_new, plan.sigma_scale):
        members = np.concatenate([[target], dead]).astype(np.int64)
        log_scale = mixture.log_scales[target] + 0.5 * np.log(scale)
        mixture.positions[members] = mixture.positions[target]
        mixture.rotations[members] = mixture.rotations[target]
        mixture.raw_nu[members] = mixture.raw_nu[target]
        mixture.sh[members] = mixture.sh[target]
        mixture.log_scales[members] = log_scale
        mixture.raw_opacity[members] = opacity_inverse(o_new, mixture.opacity_mode)
        if state is not None:
            state.reset_rows(members)

    if plan.groups:
        logger.info(f"Realocados {plan.relocated} componentes em {len(plan.groups)} grupos")
    return mixture


def recycle(
    mixture: Mixture,
    rng: np.random.Generator,
    state: Optional[SamplerState] = None,
    threshold: float = DEAD_THRESHOLD,
    cap: float = RELOCATION_CAP,
) -> RelocationPlan:
    """find_dead → teto → choose_targets → relocate, como feito no laço de treino."""
    dead = find_dead(mixture, threshold)
    limit = int(np.floor(cap * len(mixture)))
    if len(dead) > limit:
        dead = dead[:limit]
    if len(dead) == 0 or len(dead) == len(mixture):
        return RelocationPlan([])
    targets = choose_targets(mixture, len(dead), rng, threshold=threshold)
    plan = plan_relocation(mixture, dead, targets)
    relocate(mixture, plan, state, cap)
    return plan


def add_components(
    mixture: Mixture,
    fraction: float,
    rng: np.random.Generator,
    max_components: Optional[int] = None,
    state: Optional[SamplerState] = None,
    threshold: float = DEAD_THRESHOLD,
) -> np.ndarray:
    """
    Acrescenta fraction·K componentes com o = 0 e os realoca de imediato.

    Os novos componentes nascem na posição de componentes existentes; a
    realocação deles não conta para o teto de 5%.

    Returns:
        índices dos componentes adicionados
    """
    count = len(mixture)
    n_add = int(np.floor(fraction * count))
    if max_components is not None and count + n_add > max_components:
        truncated = max(0, max_components - count)
        logger.warning(f"Lote de {n_add} novos componentes truncado para {truncated} (máximo {max_components})")
        n_add = truncated
    if n_add == 0:
        return np.zeros(0, dtype=np.int64)

    live = np.abs(mixture.opacities()) >= threshold
    if not np.any(live):
        logger.warning(f"Nenhum componente vivo; {n_add} novos componentes não adicionados")
        return np.zeros(0, dtype=np.int64)

    # alvos sorteados antes de qualquer mutação
    targets = choose_targets(mixture, n_add, rng, threshold=threshold)
    source = rng.integers(0, count, size=n_add)
    fresh = mixture.copy()
    fresh.positions = mixture.positions[source].copy()
    fresh.log_scales = mixture.log_scales[source].copy()
    fresh.rotations = mixture.rotations[source].copy()
    fresh.raw_nu = mixture.raw_nu[source].copy()
    fresh.sh = mixture.sh[source].copy()
    fresh.raw_opacity = np.full(n_add, opacity_inverse(0.0, mixture.opacity_mode))
    mixture.append(fresh)
    if state is not None:
        state.grow(mixture)

    added = np.arange(count, count + n_add)
    plan = plan_relocation(mixture, added, targets)
    relocate(mixture, plan, state, cap=None)
    logger.info(f"Adicionados {n_add} componentes ({count} → {len(mixture)})")
    return added
