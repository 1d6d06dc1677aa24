"""
Testes para loss, métricas, amostrador SGHMC, reciclagem de componentes,
checkpoint e o laço de treino.
"""

import csv
from io import StringIO

import numpy as np
import orjson
import pytest
from django.core.management import call_command
from django.core.management.base import CommandError
from numpy.testing import assert_allclose
from pydantic import ValidationError

from apps.oracles.finite_diff import finite_diff, finite_diff_mixture
from apps.oracles.quadrature import quad_relocation_integral
from apps.oracles.reference import direct_beta_K
from apps.rendering.backward import ParamGrads
from apps.rendering.rasterizer import render
from apps.scenes.loaders import load_scene, read_image, write_image
from apps.scenes.models import SceneCamera, SceneSpec
from apps.scenes.tests import write_scene_fixture
from apps.splats.models import Camera, Mixture, TComponent
from apps.splats.params import opacity_inverse
from apps.splats.sh import rgb_to_sh0
from apps.training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from apps.training.config import TrainConfig
from apps.training.lifecycle import (
    RelocationPlan,
    add_components,
    choose_targets,
    compute_K,
    find_dead,
    new_opacity,
    plan_relocation,
    recycle,
    relocate,
    sigma_scale,
)
from apps.training.losses import l1_loss, opacity_regularizer, regularizer_grads, sigma_regularizer, total_loss
from apps.training.metrics import psnr, ssim, ssim_gradient
from apps.training.sampler import SamplerState, adam_step, gate, lr_schedule, sghmc_step_positions
from apps.training.trainer import (
    Trainer,
    fit2d_config,
    init_mixture,
    make_fit2d_scene,
    render_views,
    train,
)


def mixture_with(opacities, scale=0.1, seed=0):
    """Mistura com uma linha por opacidade, posições aleatórias em torno da origem."""
    rng = np.random.default_rng(seed)
    opacities = np.asarray(opacities, dtype=np.float64)
    count = len(opacities)
    return Mixture(
        positions=rng.normal(scale=0.3, size=(count, 3)),
        log_scales=np.log(np.full((count, 3), scale)) + rng.normal(scale=0.1, size=(count, 3)),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (count, 1)),
        raw_nu=np.full(count, 5.0),
        raw_opacity=opacity_inverse(opacities),
        sh=np.zeros((count, 1, 3)),
    )


def make_state(mixture, seed=0, **overrides):
    config = TrainConfig(seed=seed, **overrides)
    return SamplerState.create(mixture, config, epsilon=1e-2), config


class TestMetrics:
    """Testes para L1, PSNR e SSIM."""

    def test_l1(self):
        """Testa L1 médio e rejeição de formatos diferentes."""
        a = np.zeros((2, 2, 3))
        assert l1_loss(a, a + 0.25) == pytest.approx(0.25)
        with pytest.raises(ValueError):
            l1_loss(a, np.zeros((2, 3, 3)))

    def test_psnr(self):
        """Testa MSE = 0.01 → 20 dB e imagens idênticas → +inf."""
        a = np.zeros((8, 8, 3))
        assert psnr(a, a + 0.1) == pytest.approx(20.0)
        assert psnr(a, a) == float("inf")

    def test_ssim_identical(self):
        """Testa SSIM = 1 para imagens iguais."""
        a = np.random.default_rng(0).uniform(size=(16, 16, 3))
        assert ssim(a, a) == pytest.approx(1.0)

    def test_ssim_constant_images(self):
        """Testa o valor fechado para duas imagens constantes."""
        a = np.full((16, 16), 0.25)
        b = np.full((16, 16), 0.75)
        c1 = 0.01**2
        expected = (2 * 0.25 * 0.75 + c1) / (0.25**2 + 0.75**2 + c1)
        assert ssim(a, b) == pytest.approx(expected, rel=1e-9)

    def test_ssim_small_image_rejected(self):
        """Testa rejeição de imagens menores que a janela 11×11."""
        with pytest.raises(ValueError):
            ssim(np.zeros((10, 16)), np.zeros((10, 16)))

    def test_ssim_gradient(self):
        """Testa o gradiente analítico do SSIM contra diferenças finitas."""
        rng = np.random.default_rng(1)
        a = rng.uniform(size=(13, 12))
        b = rng.uniform(size=(13, 12))
        numeric = finite_diff(lambda x: ssim(x, b), a)
        assert_allclose(ssim_gradient(a, b), numeric, atol=1e-8)


class TestLosses:
    """Testes para a loss total e os regularizadores."""

    def test_regularizer_values(self):
        """Testa o = −0.5 → 0.5 e Σ = diag(4, 1, 1) → 4."""
        mixture = Mixture.from_components([TComponent.create(np.zeros(3), [2.0, 1.0, 1.0], opacity=-0.5)])
        assert opacity_regularizer(mixture) == pytest.approx(0.5)
        assert sigma_regularizer(mixture) == pytest.approx(4.0)

    def test_total_loss_without_dssim(self):
        """Testa a composição da loss com λ_D = 0."""
        mixture = Mixture.from_components([TComponent.create(np.zeros(3), [2.0, 1.0, 1.0], opacity=-0.5)])
        config = TrainConfig(lambda_dssim=0.0, lambda_opacity=0.1, lambda_sigma=0.01)
        image = np.zeros((4, 4, 3))
        breakdown = total_loss(image + 0.5, image, mixture, config)

        # Verificar termos individuais
        assert breakdown.l1 == pytest.approx(0.5)
        assert breakdown.dssim == 0.0
        assert breakdown.total == pytest.approx(0.5 + 0.1 * 0.5 + 0.01 * 4.0)
        assert set(breakdown.to_dict()) == {"l1", "dssim", "opacity_reg", "sigma_reg", "total"}

    def test_mean_reduction(self):
        """Testa a redução pela média dos regularizadores."""
        mixture = mixture_with([0.5, -0.5])
        config = TrainConfig(lambda_dssim=0.0, regularizer_reduction="mean")
        image = np.zeros((4, 4, 3))
        assert total_loss(image, image, mixture, config).opacity_reg == pytest.approx(0.5)

    def test_regularizer_gradients(self):
        """Testa os gradientes dos regularizadores contra diferenças finitas."""
        mixture = mixture_with([0.3, -0.6, 0.8], seed=2)
        config = TrainConfig(lambda_opacity=0.1, lambda_sigma=0.05)

        def loss(candidate):
            return config.lambda_opacity * opacity_regularizer(candidate) + config.lambda_sigma * sigma_regularizer(candidate)

        d_raw_opacity, d_log_scale = regularizer_grads(mixture, config)
        assert_allclose(d_raw_opacity, finite_diff_mixture(loss, mixture, "raw_opacity"), rtol=1e-6)
        assert_allclose(d_log_scale, finite_diff_mixture(loss, mixture, "log_scales"), rtol=1e-6)


class TestConfig:
    """Testes para TrainConfig."""

    def test_defaults(self):
        """Testa valores padrão e propriedades derivadas."""
        config = TrainConfig()
        assert config.burn_in_until == 15000
        assert config.relocation_stop == 30000
        assert config.friction == 1.0

    def test_rejects_unknown_and_invalid(self):
        """Testa campos desconhecidos e valores fora da faixa."""
        with pytest.raises(ValidationError):
            TrainConfig(nao_existe=1)
        with pytest.raises(ValidationError):
            TrainConfig(relocate_cap=0.0)
        with pytest.raises(ValidationError):
            TrainConfig(nu_init=0.5)
        with pytest.raises(ValidationError):
            TrainConfig(opacity_mode="positive", opacity_init=-0.1)

    def test_hash_is_stable(self):
        """Testa que o hash depende só dos valores."""
        assert TrainConfig(seed=3).config_hash() == TrainConfig(seed=3).config_hash()
        assert TrainConfig(seed=3).config_hash() != TrainConfig(seed=4).config_hash()


class TestSampler:
    """Testes para o gate, SGHMC e Adam."""

    def test_gate_values(self):
        """Testa σ(o) nos pontos característicos."""
        assert gate(0.0) == pytest.approx(1.0 / (1.0 + np.exp(-0.5)))
        assert gate(0.005) == pytest.approx(0.5)
        assert gate(-0.005) == pytest.approx(0.5)
        assert gate(0.9) < 1e-30

    def test_still_when_everything_is_zero(self):
        """Testa g = 0, r = 0 e C = 0 → posições inalteradas."""
        mixture = mixture_with([0.3, 0.4])
        before = mixture.positions.copy()
        state, config = make_state(mixture, friction=0.0)
        sghmc_step_positions(state, mixture, np.zeros((2, 3)), config)
        assert np.array_equal(mixture.positions, before)
        assert np.all(state.momentum == 0.0)

    def test_closed_gate_is_plain_gradient_step(self):
        """Testa σ = 0 → μ ← μ − ε²·g."""
        mixture = mixture_with([0.3, 0.4])
        before = mixture.positions.copy()
        state, config = make_state(mixture)
        state.momentum[:] = 1.0
        g = np.random.default_rng(0).normal(size=(2, 3))
        sghmc_step_positions(state, mixture, g, config, gates=np.zeros(2))
        assert_allclose(mixture.positions, before - state.epsilon**2 * g)

    def test_zero_friction_is_heavy_ball(self):
        """Testa C = 0 sem burn-in: equivale a SGD com momento sem decaimento."""
        mixture = mixture_with([0.3])
        state, config = make_state(mixture, friction=0.0, burn_in_frac=0.0)
        eps = state.epsilon
        rng = np.random.default_rng(3)
        mu = mixture.positions.copy()
        r = np.zeros((1, 3))
        for _ in range(5):
            g = rng.normal(size=(1, 3))
            sghmc_step_positions(state, mixture, g, config, gates=np.ones(1))
            mu = mu - eps * eps * g + eps * r
            r = r - eps * g
        assert_allclose(mixture.positions, mu, atol=1e-15)
        assert_allclose(state.momentum, r, atol=1e-15)

    def test_noise_modes(self):
        """Testa a magnitude do ruído: variância 2ε^1.5·C ou desvio 2ε^1.5·C."""
        for mode, expected in (("variance", np.sqrt(2.0 * 1e-2**1.5)), ("std", 2.0 * 1e-2**1.5)):
            mixture = mixture_with([0.3])
            before = mixture.positions.copy()
            state, config = make_state(mixture, burn_in_frac=0.0, noise_mode=mode)
            sghmc_step_positions(
                state, mixture, np.zeros((1, 3)), config, noise=np.ones((1, 3)), momentum_noise=np.zeros((1, 3)), gates=np.ones(1)
            )
            assert_allclose(mixture.positions - before, expected)

    def test_burn_in_drops_momentum_term(self):
        """Testa burn-in com g = 0, ruído nulo, r ≠ 0 e gate aberto → μ parado."""
        mixture = mixture_with([0.3])
        before = mixture.positions.copy()
        state, config = make_state(mixture, iterations=100, burn_in_frac=0.5)
        assert state.in_burn_in
        state.momentum[:] = 1.0
        zeros = np.zeros((1, 3))
        sghmc_step_positions(state, mixture, zeros, config, noise=zeros, momentum_noise=zeros, gates=np.ones(1))
        assert np.array_equal(mixture.positions, before)

        # Verificar que fora do burn-in o mesmo passo move por ε(1 − εC)·r
        mixture = mixture_with([0.3])
        state, config = make_state(mixture, iterations=100, burn_in_frac=0.0)
        state.momentum[:] = 1.0
        sghmc_step_positions(state, mixture, zeros, config, noise=zeros, momentum_noise=zeros, gates=np.ones(1))
        eps = state.epsilon
        assert_allclose(mixture.positions - before, eps * (1.0 - eps * config.friction))

    def test_momentum_decays_without_gradient(self):
        """Testa g = 0, gate = 1, sem ruído e C > 0: a mediana de ‖r‖ cai em 500 passos."""
        mixture = mixture_with(np.full(20, 0.3))
        state, config = make_state(mixture, burn_in_frac=0.0)
        state.momentum = np.random.default_rng(1).normal(size=(20, 3))
        zeros = np.zeros((20, 3))
        initial = np.median(np.linalg.norm(state.momentum, axis=1))
        medians = []
        for _ in range(500):
            sghmc_step_positions(state, mixture, zeros, config, noise=zeros, momentum_noise=zeros, gates=np.ones(20))
            medians.append(np.median(np.linalg.norm(state.momentum, axis=1)))
        assert np.all(np.diff(medians) <= 0.0)
        assert medians[-1] < 0.05 * initial

    def test_adam_keeps_nu_within_configured_bounds(self):
        """Testa que ν aprendido fica em [nu_min, nu_max] mesmo com raw fora da faixa."""
        mixture = mixture_with([0.3, 0.4, 0.5])
        state, config = make_state(mixture, nu_min=2.0, nu_max=100.0, nu_init=50.0)
        mixture.raw_nu = np.array([500.0, -50.0, 3.0])
        adam_step(state, mixture, ParamGrads.zeros(3, 1), config)
        nus = mixture.nus()
        assert nus[0] == pytest.approx(100.0, rel=1e-9)
        assert nus[1] == pytest.approx(2.0, rel=1e-9)
        assert nus[2] == pytest.approx(1.0 + np.log1p(np.exp(3.0)))

    @pytest.mark.parametrize("mode", ["sqrt", "covariance"])
    def test_burn_in_noise_follows_shape(self, mode):
        """Testa a covariância empírica do ruído de burn-in (10⁴ sorteios)."""
        count = 10_000
        rotation = np.array([0.9, 0.3, -0.2, 0.25])
        mixture = Mixture(
            positions=np.zeros((count, 3)),
            log_scales=np.tile(np.log([0.3, 0.1, 0.05]), (count, 1)),
            rotations=np.tile(rotation, (count, 1)),
            raw_nu=np.full(count, 5.0),
            raw_opacity=np.full(count, opacity_inverse(0.3)),
            sh=np.zeros((count, 1, 3)),
        )
        state, config = make_state(mixture, iterations=100, burn_in_frac=0.5, burnin_noise=mode)
        assert state.in_burn_in
        sghmc_step_positions(state, mixture, np.zeros((count, 3)), config, gates=np.ones(count))

        noise_var = 2.0 * state.epsilon**1.5 * state.friction
        empirical = np.cov(mixture.positions.T) / noise_var
        sigma = mixture.covariances()[0]
        expected = sigma if mode == "sqrt" else sigma @ sigma
        assert np.linalg.norm(empirical - expected) / np.linalg.norm(expected) < 0.05

    def test_seeded_noise_is_reproducible(self):
        """Testa que o mesmo seed gera o mesmo passo."""
        runs = []
        for _ in range(2):
            mixture = mixture_with([0.3, 0.2])
            state, config = make_state(mixture, seed=11)
            sghmc_step_positions(state, mixture, np.ones((2, 3)), config)
            runs.append(mixture.positions)
        assert np.array_equal(runs[0], runs[1])

    def test_adam_zero_gradient(self):
        """Testa que gradiente nulo não move os parâmetros."""
        mixture = mixture_with([0.3, -0.2])
        before = mixture.copy()
        state, config = make_state(mixture)
        adam_step(state, mixture, ParamGrads.zeros(2, 1), config)
        assert_allclose(mixture.raw_opacity, before.raw_opacity)
        assert_allclose(mixture.log_scales, before.log_scales)

    def test_adam_constant_gradient(self):
        """Testa que gradiente constante dá passos de tamanho lr (correção de viés)."""
        mixture = mixture_with([0.3, -0.2])
        before = mixture.raw_opacity.copy()
        state, config = make_state(mixture)
        grads = ParamGrads.zeros(2, 1)
        grads.d_raw_opacity[:] = [2.0, -0.5]
        for _ in range(3):
            adam_step(state, mixture, grads, config)
        assert_allclose(mixture.raw_opacity, before - 3 * config.lr_opacity * np.array([1.0, -1.0]), atol=1e-9)
        assert state.adam_steps == 3

    def test_lr_schedule(self):
        """Testa decaimento exponencial de ε₀ até ε₀·ratio."""
        config = TrainConfig(iterations=100)
        eps0 = config.position_lr_init * 2.0
        assert lr_schedule(0, config, extent=2.0) == pytest.approx(eps0)
        assert lr_schedule(100, config, extent=2.0) == pytest.approx(eps0 * 0.01)
        assert lr_schedule(50, config, extent=2.0) == pytest.approx(eps0 * 0.1)

    def test_state_round_trip_restores_rng(self):
        """Testa que o estado serializado continua a mesma sequência aleatória."""
        mixture = mixture_with([0.3, 0.2])
        state, _ = make_state(mixture, seed=5)
        state.rng.standard_normal(7)
        restored = SamplerState.from_dict(orjson.loads(orjson.dumps(state.to_dict())), mixture)
        assert np.array_equal(state.rng.standard_normal(4), restored.rng.standard_normal(4))


class TestLifecycle:
    """Testes para reciclagem e acréscimo de componentes."""

    def test_find_dead(self):
        """Testa |o| < limiar, com sinal."""
        mixture = mixture_with([0.001, -0.003, 0.5, -0.2])
        assert find_dead(mixture).tolist() == [0, 1]

    def test_choose_targets_proportional(self):
        """Testa alvos só entre os vivos, com frequência ∝ |o|."""
        mixture = mixture_with([0.001, 0.5, -0.2])
        targets = choose_targets(mixture, 10_000, np.random.default_rng(0))
        assert 0 not in targets
        assert np.mean(targets == 1) == pytest.approx(0.5 / 0.7, abs=0.02)

    def test_choose_targets_without_live(self):
        """Testa erro quando todos estão mortos."""
        with pytest.raises(ValueError):
            choose_targets(mixture_with([0.001, 0.002]), 1, np.random.default_rng(0))

    def test_new_opacity(self):
        """Testa valores fechados de o_new."""
        assert new_opacity(0.75, 2) == pytest.approx(0.5)
        assert new_opacity(-0.2, 2) == pytest.approx(-0.0954451, abs=1e-7)
        assert new_opacity(0.4, 1) == pytest.approx(0.4)

    @pytest.mark.parametrize("n", [1, 2, 3, 5, 10])
    def test_compute_K_matches_direct_beta(self, n):
        """Testa K em log-gama contra a soma direta com β e binomiais."""
        for o in (0.05, 0.3, -0.4, 0.9):
            for nu in (1.0, 3.5, 50.0):
                assert compute_K(n, o, nu) == pytest.approx(direct_beta_K(n, o, nu), rel=1e-9)

    def test_single_member_is_identity(self):
        """Testa N = 1 → o_new = o_old e Σ inalterado."""
        assert sigma_scale(0.6, 1, 4.0) == pytest.approx(1.0)

    @pytest.mark.parametrize("o_old", [0.9, -0.7, 0.3, 0.8, -0.4])
    @pytest.mark.parametrize("n", [2, 3, 5])
    @pytest.mark.parametrize("nu", [1.0, 5.0, 100.0, 2.0, 10.0])
    def test_relocation_preserves_integral(self, o_old, n, nu):
        """Testa por quadratura que N cópias reescaladas integram como o original."""
        original = quad_relocation_integral(o_old, 1.0, nu, 1)
        scaled = quad_relocation_integral(new_opacity(o_old, n), sigma_scale(o_old, n, nu), nu, n)
        assert original.converged and scaled.converged
        assert scaled.value == pytest.approx(original.value, rel=1e-6)

    def test_relocate_copies_target(self):
        """Testa que mortos recebem os parâmetros do alvo e o estado é zerado."""
        mixture = mixture_with([0.001, 0.6, 0.3, 0.002] + [0.5] * 36)
        state, _ = make_state(mixture)
        state.momentum[:] = 1.0
        plan = plan_relocation(mixture, [0, 3], [1, 1])
        relocate(mixture, plan, state)

        # Verificar grupo [1, 0, 3]
        o_new = new_opacity(0.6, 3)
        for i in (0, 1, 3):
            assert_allclose(mixture.positions[i], mixture.positions[1])
            assert mixture.opacities()[i] == pytest.approx(o_new)
            assert np.all(state.momentum[i] == 0.0)
        assert np.all(state.momentum[2] == 1.0)
        assert mixture.opacities()[2] == pytest.approx(0.3)

    def test_overlapping_groups_rejected(self):
        """Testa erro para grupos que compartilham membros."""
        mixture = mixture_with([0.5] * 10)
        plan = RelocationPlan([(0, np.array([1])), (1, np.array([2]))], np.ones(2) * 0.3, np.ones(2), np.ones(2))
        with pytest.raises(ValueError):
            relocate(mixture, plan, cap=None)

    def test_cap_enforced(self):
        """Testa o teto de 5% por chamada."""
        mixture = mixture_with([0.001] * 6 + [0.5] * 94)
        plan = plan_relocation(mixture, list(range(6)), [50] * 6)
        with pytest.raises(ValueError):
            relocate(mixture, plan)

    def test_recycle_respects_cap(self):
        """Testa que recycle move no máximo 5% dos componentes."""
        mixture = mixture_with([0.001] * 10 + [0.5] * 90)
        plan = recycle(mixture, np.random.default_rng(0))
        assert plan.relocated == 5
        assert len(find_dead(mixture)) == 5

    def test_add_components(self):
        """Testa 100 → 105 componentes, novos já realocados e com estado."""
        mixture = mixture_with(np.linspace(0.1, 0.9, 100))
        state, _ = make_state(mixture)
        added = add_components(mixture, 0.05, np.random.default_rng(0), state=state)
        assert added.tolist() == [100, 101, 102, 103, 104]
        assert len(mixture) == 105
        assert state.momentum.shape == (105, 3)
        assert np.all(np.abs(mixture.opacities()[added]) > 0.005)

    def test_add_components_truncated(self):
        """Testa o limite de componentes."""
        mixture = mixture_with(np.linspace(0.1, 0.9, 100))
        add_components(mixture, 0.05, np.random.default_rng(0), max_components=102)
        assert len(mixture) == 102

    def test_add_components_without_live_targets(self):
        """Testa que, sem alvo vivo, nada é acrescentado nem alterado."""
        mixture = mixture_with([0.001, -0.002] * 20)
        before = mixture.copy()
        state, _ = make_state(mixture)
        added = add_components(mixture, 0.05, np.random.default_rng(0), state=state)
        assert added.size == 0
        assert len(mixture) == 40
        assert np.array_equal(mixture.positions, before.positions)
        assert np.array_equal(mixture.raw_opacity, before.raw_opacity)
        assert state.momentum.shape == (40, 3)

    def test_add_components_keeps_render(self):
        """Testa que acrescentar componentes quase não muda a imagem (L1 < 1e-2)."""
        ys, xs = np.mgrid[0:16, 0:16] / 15.0
        image = np.stack([xs, ys, 0.5 * (xs + ys)], axis=-1)
        scene = make_fit2d_scene(image, 40, seed=0)
        mixture = init_mixture(scene, fit2d_config(1, small=True))
        camera = scene.cameras[0].camera
        before = render(mixture, camera).rgb
        added = add_components(mixture, 0.05, np.random.default_rng(0))
        assert added.size == 2
        assert l1_loss(render(mixture, camera).rgb, before) < 1e-2


def tiny_scene(image=None, points=None, cameras=1):
    image = np.full((12, 12, 3), 0.5) if image is None else image
    height, width = image.shape[:2]
    views = [
        SceneCamera(Camera(np.eye(3), [0.05 * i, 0.0, 4.0], 24.0, 24.0, width / 2, height / 2, width, height), image, f"v{i}.ppm")
        for i in range(cameras)
    ]
    points = np.random.default_rng(0).uniform(-0.5, 0.5, size=(10, 3)) if points is None else points
    return SceneSpec(cameras=views, points=np.asarray(points, dtype=np.float64), colors=None, extent=1.0)


class TestInitialization:
    """Testes para a mistura inicial."""

    def test_tetrahedron_scales(self):
        """Testa escala = distância média aos 3 vizinhos (tetraedro regular)."""
        points = [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]
        mixture = init_mixture(tiny_scene(points=points), TrainConfig())
        assert_allclose(np.exp(mixture.log_scales), 2.0 * np.sqrt(2.0))
        assert_allclose(mixture.opacities(), 0.1)
        assert_allclose(mixture.nus(), 50.0, rtol=1e-9)
        assert mixture.sh_degree == 0

    def test_single_point_fallback(self):
        """Testa um único ponto → 1% da extensão."""
        mixture = init_mixture(tiny_scene(points=[[0, 0, 0]]), TrainConfig())
        assert_allclose(np.exp(mixture.log_scales), 0.01)

    def test_empty_points(self):
        """Testa nuvem vazia."""
        with pytest.raises(ValueError):
            init_mixture(tiny_scene(points=np.zeros((0, 3))), TrainConfig())


class TestCheckpoint:
    """Testes para o checkpoint JSON."""

    def test_byte_identical_round_trip(self, tmp_path):
        """Testa salvar → carregar → salvar com bytes idênticos."""
        mixture = mixture_with([0.3, -0.7, 0.1], seed=4)
        state, config = make_state(mixture, seed=9)
        state.rng.standard_normal(3)
        checkpoint = Checkpoint(mixture, state, 17, config.config_hash(), config.model_dump(mode="json"))
        path = save_checkpoint(tmp_path / "a.json", checkpoint)
        loaded = load_checkpoint(path)
        assert loaded.dumps() == path.read_bytes()
        assert loaded.iteration == 17
        assert_allclose(loaded.mixture.positions, mixture.positions, rtol=0, atol=0)

    def test_loaded_checkpoint_renders_identically(self, tmp_path):
        """Testa que o checkpoint carregado renderiza bit a bit igual ao original."""
        scene = tiny_scene()
        checkpoint = train(scene, TrainConfig(iterations=3, lambda_dssim=0.0, checkpoint_every=0), tmp_path)
        loaded = load_checkpoint(tmp_path / "checkpoint.json")
        camera = scene.cameras[0].camera
        assert np.array_equal(render(loaded.mixture, camera).rgb, render(checkpoint.mixture, camera).rgb)

    def test_version_mismatch(self):
        """Testa versão de formato desconhecida."""
        mixture = mixture_with([0.3])
        data = Checkpoint(mixture, None, 0, "x").to_dict()
        data["version"] = 99
        with pytest.raises(ValueError):
            Checkpoint.from_dict(data)

    def test_missing_file(self, tmp_path):
        """Testa checkpoint inexistente."""
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "nada.json")


class TestTraining:
    """Testes para o laço de treino."""

    def test_zero_iterations(self, tmp_path):
        """Testa 0 iterações → mistura inicial e arquivos gravados."""
        scene = tiny_scene()
        config = TrainConfig(iterations=0, lambda_dssim=0.0)
        checkpoint = train(scene, config, tmp_path)
        initial = init_mixture(scene, config)
        assert_allclose(checkpoint.mixture.positions, initial.positions)
        assert (tmp_path / "checkpoint.json").exists()
        assert (tmp_path / "metrics.csv").exists()

    def test_deterministic(self):
        """Testa que dois treinos com o mesmo seed produzem o mesmo checkpoint."""
        config = TrainConfig(iterations=6, seed=2, lambda_dssim=0.0, relocate_every=3, checkpoint_every=0, log_every=1)
        first = train(tiny_scene(cameras=2), config)
        second = train(tiny_scene(cameras=2), config)
        assert first.dumps() == second.dumps()

    def test_loss_decreases_on_fit2d(self):
        """Testa que alguns passos no modo 2D reduzem o erro."""
        ys, xs = np.mgrid[0:12, 0:12]
        image = np.stack([xs / 11.0, ys / 11.0, np.full((12, 12), 0.5)], axis=-1)
        scene = make_fit2d_scene(image, 20, seed=0)
        trainer = Trainer(scene, fit2d_config(60, small=True))
        camera = scene.cameras[0].camera
        before = l1_loss(render(trainer.mixture, camera, trainer.options).rgb, image)
        checkpoint = trainer.run()
        after = l1_loss(render(checkpoint.mixture, camera, trainer.options).rgb, image)
        assert after < before
        assert len(trainer.metric_log) > 0

    def test_adam_sampler_runs(self):
        """Testa o caminho com Adam nas posições."""
        config = TrainConfig(iterations=3, sampler="adam", lambda_dssim=0.0, checkpoint_every=0)
        checkpoint = train(tiny_scene(), config)
        assert checkpoint.iteration == 3

    def test_fit2d_scene_geometry(self):
        """Testa a cena 2D: pontos em z = 1 dentro do campo de visão."""
        scene = make_fit2d_scene(np.zeros((20, 40, 3)), 30, seed=1)
        camera = scene.cameras[0].camera
        assert np.all(scene.points[:, 2] == 1.0)
        assert np.all(np.abs(scene.points[:, 0]) <= 0.5)
        assert np.all(np.abs(scene.points[:, 1]) <= 0.25)
        assert (camera.width, camera.height) == (40, 20)

    def test_render_views_report(self, tmp_path):
        """Testa imagens por vista e metrics.csv com linha de média."""
        scene = tiny_scene(cameras=2)
        checkpoint = train(scene, TrainConfig(iterations=0))
        csv_path = render_views(checkpoint, scene.cameras, tmp_path)
        rows = list(csv.reader(csv_path.open(encoding="utf-8")))

        # Verificar cabeçalho, uma linha por vista e a média
        assert rows[0] == ["view", "image", "psnr", "ssim"]
        assert [row[0] for row in rows[1:]] == ["0", "1", "mean"]
        assert (tmp_path / "view_000.ppm").exists()
        assert read_image(tmp_path / "view_001.ppm").shape == (12, 12, 3)

    def test_opacity_regularizer_lowers_opacities(self):
        """Testa que ε_o > 0 termina com |o| médio menor que ε_o = 0."""
        scene = make_fit2d_scene(np.full((12, 12, 3), 0.4), 20, seed=0)
        means = []
        for weight in (0.0, 0.5):
            trainer = Trainer(scene, fit2d_config(30, small=True, lambda_opacity=weight))
            means.append(np.mean(np.abs(trainer.run().mixture.opacities())))
        assert means[1] < means[0]

    def test_relocation_window_includes_last_iteration(self, monkeypatch):
        """Testa que a reciclagem ainda roda na iteração relocate_until."""
        calls = []
        monkeypatch.setattr("apps.training.trainer.recycle", lambda mixture, rng, *args: calls.append(mixture))
        scene = make_fit2d_scene(np.full((12, 12, 3), 0.4), 10, seed=0)
        Trainer(scene, fit2d_config(4, small=True, relocate_every=1, relocate_until=2)).run()
        assert len(calls) == 2


def torus_image(size=32, inner=5.0, outer=11.0):
    ys, xs = np.mgrid[0:size, 0:size]
    r = np.hypot(xs - size / 2, ys - size / 2)
    ring = ((r >= inner) & (r <= outer)).astype(np.float64)
    return np.repeat(ring[..., None], 3, axis=-1)


def two_component_fit(image, signs, seed, iterations=300):
    """Ajusta dois componentes concêntricos; `signs` escolhe as opacidades iniciais."""
    rng = np.random.default_rng(seed)
    scene = make_fit2d_scene(image, 2, seed=seed)
    white = rgb_to_sh0(np.ones(3))[None]
    components = [
        TComponent.create([*rng.normal(scale=0.01, size=2), 1.0], scale, nu=10.0, opacity=sign * 0.5, sh_coeffs=white)
        for scale, sign in zip((0.3, 0.15), signs)
    ]
    config = fit2d_config(iterations, seed=seed, small=True)
    trainer = Trainer(scene, config, mixture=Mixture.from_components(components))
    checkpoint = trainer.run()
    frame = render(checkpoint.mixture, scene.cameras[0].camera, trainer.options)
    return l1_loss(frame.rgb, image), frame.rgb


def ring_fit(image, count, seed, iterations=300):
    """Ajusta `count` componentes positivos distribuídos sobre o anel do toro."""
    size = image.shape[0]
    scene = make_fit2d_scene(image, count, seed=seed)
    white = rgb_to_sh0(np.ones(3))[None]
    radius = 8.0 / size
    components = []
    for angle in 2.0 * np.pi * np.arange(count) / count:
        # eixo maior tangente ao anel
        half = 0.5 * (angle + 0.5 * np.pi)
        components.append(
            TComponent.create(
                [radius * np.cos(angle), radius * np.sin(angle), 1.0],
                (0.15, 0.07, 0.07),
                rotation=(np.cos(half), 0.0, 0.0, np.sin(half)),
                nu=10.0,
                opacity=0.5,
                sh_coeffs=white,
            )
        )
    trainer = Trainer(scene, fit2d_config(iterations, seed=seed, small=True), mixture=Mixture.from_components(components))
    frame = render(trainer.run().mixture, scene.cameras[0].camera, trainer.options)
    return l1_loss(frame.rgb, image), frame.rgb


@pytest.mark.slow
class TestAcceptance:
    """Execuções em escala de aceitação."""

    def test_torus_needs_scooping(self):
        """Testa que positivo + negativo vence o melhor ajuste com dois positivos."""
        image = torus_image()
        best_positive = min(two_component_fit(image, (1, 1), seed)[0] for seed in range(10))
        wins = 0
        for seed in range(10):
            loss, rgb = two_component_fit(image, (1, -1), seed)
            wins += loss < best_positive
        assert wins >= 9

        # Verificar centro mais escuro que o anel
        _, rgb = two_component_fit(image, (1, -1), 0)
        assert rgb[16, 16, 0] < rgb[16, 24, 0]

    def test_five_positive_components_recover_the_hole(self):
        """Testa que cinco positivos abrem o buraco que dois positivos não conseguem."""
        image = torus_image()
        best_two = min(two_component_fit(image, (1, 1), seed)[0] for seed in range(10))
        loss, rgb = ring_fit(image, 5, seed=0)
        assert loss < best_two

        # Verificar centro mais escuro que o anel
        assert rgb[16, 16, 0] < rgb[16, 24, 0]

    def test_noise_free_closed_gate_descends(self):
        """Testa C = 0 e gate fechado: a loss cai em ≥ 95% dos 2000 passos."""
        ys, xs = np.mgrid[0:16, 0:16] / 15.0
        image = np.stack([0.2 + 0.6 * xs, 0.2 + 0.6 * ys, np.full_like(xs, 0.5)], axis=-1)
        scene = make_fit2d_scene(image, 20, seed=0)
        config = fit2d_config(
            2000,
            small=True,
            friction=0.0,
            gate_t=-10.0,
            relocate_every=10_000,
            log_every=1,
            lr_log_scale=5e-4,
            lr_rotation=1e-4,
            lr_sh=2.5e-4,
            lr_opacity=1e-3,
            lr_nu=1e-3,
        )
        trainer = Trainer(scene, config)
        trainer.run()
        losses = np.array([row["loss"] for row in trainer.metric_log])
        assert len(losses) == 2000
        assert np.mean(np.diff(losses) < 0.0) >= 0.95

    def test_toy_fit_gains_ten_db(self):
        """Testa imagem 64×64, 50 componentes, 2000 passos → PSNR +10 dB."""
        ys, xs = np.mgrid[0:64, 0:64] / 63.0
        image = np.stack([0.5 + 0.4 * np.sin(3 * xs), 0.5 + 0.4 * np.cos(2 * ys), 0.3 + 0.5 * xs * ys], axis=-1)
        scene = make_fit2d_scene(image, 50, seed=0)
        trainer = Trainer(scene, fit2d_config(2000))
        camera = scene.cameras[0].camera
        initial = psnr(render(trainer.mixture, camera, trainer.options).rgb, image)
        final = psnr(render(trainer.run().mixture, camera, trainer.options).rgb, image)
        assert final >= initial + 10.0

    def test_learnable_nu_beats_gaussian(self):
        """Testa ν aprendido contra ν congelado em 10000 (caso gaussiano)."""
        image = np.zeros((32, 32, 3))
        image[8:24, 8:24] = [0.9, 0.6, 0.2]
        wins = 0
        for seed in range(10):
            scores = []
            for overrides in ({}, {"nu_init": 10000.0, "learn_nu": False}):
                scene = make_fit2d_scene(image, 30, seed=seed)
                trainer = Trainer(scene, fit2d_config(500, seed=seed, **overrides))
                scores.append(psnr(render(trainer.run().mixture, scene.cameras[0].camera, trainer.options).rgb, image))
            wins += scores[0] >= scores[1]
        assert wins >= 7


@pytest.mark.integration
class TestCommands:
    """Testes ponta a ponta dos comandos de gerenciamento."""

    def test_train_render_metrics(self, tmp_path):
        """Testa train → render → metrics sobre uma cena em disco."""
        scene_path = write_scene_fixture(tmp_path / "scene", n_test=1)
        out = tmp_path / "run"
        stdout = StringIO()
        call_command("train", scene=str(scene_path), out=str(out), iters=4, seed=1, stdout=stdout)
        assert (out / "checkpoint.json").exists()
        assert "4 iterações" in stdout.getvalue()

        call_command("render", ckpt=str(out / "checkpoint.json"), scene=str(scene_path), out=str(tmp_path / "views"), stdout=StringIO())
        assert (tmp_path / "views" / "metrics.csv").exists()
        assert (tmp_path / "views" / "view_000.ppm").exists()

        stdout = StringIO()
        call_command("metrics", ckpt=str(out / "checkpoint.json"), scene=str(scene_path), stdout=stdout)
        assert "psnr" in stdout.getvalue().lower()

    def test_fit2d(self, tmp_path):
        """Testa o modo 2D em uma imagem pequena."""
        image_path = write_image(tmp_path / "alvo.ppm", np.full((12, 12, 3), 0.4))
        stdout = StringIO()
        call_command("fit2d", image=str(image_path), components=8, iters=5, out=str(tmp_path / "fit"), stdout=stdout)
        assert (tmp_path / "fit" / "fit.ppm").exists()
        assert "PSNR" in stdout.getvalue()

    def test_nu_grad_paper_choice(self, tmp_path):
        """Testa --nu-grad paper pela linha de comando → gradiente de ν só com o segundo termo."""
        scene_path = write_scene_fixture(tmp_path / "scene")
        out = tmp_path / "run"
        call_command(
            "train", "--scene", str(scene_path), "--out", str(out), "--iters", "2", "--nu-grad", "paper", stdout=StringIO()
        )
        assert load_checkpoint(out / "checkpoint.json").config["nu_grad"] == "partial"

    def test_missing_scene(self, tmp_path):
        """Testa cena inexistente → CommandError."""
        with pytest.raises(CommandError):
            call_command("train", scene=str(tmp_path / "nada.json"), out=str(tmp_path), iters=1)

    def test_invalid_option(self, tmp_path):
        """Testa configuração inválida → CommandError."""
        scene_path = write_scene_fixture(tmp_path / "scene")
        with pytest.raises(CommandError):
            call_command("train", scene=str(scene_path), out=str(tmp_path), iters=1, burn_in_frac=2.0)

    def test_loaded_scene_trains(self, tmp_path):
        """Testa que a cena em disco alimenta o treino diretamente."""
        scene = load_scene(write_scene_fixture(tmp_path))
        assert train(scene, TrainConfig(iterations=2, lambda_dssim=0.0)).iteration == 2
