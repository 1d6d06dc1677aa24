"""
Testes do rasterizador por tiles e do backward analítico.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import brentq

from apps.oracles.finite_diff import finite_diff, finite_diff_mixture
from apps.oracles.reference import reference_composite
from apps.rendering.backward import (
    composite_backward,
    dT2D_dh,
    dT2D_dnu,
    projection_backward,
    render_backward,
)
from apps.rendering.rasterizer import RenderOptions, composite_pixel, render, sort_and_bin
from apps.splats.models import Camera, Mixture, TComponent, sh_coeff_count
from apps.splats.params import nu_inverse, opacity_inverse, quaternion_to_rotation
from apps.splats.sh import rgb_to_sh0
from apps.splats.tmath import Projected2D, project_component, project_mixture


def make_camera(width=32, height=32, focal=None, distance=4.0):
    focal = focal if focal is not None else width * distance / 1.5
    return Camera(np.eye(3), [0.0, 0.0, distance], focal, focal, width / 2.0, height / 2.0, width, height)


def random_mixture(seed, count=20, degree=0, signed=True, background=(0.0, 0.0, 0.0)):
    """Mistura aleatória visível por make_camera, opacidades de sinais mistos."""
    rng = np.random.default_rng(seed)
    n = sh_coeff_count(degree)
    sh = np.zeros((count, n, 3))
    sh[:, 0] = rgb_to_sh0(rng.uniform(0.2, 0.8, size=(count, 3)))
    if n > 1:
        sh[:, 1:] = rng.normal(scale=0.05, size=(count, n - 1, 3))
    magnitude = rng.uniform(0.2, 0.8, size=count)
    signs = np.where(rng.uniform(size=count) < 0.3, -1.0, 1.0) if signed else np.ones(count)
    return Mixture(
        positions=np.column_stack([rng.uniform(-0.5, 0.5, (count, 2)), rng.uniform(-0.3, 0.3, count)]),
        log_scales=np.log(rng.uniform(0.04, 0.15, size=(count, 3))),
        rotations=rng.normal(size=(count, 4)),
        raw_nu=nu_inverse(rng.uniform(1.5, 20.0, size=count)),
        raw_opacity=opacity_inverse(signs * magnitude),
        sh=sh,
        sh_degree=degree,
        background=background,
    )


def exhaustive(**kwargs):
    return RenderOptions(early_stop=False, threads=1, **kwargs)


class TestCompositePixel:
    """Testes para a composição de um pixel."""

    def test_empty_list(self):
        """Testa lista vazia → fundo, transmitância 1."""
        rgb, w = composite_pixel([], (0.2, 0.3, 0.4))
        assert_allclose(rgb, [0.2, 0.3, 0.4])
        assert w == 1.0

    def test_single_entry(self):
        """Testa uma entrada (c=1, o=0.5, T=1) sobre fundo preto."""
        rgb, w = composite_pixel([((1.0, 1.0, 1.0), 0.5, 1.0)], (0.0, 0.0, 0.0))
        assert_allclose(rgb, [0.5, 0.5, 0.5])
        assert w == 0.5

    def test_scooping_entry(self):
        """Testa que a opacidade negativa subtrai cor e faz W crescer."""
        ordered = [((1.0, 1.0, 1.0), 0.8, 1.0), ((1.0, 1.0, 1.0), -0.5, 1.0)]
        rgb, w = composite_pixel(ordered, (0.0, 0.0, 0.0))
        assert_allclose(rgb, [0.7, 0.7, 0.7], atol=1e-15)
        assert w == pytest.approx(0.3)

    def test_early_stop(self):
        """Testa que a composição para quando W < 1e-4."""
        ordered = [((1.0, 0.0, 0.0), 0.99999, 1.0), ((0.0, 1.0, 0.0), 0.5, 1.0)]
        rgb, _ = composite_pixel(ordered, (0.0, 0.0, 0.0), early_stop=True)
        assert rgb[1] == 0.0
        rgb, _ = composite_pixel(ordered, (0.0, 0.0, 0.0), early_stop=False)
        assert rgb[1] > 0.0

    def test_unsorted_depths_asserted_in_test_mode(self, settings):
        """Testa a verificação de ordem em modo de teste."""
        settings.TSPLAT_TEST_MODE = True
        with pytest.raises(AssertionError):
            composite_pixel([((1, 1, 1), 0.5, 1.0), ((1, 1, 1), 0.5, 1.0)], (0, 0, 0), depths=[2.0, 1.0])


class TestSortAndBin:
    """Testes para ordenação e distribuição em tiles."""

    def test_empty(self):
        """Testa entrada vazia → todas as listas vazias."""
        binning = sort_and_bin([], 32, 32)
        assert len(binning.lists) == 4
        assert all(len(lst) == 0 for lst in binning.lists)

    def test_single_tile(self):
        """Testa disco contido em um único tile."""
        proj = Projected2D(np.array([8.0, 8.0]), np.eye(2), 1.0, 5.0, 2.0)
        binning = sort_and_bin([proj], 32, 32)
        assert [len(lst) for lst in binning.lists] == [1, 0, 0, 0]

    def test_ascending_depth(self):
        """Testa ordem por profundidade crescente e entradas fora do frustum ausentes."""
        far = Projected2D(np.array([8.0, 8.0]), np.eye(2), 2.0, 5.0, 2.0)
        near = Projected2D(np.array([9.0, 8.0]), np.eye(2), 1.0, 5.0, 2.0)
        binning = sort_and_bin([far, None, near], 32, 32)
        assert binning.tile_list(0, 0).tolist() == [2, 0]

    def test_batch_matches_list(self):
        """Testa que o binning em lote equivale ao binning por lista."""
        mixture = random_mixture(3)
        camera = make_camera()
        batch = project_mixture(mixture, camera)
        listed = sort_and_bin([batch.component(i) for i in range(len(mixture))], 32, 32)
        for a, b in zip(sort_and_bin(batch, 32, 32).lists, listed.lists):
            assert a.tolist() == b.tolist()


class TestRender:
    """Testes para o frame completo."""

    def test_empty_mixture(self):
        """Testa mistura vazia → fundo uniforme."""
        frame = render(Mixture.empty(background=(0.1, 0.2, 0.3)), make_camera(16, 16))
        assert_allclose(frame.rgb, np.broadcast_to([0.1, 0.2, 0.3], (16, 16, 3)))
        assert np.all(frame.transmittance == 1.0)
        assert np.all(frame.contributors == 0)

    def test_zero_size_rejected(self):
        """Testa que imagem de tamanho zero é rejeitada."""
        with pytest.raises(ValueError):
            make_camera(0, 16)

    def test_brightest_pixel_on_axis(self):
        """Testa componente quase gaussiano no eixo óptico → máximo em (cx, cy)."""
        mixture = Mixture.from_components([TComponent.create(np.zeros(3), 0.1, nu=5000.0, opacity=0.9)])
        frame = render(mixture, make_camera(32, 32), exhaustive())
        v, u = np.unravel_index(np.argmax(frame.raw_rgb[..., 0]), (32, 32))
        assert (u, v) == (16, 16)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_reference(self, seed):
        """Testa o render por tiles contra a composição de referência pixel a pixel."""
        mixture = random_mixture(seed, count=20, background=(0.1, 0.1, 0.2))
        camera = make_camera(32, 32)
        frame = render(mixture, camera, exhaustive())
        reference = reference_composite(mixture, camera)
        assert np.max(np.abs(frame.raw_rgb - reference)) < 1e-6

    def test_tile_size_and_threads_do_not_change_output(self):
        """Testa determinismo: tamanho de tile e número de threads não alteram o frame."""
        mixture = random_mixture(4, degree=1)
        camera = make_camera(40, 24)
        base = render(mixture, camera, exhaustive())
        assert np.array_equal(base.raw_rgb, render(mixture, camera, RenderOptions(early_stop=False, threads=4)).raw_rgb)
        assert_allclose(base.raw_rgb, render(mixture, camera, exhaustive(tile_size=7)).raw_rgb, atol=1e-12)

    def test_early_stop_error_bounded(self):
        """Testa que o early stop muda o frame no máximo pela transmitância residual."""
        mixture = random_mixture(5, count=30, signed=False)
        mixture.raw_opacity = opacity_inverse(np.full(30, 0.95))
        camera = make_camera(32, 32)
        exact = render(mixture, camera, exhaustive())
        stopped = render(mixture, camera, RenderOptions(early_stop=True, threads=1))
        assert np.max(np.abs(exact.raw_rgb - stopped.raw_rgb)) <= 1.01e-4

    def test_positive_mixture_bounds(self):
        """Testa transmitância ≤ 1 e cor em [0, 1] para opacidades positivas."""
        mixture = random_mixture(6, signed=False)
        frame = render(mixture, make_camera(), exhaustive())
        assert np.all(frame.transmittance <= 1.0)
        assert np.all(frame.raw_rgb >= 0.0)
        assert np.all(frame.raw_rgb <= 1.0 + 1e-12)

    def test_scooping_dims_center(self):
        """Testa que um componente negativo co-localizado escurece o centro."""
        positive = TComponent.create(np.zeros(3), 0.1, opacity=0.6, sh_coeffs=rgb_to_sh0(np.ones(3))[None])
        negative = TComponent.create(np.zeros(3), 0.1, opacity=-0.6, sh_coeffs=rgb_to_sh0(np.ones(3))[None])
        camera = make_camera(32, 32)
        alone = render(Mixture.from_components([positive]), camera, exhaustive())
        scooped = render(Mixture.from_components([positive, negative]), camera, exhaustive())
        assert scooped.raw_rgb[16, 16, 0] < alone.raw_rgb[16, 16, 0]


class TestKernelDerivatives:
    """Testes para ∂T²ᴰ/∂h e ∂T²ᴰ/∂ν."""

    @staticmethod
    def t2d(h, nu):
        return (1.0 + h / nu) ** (-(nu + 2.0) / 2.0)

    def test_dh_examples(self):
        """Testa os valores fechados de ∂T/∂h."""
        assert dT2D_dh(0.0, 2.0) == pytest.approx(-1.0)
        assert dT2D_dh(2.0, 2.0) == pytest.approx(-0.125)

    def test_dh_finite_difference(self):
        """Testa ∂T/∂h contra diferenças centrais em 100 pares (h, ν)."""
        rng = np.random.default_rng(0)
        for h, nu in zip(rng.uniform(0.0, 20.0, 100), rng.uniform(1.0, 100.0, 100)):
            numeric = finite_diff(lambda x: self.t2d(x[0], nu), np.array([h]))[0]
            assert dT2D_dh(h, nu) == pytest.approx(numeric, rel=1e-7)

    def test_dnu_zero_at_peak(self):
        """Testa ∂T/∂ν = 0 em h = 0."""
        for nu in [1.0, 3.0, 500.0]:
            assert dT2D_dnu(0.0, nu) == 0.0

    def test_dnu_full_matches_finite_difference(self):
        """Testa a derivada completa em ν; a forma parcial não passa."""
        rng = np.random.default_rng(1)
        worst_partial = 0.0
        for h, nu in zip(rng.uniform(0.1, 20.0, 100), rng.uniform(1.5, 500.0, 100)):
            numeric = finite_diff(lambda x: self.t2d(h, x[0]), np.array([nu]))[0]
            assert dT2D_dnu(h, nu) == pytest.approx(numeric, rel=1e-6)
            worst_partial = max(worst_partial, abs(dT2D_dnu(h, nu, "partial") - numeric) / abs(numeric))
        assert worst_partial > 1e-2

    def test_dnu_sign_flip(self):
        """Testa que ∂T/∂ν é positivo perto do centro e negativo longe."""
        nu = 5.0
        assert dT2D_dnu(0.5, nu) > 0.0
        assert dT2D_dnu(200.0, nu) < 0.0
        root = brentq(lambda h: dT2D_dnu(h, nu), 0.5, 200.0)
        assert dT2D_dnu(0.9 * root, nu) > 0.0 > dT2D_dnu(1.1 * root, nu)


class TestCompositeBackward:
    """Testes para a derivada reversa da composição."""

    def test_single_entry(self):
        """Testa C = c·o·T com um canal."""
        (d_color, d_opacity, d_density), = composite_backward((1.0, 0.0, 0.0), [((1.0, 0.0, 0.0), 0.5, 1.0)])
        assert d_color[0] == pytest.approx(0.5)
        assert d_opacity == pytest.approx(1.0)
        assert d_density == pytest.approx(0.5)

    def test_front_entry_sees_occlusion(self):
        """Testa ∂C/∂o₁ = 1 − o₂ com duas entradas iguais."""
        ordered = [((1.0, 0.0, 0.0), 0.5, 1.0), ((1.0, 0.0, 0.0), 0.5, 1.0)]
        grads = composite_backward((1.0, 0.0, 0.0), ordered)
        assert grads[0][1] == pytest.approx(0.5)

    def test_length_mismatch(self):
        """Testa rejeição de lista com tamanho diferente do forward."""
        with pytest.raises(ValueError):
            composite_backward((1.0, 0.0, 0.0), [((1.0, 0.0, 0.0), 0.5, 1.0)], forward_length=2)

    @pytest.mark.parametrize("seed", range(10))
    def test_finite_difference_parity(self, seed):
        """Testa a derivada de todas as entradas contra diferenças finitas."""
        rng = np.random.default_rng(seed)
        depth = rng.integers(1, 9)
        colors = rng.uniform(0.0, 1.0, size=(depth, 3))
        opac = rng.uniform(0.1, 0.9, size=depth) * np.where(rng.uniform(size=depth) < 0.4, -1.0, 1.0)
        dens = rng.uniform(0.1, 1.0, size=depth)
        bg = rng.uniform(size=3)
        g = rng.normal(size=3)

        def loss(c, o, t):
            rgb, _ = composite_pixel(list(zip(c, o, t)), bg, early_stop=False)
            return float(g @ rgb)

        grads = composite_backward(g, list(zip(colors, opac, dens)), bg, early_stop=False)
        d_color = np.array([x[0] for x in grads])
        d_opacity = np.array([x[1] for x in grads])
        d_density = np.array([x[2] for x in grads])
        assert_allclose(d_color, finite_diff(lambda c: loss(c, opac, dens), colors), atol=1e-8)
        assert_allclose(d_opacity, finite_diff(lambda o: loss(colors, o, dens), opac), atol=1e-8)
        assert_allclose(d_density, finite_diff(lambda t: loss(colors, opac, t), dens), atol=1e-8)


class TestProjectionBackward:
    """Testes para o backward da projeção EWA."""

    def test_axis_aligned(self):
        """Testa d_mean2d = (1, 0) no caso alinhado aos eixos → d_position = (0.2, 0, 0)."""
        camera = Camera(np.eye(3), [0.0, 0.0, 5.0], 1.0, 1.0, 0.0, 0.0, 8, 8)
        component = TComponent.create(np.zeros(3))
        proj = project_component(component, camera)
        d_pos, d_ls, d_rot = projection_backward(proj, [1.0, 0.0], np.zeros((2, 2)), component, camera)
        assert_allclose(d_pos, [0.2, 0.0, 0.0], atol=1e-15)
        assert_allclose(d_ls, 0.0)
        assert_allclose(d_rot, 0.0)

    def test_zero_input(self):
        """Testa entradas nulas → gradientes nulos."""
        camera = make_camera()
        component = TComponent.create([0.1, 0.2, 0.3], 0.1)
        proj = project_component(component, camera)
        for grad in projection_backward(proj, np.zeros(2), np.zeros((2, 2)), component, camera):
            assert np.all(grad == 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_difference(self, seed):
        """Testa câmera e componente aleatórios contra diferenças finitas."""
        rng = np.random.default_rng(seed)
        rotation = quaternion_to_rotation(rng.normal(size=4))
        camera = Camera(rotation, rng.normal(size=3) * 0.2 + [0, 0, 5.0], 40.0, 35.0, 16.0, 16.0, 32, 32)
        base = TComponent(rotation.T @ (np.array([0.3, -0.2, 5.0]) - camera.translation_wc), np.log([0.3, 0.2, 0.5]), rng.normal(size=4), 1.0, 0.5, np.zeros((1, 3)))
        a = rng.normal(size=2)
        B = rng.normal(size=(2, 2))

        def loss(position, log_scale, quat):
            proj = project_component(TComponent(position, log_scale, quat, 1.0, 0.5, np.zeros((1, 3))), camera)
            return float(a @ proj.mean2d + np.sum(B * proj.cov2d))

        proj = project_component(base, camera)
        d_pos, d_ls, d_rot = projection_backward(proj, a, B, base, camera)
        p, s, q = base.position, base.log_scale, base.rotation
        assert_allclose(d_pos, finite_diff(lambda x: loss(x, s, q), p), rtol=1e-6, atol=1e-8)
        assert_allclose(d_ls, finite_diff(lambda x: loss(p, x, q), s), rtol=1e-6, atol=1e-8)
        assert_allclose(d_rot, finite_diff(lambda x: loss(p, s, x), q), rtol=1e-6, atol=1e-8)


GROUPS = [
    ("positions", "d_position"),
    ("log_scales", "d_log_scale"),
    ("rotations", "d_rotation"),
    ("sh", "d_sh"),
    ("raw_opacity", "d_raw_opacity"),
    ("raw_nu", "d_raw_nu"),
]


def check_gradient_parity(seed, count=8, size=16, degree=1):
    """Compara render_backward com diferenças finitas de L = Σ G·rgb em todos os grupos."""
    mixture = random_mixture(seed, count=count, degree=degree, background=(0.05, 0.05, 0.05))
    camera = make_camera(size, size)
    options = exhaustive(tau=1e-15)
    G = np.random.default_rng(1000 + seed).normal(size=(size, size, 3))

    def loss(candidate):
        return float(np.sum(G * render(candidate, camera, options).rgb))

    frame = render(mixture, camera, options)
    grads = render_backward(mixture, camera, G, frame)
    for attr, grad_attr in GROUPS:
        numeric = finite_diff_mixture(loss, mixture, attr)
        analytic = getattr(grads, grad_attr)
        scale = max(np.linalg.norm(numeric), 1e-8)
        assert np.linalg.norm(analytic - numeric) / scale < 1e-5, attr


class TestRenderBackward:
    """Testes para o backward completo do frame."""

    def test_zero_image_gradient(self):
        """Testa d_image = 0 → todos os gradientes nulos."""
        mixture = random_mixture(0, count=5, degree=1)
        camera = make_camera(16, 16)
        frame = render(mixture, camera, exhaustive())
        grads = render_backward(mixture, camera, np.zeros((16, 16, 3)), frame)
        for _, grad_attr in GROUPS:
            assert np.all(getattr(grads, grad_attr) == 0.0)

    def test_out_of_frustum_component(self):
        """Testa gradiente exatamente nulo para componente atrás da câmera."""
        mixture = random_mixture(1, count=4)
        mixture.positions[2] = [0.0, 0.0, -10.0]
        camera = make_camera(16, 16)
        frame = render(mixture, camera, exhaustive())
        grads = render_backward(mixture, camera, np.ones((16, 16, 3)), frame)
        for _, grad_attr in GROUPS:
            assert np.all(getattr(grads, grad_attr)[2] == 0.0)

    def test_shape_mismatch(self):
        """Testa rejeição de d_image com formato errado."""
        mixture = random_mixture(2, count=3)
        camera = make_camera(16, 16)
        frame = render(mixture, camera, exhaustive())
        with pytest.raises(ValueError):
            render_backward(mixture, camera, np.zeros((8, 8, 3)), frame)

    def test_linearity(self):
        """Testa superposição em d_image."""
        mixture = random_mixture(3, count=8, degree=1)
        camera = make_camera(16, 16)
        frame = render(mixture, camera, exhaustive())
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(16, 16, 3)), rng.normal(size=(16, 16, 3))
        ga = render_backward(mixture, camera, a, frame)
        gb = render_backward(mixture, camera, b, frame)
        gab = render_backward(mixture, camera, 2.0 * a + b, frame)
        for _, grad_attr in GROUPS:
            expected = 2.0 * getattr(ga, grad_attr) + getattr(gb, grad_attr)
            assert_allclose(getattr(gab, grad_attr), expected, atol=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_difference_parity(self, seed):
        """Testa todos os grupos de parâmetros contra diferenças finitas (8 componentes, 16×16)."""
        check_gradient_parity(seed)

    @pytest.mark.slow
    def test_finite_difference_parity_many_seeds(self):
        """Testa a paridade de gradientes em 100 cenas aleatórias."""
        for seed in range(100):
            check_gradient_parity(seed)

    def test_deterministic_across_threads(self):
        """Testa que o backward é bit a bit igual com 1 e 4 threads."""
        mixture = random_mixture(7, count=12, degree=1)
        camera = make_camera(40, 40)
        G = np.random.default_rng(7).normal(size=(40, 40, 3))
        one = render_backward(mixture, camera, G, render(mixture, camera, exhaustive()))
        four = render_backward(mixture, camera, G, render(mixture, camera, RenderOptions(early_stop=False, threads=4)))
        for _, grad_attr in GROUPS:
            assert np.array_equal(getattr(one, grad_attr), getattr(four, grad_attr))
