"""
Testes dos oráculos: quadratura, diferenças finitas e composição de referência.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import beta

from apps.oracles.finite_diff import finite_diff, finite_diff_mixture
from apps.oracles.quadrature import QuadratureSpec, quad_ray_integral, quad_relocation_integral, tail_bound
from apps.oracles.reference import _color, _nus, _opacities, _sh_terms, direct_beta_K, reference_composite
from apps.splats.models import Camera, Mixture, TComponent
from apps.splats.params import covariance_of, nu_of, opacity_of
from apps.splats.sh import sh_basis, sh_to_color
from apps.splats.tmath import density2d, project_component
from apps.training.lifecycle import compute_K


class TestRayIntegral:
    """Testes para a integral do kernel 3D ao longo de um raio."""

    def test_cauchy_like_closed_form(self):
        """Testa ν = 1, Σ = I, raio pelo centro → π/2."""
        result = quad_ray_integral(np.zeros(3), np.eye(3), 1.0, [0.0, 0.0, -10.0], [0.0, 0.0, 1.0])
        assert result.converged
        assert result.value == pytest.approx(np.pi / 2, rel=1e-8)

    def test_far_ray(self):
        """Testa raio distante → integral desprezível."""
        result = quad_ray_integral(np.zeros(3), np.eye(3), 1.0, [100.0, 0.0, -10.0], [0.0, 0.0, 1.0])
        assert 0.0 < result.value < 1e-5

    def test_marginal_is_2d_kernel(self):
        """Testa que a integral no raio segue o kernel 2D com expoente −(ν+2)/2."""
        nu = 3.0
        ratios = []
        for offset in (0.0, 0.5, 1.0, 2.0):
            value = quad_ray_integral(np.zeros(3), np.eye(3), nu, [offset, 0.0, -10.0], [0.0, 0.0, 1.0]).value
            ratios.append(value / (1.0 + offset**2 / nu) ** (-(nu + 2.0) / 2.0))
        assert_allclose(ratios, ratios[0], rtol=1e-7)

    @pytest.mark.parametrize("nu", [1.0, 2.0, 5.0, 50.0, 10000.0])
    def test_projected_footprint_is_ray_marginal(self, nu):
        """
        Testa project_component + density2d contra a integral no raio em 20 pixels.

        Componente no eixo óptico: o Jacobiano no centro é diagonal e os raios
        paralelos ao eixo z atravessam o ponto do mundo que projeta em cada pixel.
        """
        rng = np.random.default_rng(int(nu))
        q = rng.normal(size=4)
        component = TComponent.create([0.0, 0.0, 4.0], scale=(0.3, 0.2, 0.4), rotation=q / np.linalg.norm(q), nu=nu)
        camera = Camera(np.eye(3), np.zeros(3), 40.0, 40.0, 16.0, 16.0, 32, 32)
        proj = project_component(component, camera)
        sigma = covariance_of(component)

        ratios = []
        for u in rng.uniform(12.0, 20.0, size=(20, 2)):
            origin = [(u[0] - 16.0) * 4.0 / 40.0, (u[1] - 16.0) * 4.0 / 40.0, 0.0]
            result = quad_ray_integral(component.position, sigma, nu, origin, [0.0, 0.0, 1.0])
            assert result.converged
            ratios.append(result.value / density2d(u, proj))
        ratios = np.array(ratios)
        assert (ratios.max() - ratios.min()) / ratios.mean() < 1e-6

    def test_direction_must_be_unit(self):
        """Testa rejeição de direção não unitária."""
        with pytest.raises(ValueError):
            quad_ray_integral(np.zeros(3), np.eye(3), 1.0, [0, 0, -1], [0, 0, 2])


class TestRelocationIntegral:
    """Testes para a integral da composição de N cópias."""

    @pytest.mark.parametrize("nu", [1.0, 4.0, 30.0])
    def test_single_copy_closed_form(self, nu):
        """Testa N = 1: o·√(νσ)·β(½, (ν+2)/2)."""
        o, sigma = 0.7, 2.0
        result = quad_relocation_integral(o, sigma, nu, 1)
        assert result.value == pytest.approx(o * np.sqrt(nu * sigma) * beta(0.5, (nu + 2.0) / 2.0), rel=1e-7)

    def test_zero_opacity(self):
        """Testa o = 0 → integral nula."""
        assert quad_relocation_integral(0.0, 1.0, 5.0, 3).value == 0.0

    @pytest.mark.parametrize("o", [0.2, -0.3, 0.8])
    def test_matches_K(self, o):
        """Testa N = 3 contra √(νσ)·K."""
        nu, sigma = 5.0, 1.5
        result = quad_relocation_integral(o, sigma, nu, 3)
        assert result.value == pytest.approx(np.sqrt(nu * sigma) * compute_K(3, o, nu), rel=1e-7)

    def test_invalid_arguments(self):
        """Testa |o| ≥ 1 e N < 1."""
        with pytest.raises(ValueError):
            quad_relocation_integral(1.0, 1.0, 5.0, 1)
        with pytest.raises(ValueError):
            quad_relocation_integral(0.5, 1.0, 5.0, 0)
        with pytest.raises(ValueError):
            QuadratureSpec(tolerance=0.0)

    def test_tail_bound_is_small(self):
        """Testa que a cota da cauda fora de ±1000σ é desprezível."""
        assert 0.0 < tail_bound(1.0, 1.0, 1e3) < 1e-8

    def test_direct_beta_single_copy(self):
        """Testa K de referência com N = 1."""
        assert direct_beta_K(1, 0.4, 6.0) == pytest.approx(0.4 * beta(0.5, 4.0))


class TestFiniteDiff:
    """Testes para as diferenças centrais."""

    def test_quadratic(self):
        """Testa ∇(θᵀAθ) = 2Aθ."""
        rng = np.random.default_rng(0)
        B = rng.normal(size=(4, 4))
        A = B + B.T
        theta = rng.normal(size=4)
        assert_allclose(finite_diff(lambda t: t @ A @ t, theta), 2 * A @ theta, atol=1e-7)

    def test_richardson_and_indices(self):
        """Testa extrapolação de Richardson e subconjunto de índices."""
        theta = np.array([0.3, 1.2, -0.7])
        grad = finite_diff(lambda t: float(np.sum(np.sin(t))), theta, indices=[1], richardson=True)
        assert grad[0] == 0.0 and grad[2] == 0.0
        assert grad[1] == pytest.approx(np.cos(1.2), rel=1e-8)

    def test_mixture_groups(self):
        """Testa perturbação por grupo sem alterar a mistura original."""
        mixture = Mixture.from_components([TComponent.create([0.1, 0.2, 0.3], opacity=0.4)])
        before = mixture.positions.copy()
        grad = finite_diff_mixture(lambda m: float(np.sum(m.positions**2)), mixture, "positions")
        assert_allclose(grad, 2 * before, atol=1e-8)
        assert np.array_equal(mixture.positions, before)
        with pytest.raises(ValueError):
            finite_diff_mixture(lambda m: 0.0, mixture, "nao_existe")


class TestReferenceComposite:
    """Testes para a composição de referência."""

    def test_empty_is_background(self):
        """Testa mistura vazia → fundo."""
        camera = Camera(np.eye(3), [0, 0, 4], 10.0, 10.0, 2.0, 2.0, 4, 4)
        image = reference_composite(Mixture.empty(background=(0.2, 0.4, 0.6)), camera)
        assert_allclose(image, np.broadcast_to([0.2, 0.4, 0.6], (4, 4, 3)))

    def test_single_component_peak(self):
        """Testa o pixel central: cor·o sobre fundo preto."""
        camera = Camera(np.eye(3), [0, 0, 4], 10.0, 10.0, 2.0, 2.0, 5, 5)
        component = TComponent.create(np.zeros(3), 0.2, opacity=0.6)
        image = reference_composite(Mixture.from_components([component]), camera)
        assert image[2, 2, 0] == pytest.approx(0.5 * 0.6)

    def test_sh_is_derived_independently(self):
        """Testa a base SH em forma fechada contra sh_basis até o grau 3."""
        rng = np.random.default_rng(2)
        for _ in range(10):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            assert_allclose(_sh_terms(d, 3), sh_basis(d[None], 3)[0], rtol=1e-12, atol=1e-15)
            coeffs = rng.normal(scale=0.3, size=(16, 3))
            assert_allclose(_color(coeffs, d, 3), sh_to_color(coeffs, d, 3), atol=1e-12)

    def test_parameter_maps_are_derived_independently(self):
        """Testa ν e opacidade do oráculo contra os mapas da biblioteca."""
        raw = np.linspace(-45.0, 12000.0, 41)
        assert_allclose(_nus(raw), nu_of(raw), rtol=1e-14)
        raw = np.linspace(-6.0, 6.0, 25)
        assert_allclose(_opacities(raw, "signed"), opacity_of(raw, "signed"), atol=1e-15)
        assert_allclose(_opacities(raw, "positive"), opacity_of(raw, "positive"), atol=1e-15)
