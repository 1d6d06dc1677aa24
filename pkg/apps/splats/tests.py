"""
Testes do núcleo da mistura: mapas de parâmetros, covariâncias, SH e a
matemática fechada da distribuição t.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from apps.splats.models import Camera, Mixture, TComponent
from apps.splats.params import (
    RAW_NU_FLOOR,
    clamp_raw_nu,
    covariance_of,
    covariances_from,
    eigenvalues_of,
    nu_derivative,
    nu_inverse,
    nu_of,
    opacity_derivative,
    opacity_inverse,
    opacity_of,
    quaternion_multiply,
    quaternion_to_rotation,
    rotation_backward,
)
from apps.splats.sh import SH_C0, rgb_to_sh0, sh_basis, sh_basis_jacobian, sh_to_color
from apps.splats.tmath import (
    cutoff_radius,
    density2d,
    density3d,
    mahalanobis_cut_sq,
    project_component,
    project_mixture,
    squared_mixture_eval,
)


def random_quaternion(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


class TestParameterMaps:
    """Testes para os mapas irrestrito → restrito."""

    def test_nu_of_examples(self):
        """Testa os valores de referência de ν."""
        assert nu_of(-40.0) == pytest.approx(1.0, abs=1e-12)
        assert nu_of(0.0) == pytest.approx(1.0 + np.log(2.0), rel=1e-12)
        assert nu_of(10000.0) == 10000.0

    def test_nu_of_range_and_monotone(self):
        """Testa que ν fica em [1, 10000] e cresce com raw."""
        raw = np.linspace(-100.0, 20000.0, 2001)
        nu = nu_of(raw)
        assert np.all(nu >= 1.0)
        assert np.all(nu <= 10000.0)
        assert np.all(np.diff(nu) >= 0.0)

    def test_nu_round_trip(self):
        """Testa nu_of(nu_inverse(ν)) = ν na faixa útil."""
        for nu in [1.0 + 1e-6, 1.5, 2.0, 50.0, 500.0, 9999.0]:
            assert nu_of(nu_inverse(nu)) == pytest.approx(nu, abs=1e-9)

    def test_nu_inverse_cauchy_limit(self):
        """Testa ν = 1 → raw no piso, com nu_of de volta em exatamente 1."""
        assert nu_inverse(1.0) == RAW_NU_FLOOR
        assert nu_of(nu_inverse(1.0)) == 1.0
        assert_allclose(nu_of(nu_inverse(np.array([1.0, 3.0]))), [1.0, 3.0], atol=1e-12)

    def test_nu_inverse_rejects_below_one(self):
        """Testa que ν < 1 não tem inverso."""
        with pytest.raises(ValueError):
            nu_inverse(0.5)

    def test_create_cauchy_component(self):
        """Testa TComponent.create com ν = 1 (kernel de Cauchy)."""
        component = TComponent.create(np.zeros(3), nu=1.0)
        assert component.nu == 1.0

    def test_clamp_raw_nu(self):
        """Testa que o raw restringido mantém ν dentro dos limites configurados."""
        raw = nu_inverse(np.array([1.5, 40.0, 600.0]))
        assert_allclose(nu_of(clamp_raw_nu(raw, 2.0, 100.0)), [2.0, 40.0, 100.0], rtol=1e-9)
        assert_allclose(clamp_raw_nu(raw), raw)

    def test_nu_derivative_matches_finite_difference(self):
        """Testa dν/draw contra diferenças centrais."""
        for raw in [-3.0, 0.0, 2.5, 30.0]:
            h = 1e-6
            numeric = (nu_of(raw + h) - nu_of(raw - h)) / (2 * h)
            assert nu_derivative(raw) == pytest.approx(numeric, rel=1e-6)
        assert nu_derivative(20000.0) == 0.0

    def test_opacity_examples(self):
        """Testa tanh: zero, saturação e simetria ímpar."""
        assert opacity_of(0.0) == 0.0
        assert 0.0 <= 1.0 - opacity_of(20.0) < 1e-15
        xs = np.random.default_rng(0).normal(size=50) * 3
        assert_allclose(opacity_of(-xs), -opacity_of(xs))

    def test_opacity_positive_mode(self):
        """Testa o modo só-positivo (sigmoid) e o inverso."""
        assert opacity_of(0.0, "positive") == pytest.approx(0.5)
        for o in [0.1, 0.5, 0.9]:
            assert opacity_of(opacity_inverse(o, "positive"), "positive") == pytest.approx(o)
            assert opacity_of(opacity_inverse(o)) == pytest.approx(o)
        assert opacity_of(opacity_inverse(-0.3)) == pytest.approx(-0.3)

    def test_opacity_derivative(self):
        """Testa do/draw = 1 − o² (tanh) e o(1−o) (sigmoid)."""
        raw = 0.7
        assert opacity_derivative(raw) == pytest.approx(1.0 - np.tanh(raw) ** 2)
        s = 1.0 / (1.0 + np.exp(-raw))
        assert opacity_derivative(raw, "positive") == pytest.approx(s * (1.0 - s))


class TestCovariance:
    """Testes para Σ = R S Sᵀ Rᵀ e autovalores."""

    def test_identity(self):
        """Testa quaternion identidade e log_scale zero."""
        c = TComponent.create(np.zeros(3), scale=1.0)
        assert_allclose(covariance_of(c), np.eye(3), atol=1e-15)

    def test_axis_scale(self):
        """Testa log_scale = (ln 2, 0, 0) → diag(4, 1, 1)."""
        c = TComponent.create(np.zeros(3), scale=(2.0, 1.0, 1.0))
        assert_allclose(covariance_of(c), np.diag([4.0, 1.0, 1.0]), atol=1e-14)

    def test_random_components_spd(self):
        """Testa simetria e positividade em 100 componentes aleatórios."""
        rng = np.random.default_rng(1)
        for _ in range(100):
            c = TComponent(rng.normal(size=3), rng.normal(size=3), rng.normal(size=4), 0.0, 0.0, np.zeros((1, 3)))
            sigma = covariance_of(c)
            assert_allclose(sigma, sigma.T, atol=0.0)
            assert np.min(np.linalg.eigvalsh(sigma)) > 0.0

    def test_eigenvalues_examples(self):
        """Testa identidade, diagonal e rejeição de matriz não simétrica."""
        assert_allclose(eigenvalues_of(np.eye(3)), [1.0, 1.0, 1.0])
        assert_allclose(eigenvalues_of(np.diag([1.0, 4.0, 1.0])), [4.0, 1.0, 1.0])
        with pytest.raises(ValueError):
            eigenvalues_of(np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))

    def test_eigenvalues_equal_scales(self):
        """Testa autovalores = exp(2·log_scale) ordenados, para qualquer rotação."""
        rng = np.random.default_rng(2)
        for _ in range(20):
            log_scale = rng.normal(size=3)
            c = TComponent(np.zeros(3), log_scale, random_quaternion(rng), 0.0, 0.0, np.zeros((1, 3)))
            expected = np.sort(np.exp(2.0 * log_scale))[::-1]
            assert_allclose(eigenvalues_of(covariance_of(c)), expected, rtol=1e-10)

    def test_rotation_equivariance(self):
        """Testa Σ(q·p) = R(q) Σ(p) R(q)ᵀ."""
        rng = np.random.default_rng(3)
        q, p = random_quaternion(rng), random_quaternion(rng)
        log_scale = rng.normal(size=3)
        left = covariances_from(log_scale[None], quaternion_multiply(q, p)[None])[0]
        Rq = quaternion_to_rotation(q)
        right = Rq @ covariances_from(log_scale[None], p[None])[0] @ Rq.T
        assert_allclose(left, right, atol=1e-12)

    def test_rotation_backward_finite_difference(self):
        """Testa ∂L/∂q (quaternion não normalizado) contra diferenças centrais."""
        rng = np.random.default_rng(4)
        q = rng.normal(size=4) * 1.7
        G = rng.normal(size=(3, 3))
        analytic = rotation_backward(q, G)
        numeric = np.zeros(4)
        for j in range(4):
            e = np.zeros(4)
            e[j] = 1e-6
            numeric[j] = (np.sum(G * quaternion_to_rotation(q + e)) - np.sum(G * quaternion_to_rotation(q - e))) / 2e-6
        assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-9)


class TestModels:
    """Testes para Mixture e Camera."""

    def test_mixture_rejects_inconsistent_rows(self):
        """Testa que arrays com contagens diferentes são rejeitados."""
        with pytest.raises(ValueError):
            Mixture(np.zeros((2, 3)), np.zeros((1, 3)), np.zeros((2, 4)), np.zeros(2), np.zeros(2), np.zeros((2, 1, 3)))

    def test_mixture_rejects_degree_above_storage(self):
        """Testa sh_degree maior que os coeficientes armazenados."""
        with pytest.raises(ValueError):
            Mixture.from_components([TComponent.create(np.zeros(3))], sh_degree=1)

    def test_mixture_dict_round_trip(self):
        """Testa to_dict → from_dict preservando todos os arrays."""
        rng = np.random.default_rng(5)
        comps = [TComponent.create(rng.normal(size=3), 0.3, sh_coeffs=rng.normal(size=(4, 3)), sh_degree=1) for _ in range(3)]
        mixture = Mixture.from_components(comps, sh_degree=1, background=(0.1, 0.2, 0.3))
        restored = Mixture.from_dict(mixture.to_dict())
        assert_allclose(restored.sh, mixture.sh)
        assert_allclose(restored.raw_nu, mixture.raw_nu)
        assert restored.sh_degree == 1

    def test_create_defaults(self):
        """Testa ν = 50 e o = 0.1 como padrão."""
        c = TComponent.create(np.zeros(3))
        assert c.nu == pytest.approx(50.0)
        assert c.opacity() == pytest.approx(0.1)

    def test_camera_rejects_non_orthonormal(self):
        """Testa a validação da rotação e das intrínsecas."""
        with pytest.raises(ValueError):
            Camera(np.diag([1.0, 1.0, 2.0]), np.zeros(3), 1.0, 1.0, 0.0, 0.0, 4, 4)
        with pytest.raises(ValueError):
            Camera(np.eye(3), np.zeros(3), 0.0, 1.0, 0.0, 0.0, 4, 4)

    def test_camera_center(self):
        """Testa o centro −Rᵀt."""
        cam = Camera(np.eye(3), [0.0, 0.0, 5.0], 1.0, 1.0, 0.0, 0.0, 4, 4)
        assert_allclose(cam.center, [0.0, 0.0, -5.0])


class TestSphericalHarmonics:
    """Testes para a cor dependente da vista."""

    def test_degree_zero(self):
        """Testa grau 0: max(0, c₀·Y₀₀ + 0.5), independente da vista."""
        coeffs = np.array([[1.0, -3.0, 0.0]])
        expected = np.maximum(0.0, coeffs[0] * 0.2820948 + 0.5)
        for d in ([0, 0, 1.0], [1.0, 0, 0], [0, -1.0, 0]):
            assert_allclose(sh_to_color(coeffs, np.array(d), 0), expected, atol=1e-7)

    def test_degree_one_z_coefficient(self):
        """Testa que o coeficiente linear em z inverte o sinal entre +z e −z."""
        coeffs = np.zeros((4, 3))
        coeffs[2] = 0.5
        plus = sh_to_color(coeffs, np.array([0.0, 0.0, 1.0]), 1) - 0.5
        minus = sh_to_color(coeffs, np.array([0.0, 0.0, -1.0]), 1) - 0.5
        assert np.all(plus > 0.0)
        assert np.all(minus < 0.0)

    def test_degree_above_storage(self):
        """Testa que pedir grau maior que o armazenado é rejeitado."""
        with pytest.raises(ValueError):
            sh_to_color(np.zeros((1, 3)), np.array([0.0, 0.0, 1.0]), 1)

    def test_rgb_to_sh0_inverts_color(self):
        """Testa que rgb_to_sh0 é o inverso da cor de grau 0."""
        rgb = np.array([0.2, 0.5, 0.9])
        assert_allclose(sh_to_color(rgb_to_sh0(rgb)[None], np.array([0.0, 0.0, 1.0]), 0), rgb, atol=1e-12)
        assert rgb_to_sh0(np.array([0.5 + SH_C0]))[0] == pytest.approx(1.0)

    def test_basis_jacobian_finite_difference(self):
        """Testa ∂Y/∂d contra diferenças centrais para grau 3."""
        d = np.array([[0.3, -0.5, 0.8]])
        jac = sh_basis_jacobian(d, 3)[0]
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = 1e-6
            numeric = (sh_basis(d + e, 3)[0] - sh_basis(d - e, 3)[0]) / 2e-6
            assert_allclose(jac[:, axis], numeric, atol=1e-8)


class TestStudentT:
    """Testes para densidades, projeção e truncamento."""

    def test_density3d_examples(self):
        """Testa pico, caso Cauchy e limite gaussiano pontual."""
        rng = np.random.default_rng(6)
        mu = rng.normal(size=3)
        assert density3d(mu, mu, np.diag([2.0, 1.0, 3.0]), 7.0) == 1.0
        assert density3d([1.0, 0, 0], np.zeros(3), np.eye(3), 1.0) == pytest.approx(0.25, abs=1e-15)
        assert density3d([2.0, 0, 0], np.zeros(3), np.eye(3), 10000.0) == pytest.approx(np.exp(-2.0), rel=1e-3)

    def test_density3d_singular(self):
        """Testa rejeição de Σ singular."""
        with pytest.raises(ValueError):
            density3d(np.zeros(3), np.ones(3), np.diag([1.0, 0.0, 1.0]), 3.0)

    def test_cauchy_case_exact(self):
        """Testa ν = 1: densidade = (1 + h)^(−2)."""
        for r in [0.0, 0.5, 1.0, 3.0, 10.0]:
            h = r * r
            assert density3d([0, r, 0], np.zeros(3), np.eye(3), 1.0) == pytest.approx((1.0 + h) ** -2, rel=1e-14)

    def test_gaussian_limit(self):
        """
        Testa ν = 10000 contra exp(−h/2) até h = 12.

        O erro relativo é ≈ (h²/4 − 1.5h)/ν, que passa de 2e-3 acima de h ≈ 12.
        """
        for h in np.linspace(0.0, 12.0, 49):
            value = density3d([np.sqrt(h), 0, 0], np.zeros(3), np.eye(3), 10000.0)
            assert abs(value - np.exp(-h / 2)) / np.exp(-h / 2) < 2e-3

    def test_affine_invariance(self):
        """Testa invariância da densidade não normalizada sob x → A x + b."""
        rng = np.random.default_rng(7)
        for _ in range(10):
            A = rng.normal(size=(3, 3)) + 3 * np.eye(3)
            b = rng.normal(size=3)
            x, mu = rng.normal(size=3), rng.normal(size=3)
            L = rng.normal(size=(3, 3))
            sigma = L @ L.T + np.eye(3)
            nu = rng.uniform(1.0, 30.0)
            left = density3d(A @ x + b, A @ mu + b, A @ sigma @ A.T, nu)
            assert left == pytest.approx(density3d(x, mu, sigma, nu), rel=1e-10)

    def test_project_component_axis_aligned(self):
        """Testa o caso μ = 0, t = (0, 0, 5), fx = fy = 1."""
        cam = Camera(np.eye(3), [0.0, 0.0, 5.0], 1.0, 1.0, 0.0, 0.0, 8, 8)
        proj = project_component(TComponent.create(np.zeros(3)), cam)
        assert_allclose(proj.mean2d, [0.0, 0.0], atol=1e-15)
        assert_allclose(proj.jacobian, [[0.2, 0.0, 0.0], [0.0, 0.2, 0.0]], atol=1e-15)
        assert_allclose(proj.cov2d, 0.04 * np.eye(2), atol=1e-15)
        assert proj.depth == 5.0

    def test_project_component_jacobian_finite_difference(self):
        """Testa J contra diferenças finitas do mapa de projeção."""
        cam = Camera(np.eye(3), [0.1, -0.2, 4.0], 30.0, 25.0, 8.0, 8.0, 16, 16)
        mu = np.array([0.3, 0.2, 0.5])
        proj = project_component(TComponent.create(mu), cam)

        def pixel(p):
            return np.array([cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy])

        p = mu + cam.translation_wc
        numeric = np.stack([(pixel(p + e) - pixel(p - e)) / 2e-6 for e in np.eye(3) * 1e-6], axis=1)
        assert_allclose(proj.jacobian, numeric, rtol=1e-6)

    def test_project_component_out_of_frustum(self):
        """Testa p_z = z_near/2 → fora do frustum."""
        cam = Camera(np.eye(3), [0.0, 0.0, 0.005], 1.0, 1.0, 0.0, 0.0, 8, 8)
        assert project_component(TComponent.create(np.zeros(3)), cam) is None

    def test_lateral_shift_keeps_cov2d_at_axis(self):
        """Testa que deslocar t lateralmente move μ²ᴰ; cov2d só muda pelo termo de J em x."""
        base = Camera(np.eye(3), [0.0, 0.0, 5.0], 10.0, 10.0, 0.0, 0.0, 8, 8)
        shifted = Camera(np.eye(3), [1.0, 0.0, 5.0], 10.0, 10.0, 0.0, 0.0, 8, 8)
        c = TComponent.create(np.zeros(3), scale=(0.1, 0.2, 0.0001))
        a, b = project_component(c, base), project_component(c, shifted)
        assert b.mean2d[0] == pytest.approx(a.mean2d[0] + 2.0)
        assert_allclose(b.cov2d, a.cov2d, rtol=1e-6)

    def test_density2d_examples(self):
        """Testa pico e ν = 2, h = 2 → 0.25."""
        cam = Camera(np.eye(3), [0.0, 0.0, 5.0], 5.0, 5.0, 0.0, 0.0, 8, 8)
        proj = project_component(TComponent.create(np.zeros(3), nu=2.0), cam)
        assert density2d(proj.mean2d, proj) == 1.0
        assert density2d([np.sqrt(2.0), 0.0], proj) == pytest.approx(0.25, rel=1e-12)

    def test_cutoff_radius(self):
        """Testa τ → 1, correspondência 3σ gaussiana e densidade = τ no corte."""
        assert cutoff_radius(5.0, np.eye(2), tau=1.0 - 1e-15) == pytest.approx(0.0, abs=1e-6)
        assert np.sqrt(mahalanobis_cut_sq(10000.0, np.exp(-4.5))) == pytest.approx(3.0, rel=1e-2)
        rng = np.random.default_rng(8)
        for _ in range(20):
            nu = rng.uniform(1.0, 100.0)
            tau = rng.uniform(1e-4, 0.5)
            h = float(mahalanobis_cut_sq(nu, tau))
            assert (1.0 + h / nu) ** (-(nu + 2) / 2) == pytest.approx(tau, rel=1e-12)

    def test_squared_mixture(self):
        """Testa a forma quadrada e a expansão em pares."""
        assert squared_mixture_eval([1.0], [0.5]) == pytest.approx((0.25, 0.25))
        assert squared_mixture_eval([1.0, -1.0], [0.5, 0.5]) == pytest.approx((0.0, 0.0), abs=1e-15)
        rng = np.random.default_rng(9)
        a, b = squared_mixture_eval(rng.normal(size=50), rng.uniform(size=50))
        assert a == pytest.approx(b, rel=1e-12)

    def test_project_mixture_matches_single(self):
        """Testa a projeção em lote contra project_component."""
        rng = np.random.default_rng(10)
        comps = [
            TComponent(rng.normal(size=3) * 0.3, rng.normal(size=3) * 0.3 - 2, rng.normal(size=4), rng.normal(), 0.2, np.zeros((1, 3)))
            for _ in range(6)
        ]
        cam = Camera(np.eye(3), [0.0, 0.0, 3.0], 20.0, 20.0, 8.0, 8.0, 16, 16)
        batch = project_mixture(Mixture.from_components(comps), cam)
        for i, c in enumerate(comps):
            single = project_component(c, cam)
            assert_allclose(batch.mean2d[i], single.mean2d, rtol=1e-12)
            assert_allclose(batch.cov2d[i], single.cov2d, rtol=1e-10, atol=1e-14)
            assert batch.radius[i] == pytest.approx(single.cutoff_radius_px, rel=1e-10)
