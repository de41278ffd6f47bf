import numpy as np
import pytest

from mspde.errors import DomainError
from mspde.models import SineGrid, build_model, holder_bench, linear_bench, nemytskii_bench
from mspde.rngutil import substream


class TestLinearBench:
    def test_decoupled_fbar_is_minus_half_x(self):
        m = linear_bench(4)
        x = np.array([1.0, -2.0, 0.5, 0.0])
        assert np.allclose(m.closed_form.fbar(x), -0.5 * x, rtol=1e-15)

    def test_frozen_stationary_variance_formula(self):
        # beta_1 = 1, lambda_{2,1} = 2 -> var = 1
        from mspde.spectral import NoiseSpectrum, OperatorSpectrum, power_law_noise, power_law_operator
        op = power_law_operator(1, 2.0)
        spectra = (op, op, power_law_noise(1, -4.0), NoiseSpectrum(np.array([2.0])))
        m = linear_bench(1, spectra=spectra)
        assert m.closed_form.frozen_var[0] == pytest.approx(1.0, rel=1e-15)

    def test_sigma_closed_form(self):
        # sigma_11 = c_1 sqrt(lambda_{2,1}) / beta_1 = 3 sqrt(2)
        from mspde.spectral import NoiseSpectrum, power_law_noise, power_law_operator
        op = power_law_operator(1, 2.0)
        spectra = (op, op, power_law_noise(1, -4.0), NoiseSpectrum(np.array([2.0])))
        m = linear_bench(1, c=[3.0], spectra=spectra)
        sig = m.closed_form.sigma(np.zeros(1))
        assert sig[0, 0] == pytest.approx(4.2426406871192851464, rel=1e-14)

    def test_frozen_mean_and_corrector(self):
        m = linear_bench(3, c=[1.0, 2.0], K=np.eye(3))
        x = np.array([2.0, 1.0, -1.0])
        beta = m.opB.eigenvalues
        assert np.allclose(m.closed_form.frozen_mean(x), x / beta, rtol=1e-14)
        y = np.array([0.5, 0.5, 0.5])
        cvec = np.array([1.0, 2.0, 0.0])
        expect = cvec * (y - x / beta) / beta
        assert np.allclose(m.closed_form.psi(x, y), expect, rtol=1e-14)

    def test_batched_evaluation(self):
        m = linear_bench(3, c=[1.0], K=np.eye(3), f0=[0.5, 0, 0])
        xs = substream(1, "b").standard_normal((7, 3))
        ys = substream(2, "b").standard_normal((7, 3))
        batch = m.F.evaluate(xs, ys)
        rows = np.stack([m.F.evaluate(xs[i], ys[i]) for i in range(7)])
        assert np.allclose(batch, rows, rtol=1e-15)

    def test_jacobians_match_finite_differences(self):
        m = linear_bench(3, c=[1.0, -0.5], K=0.3 * np.eye(3))
        rng = substream(3, "jac")
        x, y, h = rng.standard_normal((3, 3))
        fd = (m.F.evaluate(x + 1e-4 * h, y) - m.F.evaluate(x - 1e-4 * h, y)) / 2e-4
        assert np.allclose(m.F.jacobian_x(x, y, h), fd, rtol=1e-5, atol=1e-12)
        fd_g = (m.G.evaluate(x + 1e-4 * h, y) - m.G.evaluate(x - 1e-4 * h, y)) / 2e-4
        assert np.allclose(m.G.jacobian_x(x, y, h), fd_g, rtol=1e-5, atol=1e-12)


class TestSineGrid:
    def test_round_trip_is_identity(self):
        # pointwise identity nonlinearity: DST^-1 o DST recovers coefficients
        grid = SineGrid(8, 16)
        rng = substream(4, "dst")
        coeffs = rng.standard_normal(8)
        back = grid.coeffs(grid.values(coeffs))
        assert np.allclose(back, coeffs, atol=1e-10)

    def test_anti_aliasing_floor(self):
        with pytest.raises(DomainError):
            SineGrid(8, 15)

    def test_values_match_direct_basis_sum(self):
        grid = SineGrid(3, 8)
        coeffs = np.array([1.0, -0.5, 0.25])
        direct = np.zeros(8)
        for k in range(3):
            direct += coeffs[k] * np.sqrt(2 / np.pi) * np.sin((k + 1) * grid.xi)
        assert np.allclose(grid.values(coeffs), direct, atol=1e-12)


class TestNemytskiiBench:
    def test_zero_maps_to_zero(self):
        m = nemytskii_bench(8)
        z = np.zeros(8)
        assert np.allclose(m.F.evaluate(z, z), 0.0, atol=1e-14)

    def test_G_bound(self):
        # |G| <= 3/2 pointwise on (0, pi), so ||G||_L2 <= (3/2) sqrt(pi)
        m = nemytskii_bench(8)
        rng = substream(5, "bound")
        for _ in range(200):
            x = rng.standard_normal(8) * rng.uniform(0, 5)
            y = rng.standard_normal(8) * rng.uniform(0, 5)
            assert np.linalg.norm(m.G.evaluate(x, y)) <= 1.5 * np.sqrt(np.pi) + 1e-12

    def test_growth_bound_sampled(self):
        m = nemytskii_bench(8)
        rng = substream(6, "growth")
        xs = rng.standard_normal((1000, 8))
        ys = rng.standard_normal((1000, 8))
        xs *= (10 * rng.random(1000) / np.linalg.norm(xs, axis=1))[:, None]
        ys *= (10 * rng.random(1000) / np.linalg.norm(ys, axis=1))[:, None]
        fn = np.linalg.norm(m.F.evaluate(xs, ys), axis=1)
        ratio = fn / (1 + np.linalg.norm(xs, axis=1) + np.linalg.norm(ys, axis=1))
        assert ratio.max() <= m.F.growth_const

    def test_jacobians_match_finite_differences(self):
        m = nemytskii_bench(6)
        rng = substream(7, "njac")
        x, y, h, k = rng.standard_normal((4, 6))
        fd_x = (m.F.evaluate(x + 1e-4 * h, y) - m.F.evaluate(x - 1e-4 * h, y)) / 2e-4
        assert np.allclose(m.F.jacobian_x(x, y, h), fd_x, rtol=1e-5, atol=1e-9)
        fd_y = (m.F.evaluate(x, y + 1e-4 * k) - m.F.evaluate(x, y - 1e-4 * k)) / 2e-4
        assert np.allclose(m.F.jacobian_y(x, y, k), fd_y, rtol=1e-5, atol=1e-9)
        fd_gx = (m.G.evaluate(x + 1e-4 * h, y) - m.G.evaluate(x - 1e-4 * h, y)) / 2e-4
        assert np.allclose(m.G.jacobian_x(x, y, h), fd_gx, rtol=1e-5, atol=1e-9)
        fd_gy = (m.G.evaluate(x, y + 1e-4 * k) - m.G.evaluate(x, y - 1e-4 * k)) / 2e-4
        assert np.allclose(m.G.jacobian_y(x, y, k), fd_gy, rtol=1e-5, atol=1e-9)

    def test_fd_fallback_agrees_with_jacobian(self):
        m = nemytskii_bench(6)
        rng = substream(8, "fall")
        x, y, h = rng.standard_normal((3, 6))
        explicit = m.F.jacobian_x(x, y, h)
        m2 = nemytskii_bench(6)
        m2.F.jacobian_x = None
        assert np.allclose(m2.F.dx(x, y, h), explicit, rtol=1e-5, atol=1e-9)


class TestRegistry:
    def test_build_by_name(self):
        m = build_model("linear", 4, c=[1.0])
        assert m.name == "linear" and m.n == 4

    def test_unknown_name(self):
        with pytest.raises(DomainError):
            build_model("nope", 4)

    def test_holder_flagged(self):
        m = holder_bench(4, eta=0.5)
        assert not m.F.lipschitz
        assert any("no scheme-convergence guarantee" in w for w in m.warnings)
        with pytest.raises(DomainError):
            holder_bench(4, eta=0.0)

    def test_rebuild_at_smaller_level(self):
        m = build_model("linear", 8, c=[1.0, 2.0], f0=[0.1] * 8)
        m_small = build_model("linear", 4, **{k: v for k, v in m.params.items()})
        assert m_small.n == 4
