import math

import numpy as np
import pytest
from scipy import integrate, special

from locfield.covariance import (
    AnisotropicNSMatern,
    MaternParams,
    ModulatedModel,
    NSMatern,
    NSSmoothnessMatern,
    StationaryMatern,
    bessel_k,
    cov_matrix,
    cov_value,
    matern_cov,
    matern_m,
    verify_appendix_identities,
)


def smooth_nu(lo=0.4, hi=2.5):
    mid, amp = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return lambda x: mid + amp * np.sin(2 * np.pi * x[:, 0]) * np.cos(np.pi * x[:, -1])


class TestBessel:
    def test_half_integer(self):
        assert abs(bessel_k(0.5, 1.0) - 0.461068504) < 1e-9
        x = np.array([0.01, 0.3, 1.0, 5.0, 40.0])
        base = np.sqrt(np.pi / (2 * x)) * np.exp(-x)
        np.testing.assert_allclose(bessel_k(0.5, x), base, rtol=1e-10)
        np.testing.assert_allclose(bessel_k(1.5, x), base * (1 + 1 / x), rtol=1e-10)
        np.testing.assert_allclose(bessel_k(2.5, x), base * (1 + 3 / x + 3 / x ** 2), rtol=1e-10)

    def test_recurrence(self):
        for nu in (0.3, 1.7, 4.2):
            for x in (0.05, 1.0, 12.0):
                lhs = bessel_k(nu + 1, x)
                rhs = bessel_k(nu - 1 if nu > 1 else 1 - nu, x) + 2 * nu / x * bessel_k(nu, x)
                assert abs(lhs - rhs) < 1e-9 * abs(lhs)

    def test_integral_oracle(self):
        val = integrate.quad(lambda u: math.exp(-math.cosh(u)) * math.cosh(u), 0, 10.0, epsabs=0, epsrel=1e-12)[0]
        assert abs(bessel_k(1.0, 1.0) - val) < 1e-8

    @pytest.mark.parametrize("nu,x", [(0.0, 1.0), (22.0, 1.0), (1.0, 0.0), (1.0, 800.0)])
    def test_range(self, nu, x):
        with pytest.raises(ValueError):
            bessel_k(nu, x)


class TestMaternM:
    def test_zero_limit(self):
        assert abs(matern_m(1.0, 0.0) - 1.0) < 1e-14
        assert abs(matern_m(2.5, 0.0) - 2 ** 1.5 * special.gamma(2.5)) < 1e-12

    def test_half(self):
        x = np.linspace(0, 5, 11)
        np.testing.assert_allclose(matern_m(0.5, x), np.sqrt(np.pi / 2) * np.exp(-x), rtol=1e-12)

    def test_decreasing(self):
        assert np.all(np.diff(matern_m(0.8, np.linspace(1e-6, 10, 500))) < 0)


class TestMaternCov:
    def test_origin(self):
        assert matern_cov(MaternParams(2.5, 1.3, 0.4), 0.0) == pytest.approx(2.5, abs=1e-14)

    def test_exponential_case(self):
        h = np.linspace(0, 2, 9)
        np.testing.assert_allclose(matern_cov(MaternParams(3.0, 0.5, 0.7), h), 3 * np.exp(-math.sqrt(2) * h / 0.7), rtol=1e-12)

    def test_spectral_oracle(self):
        nu, rho, h = 0.8, 0.2, 0.2
        a = 2 * math.sqrt(nu) / rho
        c = special.gamma(nu + 0.5) / (special.gamma(nu) * math.sqrt(math.pi)) * a ** (2 * nu)
        val = 2 * integrate.quad(lambda w: c * (a * a + w * w) ** -(nu + 0.5), 0, np.inf, weight="cos", wvar=h)[0]
        assert abs(matern_cov(MaternParams(1.0, nu, rho), h) - val) < 1e-6

    def test_param_guard(self):
        with pytest.raises(ValueError):
            MaternParams(1.0, 25.0, 1.0)
        with pytest.raises(ValueError):
            MaternParams(-1.0, 1.0, 1.0)


class TestNonstationary:
    def test_reparam_diagonal(self, rng):
        m = NSMatern(lambda x: 1 + x[:, 0], smooth_nu(), lambda x: 0.3 + x[:, 1])
        locs = rng.uniform(size=(10, 2))
        np.testing.assert_allclose(np.diag(cov_matrix(m, locs)), (1 + locs[:, 0]) ** 2, rtol=1e-12)
        assert cov_matrix(m, locs[:1]).shape == (1, 1)

    def test_smoothness_only_reduction(self, rng):
        locs = rng.uniform(size=(15, 2))
        m = NSSmoothnessMatern(1.7, 0.4, 1.3)
        ref = cov_matrix(StationaryMatern(MaternParams(1.7, 1.3, 0.4)), locs)
        np.testing.assert_allclose(cov_matrix(m, locs), ref, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_stationary_reduction_all_variants(self, rng, dim):
        locs = rng.uniform(size=(12, dim))
        p = MaternParams(2.0, 0.9, 0.6)
        ref = cov_matrix(StationaryMatern(p), locs)
        alpha = p.rho ** 2 / (4 * p.nu)
        scale = math.sqrt(p.sigma2 * 2 ** (1 - p.nu) / special.gamma(p.nu) * alpha ** (dim / 2))
        full = AnisotropicNSMatern(scale, p.nu, alpha)
        for m in (NSMatern(math.sqrt(p.sigma2), p.nu, p.rho), NSSmoothnessMatern(p.sigma2, p.rho, p.nu), full):
            np.testing.assert_allclose(cov_matrix(m, locs), ref, rtol=1e-12, atol=1e-14)

    def test_symmetry(self, rng):
        m = NSMatern(1.0, smooth_nu(), 0.5)
        for _ in range(100):
            s, t = rng.uniform(size=2), rng.uniform(size=2)
            assert cov_value(m, s, t) == pytest.approx(cov_value(m, t, s), rel=1e-13)

    def test_anisotropic_matrix_alpha(self, rng):
        a = np.array([[2.0, 0.3], [0.3, 0.5]])
        m = AnisotropicNSMatern(1.0, 1.0, a)
        c = cov_matrix(m, rng.uniform(size=(20, 2)))
        assert np.linalg.eigvalsh(c).min() >= -1e-8 * np.linalg.eigvalsh(c).max()

    def test_psd_witness(self, rng):
        c = cov_matrix(NSSmoothnessMatern(1.0, 0.5, smooth_nu()), rng.uniform(size=(30, 2)))
        ev = np.linalg.eigvalsh(c)
        assert ev.min() >= -1e-8 * ev.max()

    def test_modulated(self, rng):
        locs = rng.uniform(size=(6, 1))
        base = StationaryMatern(MaternParams(1.0, 0.8, 0.2))
        m = ModulatedModel(lambda x: 2 + x[:, 0], base)
        s = 2 + locs[:, 0]
        np.testing.assert_allclose(cov_matrix(m, locs), s[:, None] * cov_matrix(base, locs) * s[None, :])

    def test_bad_parameter(self, rng):
        with pytest.raises(ValueError):
            cov_matrix(NSMatern(1.0, lambda x: -x[:, 0], 1.0), rng.uniform(size=(3, 1)))

    def test_nugget(self, rng):
        locs = rng.uniform(size=(4, 1))
        m = StationaryMatern(MaternParams(1.0, 0.5, 1.0))
        np.testing.assert_allclose(cov_matrix(m, locs, 0.1) - cov_matrix(m, locs), 0.1 * np.eye(4), atol=1e-15)


class TestAppendix:
    @pytest.mark.parametrize("nu_s,nu_t,q", [(1.0, 1.0, 1.0), (0.6, 1.4, 0.3)])
    def test_gr(self, nu_s, nu_t, q):
        r = verify_appendix_identities(nu_s, nu_t, q)
        assert r["gr_relative_residual"] < 1e-6
        assert r["lemma_residual"] < 1e-8

    def test_range(self):
        with pytest.raises(ValueError):
            verify_appendix_identities(30.0, 30.0, 1.0)
