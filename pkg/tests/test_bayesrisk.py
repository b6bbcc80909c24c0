import itertools

import numpy as np
import pytest

from locfield.bayesrisk import (
    PriorDraws,
    PriorSpec,
    TraceGeometry,
    TraceTables,
    bayes_risk,
    compute_B2,
    compute_B4,
    expected_kl_curve,
    improvement_grid,
    ordered_setup,
    reachable_tuples,
    risk_curve,
)
from locfield.core import telescope_weights
from locfield.covariance import MaternParams
from locfield.kernels import BandwidthPolicy, KernelSpec, kernel_weights

K6 = KernelSpec.higher_order(3)
HARD = KernelSpec.hard_threshold()


def setup(n, lam, params=MaternParams(1.0, 0.8, 0.2), kernel=K6, endpoint=True):
    locs = np.linspace(0, 1, n, endpoint=endpoint)
    o, cov, offs = ordered_setup(locs, 0.5, params)
    return o, cov, offs, kernel_weights(kernel, o, BandwidthPolicy(lam))


def brute_b2(w, cov, offs, p1, p2):
    out = 0.0
    for k in range(1, len(offs) + 1):
        s = cov[:k, :k]
        d1, d2 = np.diag(offs[:k] ** p1), np.diag(offs[:k] ** p2)
        out += w.wtilde[k - 1] * np.trace(np.linalg.solve(s, d1 @ s @ d2))
    return out


def brute_b4(w, cov, offs, idx):
    p1, p2, p3, p4 = idx
    n = len(offs)
    out = 0.0
    for j in range(1, n + 1):
        for k in range(1, n + 1):
            lo, hi = min(j, k), max(j, k)
            s = cov[:hi, :hi]
            d = [np.diag(offs[:hi] ** p) for p in idx]
            pad = np.zeros((hi, hi))
            pad[:lo, :lo] = np.linalg.inv(cov[:lo, :lo])
            m = np.linalg.solve(s, d[0] @ s @ d[1]) @ pad @ d[2] @ s @ d[3]
            out += 2 * w.wtilde[j - 1] * w.wtilde[k - 1] * np.trace(m)
    return out


class TestPrior:
    def test_moments(self):
        p = PriorSpec(2.0, (1.0, 4.0))
        assert p.moment((0, 0, 0, 0)) == 16.0
        assert p.moment((0, 0, 2, 2)) == 16.0
        assert p.moment((1, 1, 2, 2)) == 4.0
        assert p.moment((2, 2, 2, 2)) == 48.0
        assert p.moment((0, 1, 1, 1)) == 0.0

    def test_reachable(self):
        t = reachable_tuples(1)
        assert (0, 0, 1, 1) in t and (0, 0, 0, 1) not in t
        assert len(t) == 8

    def test_validation(self):
        with pytest.raises(ValueError):
            PriorSpec(0.0, (1.0,))
        with pytest.raises(ValueError):
            PriorSpec(1.0, (-1.0,))


class TestB2:
    def test_b00(self):
        for lam in (0.05, 0.2, 0.6):
            _, cov, offs, w = setup(30, lam)
            assert compute_B2(w, cov, offs, 2)[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_b0p_closed_form(self):
        _, cov, offs, w = setup(30, 0.3)
        b = compute_B2(w, cov, offs, 4)
        for p in range(5):
            assert b[0, p] == pytest.approx(np.sum(w.w * offs ** p) / w.w.sum(), abs=1e-10)
            assert b[p, 0] == pytest.approx(b[0, p], abs=1e-10)

    def test_brute_force(self):
        _, cov, offs, w = setup(12, 0.3)
        b = compute_B2(w, cov, offs, 2)
        for p1, p2 in itertools.product(range(3), repeat=2):
            assert b[p1, p2] == pytest.approx(brute_b2(w, cov, offs, p1, p2), rel=1e-9, abs=1e-13)

    def test_monte_carlo_mean(self):
        n = 25
        o, cov, offs, w = setup(n, 0.3)
        c = np.array([2.0, 0.7, -1.1])
        sigma = c[0] + c[1] * offs + c[2] * offs ** 2
        rng = np.random.default_rng(7)
        z = sigma[:, None] * (np.linalg.cholesky(cov) @ rng.standard_normal((n, 50_000)))
        L = np.linalg.cholesky(cov)
        u = np.linalg.solve(L, z)
        q = np.cumsum(u * u, axis=0)
        est = w.wtilde @ q
        b = compute_B2(w, cov, offs, 2)
        expected = c @ b @ c
        assert abs(est.mean() - expected) < 3 * est.std() / np.sqrt(est.size)

    def test_infill_bias_vanishes(self):
        for p in range(1, 6):
            _, cov1, offs1, w1 = setup(50, 0.2, endpoint=False)
            _, cov2, offs2, w2 = setup(400, 0.05, endpoint=False)
            b1 = np.sum(w1.w * offs1 ** p) / w1.w.sum()
            b2 = np.sum(w2.w * offs2 ** p) / w2.w.sum()
            assert abs(b2) < 0.1 * abs(b1)


class TestB4:
    def test_chi_square(self):
        n = 15
        _, cov, offs, _ = setup(n, 0.3)
        w = telescope_weights(np.ones(n))
        assert compute_B4(w, cov, offs, 0)[0, 0, 0, 0] == pytest.approx(2 / n, rel=1e-10)

    def test_brute_force(self):
        _, cov, offs, w = setup(9, 0.3)
        g = TraceGeometry(cov, offs, 2)
        for idx in [(0, 0, 0, 0), (0, 1, 1, 0), (1, 2, 0, 1), (2, 2, 2, 2)]:
            assert g.B4_entry(w.wtilde, idx) == pytest.approx(brute_b4(w, cov, offs, idx), rel=1e-8, abs=1e-14)

    def test_transpose_symmetry(self):
        _, cov, offs, w = setup(20, 0.3)
        g = TraceGeometry(cov, offs, 2)
        for idx in itertools.product(range(3), repeat=4):
            a = g.B4_entry(w.wtilde, idx)
            b = g.B4_entry(w.wtilde, idx[::-1])
            assert a == pytest.approx(b, rel=1e-10, abs=1e-14)

    def test_monte_carlo_variance(self):
        n = 20
        _, cov, offs, w = setup(n, 0.3)
        c = np.array([1.5, 0.8])
        sigma = c[0] + c[1] * offs
        rng = np.random.default_rng(3)
        L = np.linalg.cholesky(cov)
        z = sigma[:, None] * (L @ rng.standard_normal((n, 40_000)))
        est = w.wtilde @ np.cumsum(np.linalg.solve(L, z) ** 2, axis=0)
        tuples = list(itertools.product(range(2), repeat=4))
        b4 = compute_B4(w, cov, offs, 1, tuples)
        expected = sum(np.prod(c[list(t)]) * b4[t] for t in tuples)
        dev = est - est.mean()
        se = np.sqrt((np.mean(dev ** 4) - np.var(est) ** 2) / est.size)
        assert abs(np.var(est) - expected) < 3 * se


class TestBayesRisk:
    def test_n0(self):
        _, cov, offs, w = setup(20, 0.3)
        prior = PriorSpec(2.0, ())
        r = bayes_risk(prior, TraceGeometry(cov, offs, 0).tables(w))
        b4 = compute_B4(w, cov, offs, 0)[0, 0, 0, 0]
        assert r["expected_bias_sq"] == 0.0
        assert r["risk"] == pytest.approx(16 * b4, rel=1e-12)

    def test_paper_setting(self):
        prior = PriorSpec.gaussian(2.0, 4.0, 4)
        for nu, rho in [(0.5, 0.4), (1.0, 0.8), (2.0, 1.2)]:
            _, cov, offs, w = setup(100, 0.3, MaternParams(1.0, nu, rho), endpoint=False)
            r = bayes_risk(prior, TraceGeometry(cov, offs, 4).tables(w))
            assert np.isfinite(r["risk"]) and r["risk"] > 0
            assert r["variance_part"] >= 0
            assert r["risk"] >= r["expected_bias_sq"]

    def test_mismatched_order(self):
        _, cov, offs, w = setup(10, 0.3)
        with pytest.raises(ValueError):
            bayes_risk(PriorSpec.gaussian(1.0, 1.0, 2), TraceGeometry(cov, offs, 1).tables(w))

    def test_missing_entry(self):
        t = TraceTables(np.eye(2), np.full((2,) * 4, np.nan))
        with pytest.raises(ValueError):
            bayes_risk(PriorSpec.gaussian(1.0, 1.0, 1), t)

    def test_risk_curve_inf_for_empty(self):
        o, cov, offs, _ = setup(20, 0.3)
        g = TraceGeometry(cov, offs, 1)
        c = risk_curve(HARD, [1e-4, 0.3], g, o, PriorSpec.gaussian(1.0, 1.0, 1))
        assert np.isinf(c["risk"][0]) and np.isfinite(c["risk"][1])


class TestImprovementGrid:
    prior = PriorSpec.gaussian(2.0, 4.0, 4)
    locs = np.linspace(0, 1, 100, endpoint=False)
    lambdas = np.geomspace(0.01, 1.0, 40)

    def test_identical_kernels(self):
        rows = improvement_grid([0.8], [0.8], K6, K6, self.lambdas, self.prior, self.locs)
        assert rows[0]["pct_risk_improvement"] == 0.0

    def test_k6_beats_hard_threshold(self):
        rows = improvement_grid([0.8], [0.8], K6, HARD, self.lambdas, self.prior, self.locs)
        assert rows[0]["pct_risk_improvement"] > 0

    def test_bias_can_exceed_risk_improvement(self):
        rows = improvement_grid([0.5, 2.0], [0.4, 1.2], K6, HARD, self.lambdas, self.prior, self.locs)
        assert any(r["pct_bias_improvement"] > r["pct_risk_improvement"] for r in rows)

    def test_kl_oracle_deterministic(self):
        args = ([0.8], [0.8], K6, HARD, self.lambdas, self.prior, self.locs)
        a = improvement_grid(*args, oracle="kl", draws=500, seed=3)
        b = improvement_grid(*args, oracle="kl", draws=500, seed=3)
        assert a == b
        assert a[0]["pct_risk_improvement"] > 0

    def test_unknown_oracle(self):
        with pytest.raises(ValueError):
            improvement_grid([0.8], [0.8], K6, K6, self.lambdas, self.prior, self.locs, oracle="mse")


class TestExpectedKL:
    def test_matches_exact_scalar_kl(self):
        # one observation, N = 0: sigma_hat^2 / c0^2 ~ chi2_1, E[KL] = (-log 2 - digamma(1/2)) / 2
        from scipy.special import digamma
        prior = PriorSpec.gaussian(1.5, 1.0, 0)
        ordering, cov, offs = ordered_setup(np.array([0.3]), 0.3, MaternParams(1.0, 0.8, 0.5))
        mc = PriorDraws(cov, offs, prior, draws=200000, seed=1)
        kl = expected_kl_curve(HARD, [0.1], mc, ordering)[0]
        exact = 0.5 * (-np.log(2.0) - digamma(0.5))
        assert abs(kl - exact) < 0.02
