import math

import numpy as np
import pytest

from locfield.core import NumericalError
from locfield.linalg import (
    CholSequence,
    chol_append,
    dense_loglik,
    inverse_downdate,
    kl_mean_zero,
    loglik_increments,
    quad_form_sequence,
)


def random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


class TestCholAppend:
    def test_scalar(self):
        seq = chol_append(CholSequence(), [], 4.0)
        np.testing.assert_array_equal(seq.L, [[2.0]])

    def test_matches_dense(self, rng):
        s = random_spd(rng, 12)
        seq = CholSequence(capacity=2)
        for k in range(12):
            chol_append(seq, s[k, :k], s[k, k])
        np.testing.assert_allclose(seq.L, np.linalg.cholesky(s), atol=1e-10)

    def test_duplicate_is_singular(self):
        seq = chol_append(CholSequence(), [], 1.0)
        with pytest.raises(NumericalError, match="numerically singular append"):
            chol_append(seq, [1.0], 1.0)

    def test_conditional_statistics(self, rng):
        s = random_spd(rng, 5)
        z = rng.standard_normal(5)
        seq = CholSequence()
        for k in range(5):
            chol_append(seq, s[k, :k], s[k, k], z[k])
        k = 4
        mean = s[k, :k] @ np.linalg.solve(s[:k, :k], z[:k])
        var = s[k, k] - s[k, :k] @ np.linalg.solve(s[:k, :k], s[:k, k])
        assert seq.cond_means[k] == pytest.approx(mean, rel=1e-10)
        assert seq.cond_vars[k] == pytest.approx(var, rel=1e-10)


class TestIncrements:
    def test_first(self):
        s = np.array([[2.0, 0.5], [0.5, 1.0]])
        z = np.array([0.7, -0.2])
        d = loglik_increments(s, z)
        assert d[0] == pytest.approx(-0.5 * math.log(2 * math.pi * 2.0) - 0.49 / 4.0, abs=1e-14)

    def test_telescoping(self, rng):
        for _ in range(10):
            s = random_spd(rng, 20)
            z = rng.standard_normal(20)
            assert np.sum(loglik_increments(s, z)) == pytest.approx(dense_loglik(s, z), rel=1e-8)

    def test_independent(self, rng):
        v = rng.uniform(0.5, 2, 6)
        z = rng.standard_normal(6)
        expected = -0.5 * np.log(2 * np.pi * v) - z * z / (2 * v)
        np.testing.assert_allclose(loglik_increments(np.diag(v), z), expected, atol=1e-13)


class TestDowndate:
    def test_identity(self):
        np.testing.assert_array_equal(inverse_downdate(np.eye(2), 1), [[1.0]])

    def test_vs_direct(self, rng):
        s = random_spd(rng, 20)
        out = inverse_downdate(np.linalg.inv(s), 7)
        keep = np.r_[0:7, 8:20]
        np.testing.assert_allclose(out, np.linalg.inv(s[np.ix_(keep, keep)]), atol=1e-8)

    def test_order_independent(self, rng):
        inv = np.linalg.inv(random_spd(rng, 12))
        a = inverse_downdate(inverse_downdate(inv, 9), 5)
        b = inverse_downdate(inverse_downdate(inv, 5), 8)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_bad_pivot(self):
        with pytest.raises(NumericalError):
            inverse_downdate(np.diag([1.0, 0.0]), 1)

    def test_append_then_downdate(self, rng):
        s = random_spd(rng, 8)
        inv7 = np.linalg.inv(s[:7, :7])
        np.testing.assert_allclose(inverse_downdate(np.linalg.inv(s), 7), inv7, atol=1e-9)


class TestQuadForms:
    def test_diagonal(self, rng):
        v = rng.uniform(0.5, 2, 6)
        z = rng.standard_normal(6)
        perm = np.arange(6)
        np.testing.assert_allclose(quad_form_sequence(np.diag(1 / v), z, perm), np.cumsum(z * z / v))

    def test_dense(self, rng):
        s = random_spd(rng, 15)
        z = rng.standard_normal(15)
        perm = rng.permutation(15)
        q = quad_form_sequence(np.linalg.inv(s), z, perm)
        for k in range(1, 16):
            idx = perm[:k]
            assert q[k - 1] == pytest.approx(z[idx] @ np.linalg.solve(s[np.ix_(idx, idx)], z[idx]), rel=1e-8)
        assert q[0] == pytest.approx(z[perm[0]] ** 2 / s[perm[0], perm[0]], rel=1e-10)


class TestKL:
    def test_zero(self, rng):
        s = random_spd(rng, 5)
        assert kl_mean_zero(s, s) < 1e-12

    def test_scalar(self):
        assert kl_mean_zero([[2.0]], [[1.0]]) == pytest.approx(0.5 * (1 + math.log(0.5)), abs=1e-14)
        assert abs(0.5 * (1 + math.log(0.5)) - 0.15343) < 1e-5

    def test_scaled_identity(self):
        n, c = 7, 2.5
        assert kl_mean_zero(c * np.eye(n), np.eye(n)) == pytest.approx(n / 2 * (c - 1 - math.log(c)), rel=1e-12)

    def test_positive(self, rng):
        for _ in range(20):
            assert kl_mean_zero(random_spd(rng, 4), random_spd(rng, 4)) > 0

    def test_not_pd(self):
        with pytest.raises(NumericalError):
            kl_mean_zero(np.eye(2), np.diag([1.0, -1.0]))
