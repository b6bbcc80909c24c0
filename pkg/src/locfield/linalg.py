"""Incremental Gaussian linear algebra.

Cholesky bordering (append one observation at a time), inverse
downdating, sequences of nested quadratic forms, log-likelihood
increments and the KL divergence between mean-zero Gaussians.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import linalg as sla

from .core import NumericalError

LOG_2PI = math.log(2.0 * math.pi)
# relative conditional-variance floor
COND_VAR_FLOOR = 1e-12


class CholSequence:
    """Growing lower Cholesky factor of nested covariance matrices.

    Single-writer: :meth:`append` mutates the sequence in place. When
    responses are supplied with each append, the conditional mean and
    variance of every new response given the earlier ones are recorded.
    """

    def __init__(self, capacity: int = 16):
        self._L = np.zeros((max(int(capacity), 1),) * 2)
        self._u = np.zeros(self._L.shape[0])
        self.k = 0
        self.cond_means: list[float] = []
        self.cond_vars: list[float] = []
        self._max_diag = 0.0

    @property
    def L(self) -> np.ndarray:
        return self._L[: self.k, : self.k]

    def _grow(self):
        cap = self._L.shape[0] * 2
        big = np.zeros((cap, cap))
        big[: self.k, : self.k] = self.L
        self._L = big
        u = np.zeros(cap)
        u[: self.k] = self._u[: self.k]
        self._u = u

    def append(self, new_col, new_diag: float, z: float | None = None) -> "CholSequence":
        """Border the factor with covariances ``new_col`` and variance ``new_diag``."""
        new_col = np.asarray(new_col, dtype=float).ravel()
        if new_col.size != self.k:
            raise ValueError(f"new_col has length {new_col.size}, expected {self.k}")
        if not new_diag > 0:
            raise NumericalError("numerically singular append")
        if self.k == self._L.shape[0]:
            self._grow()
        k = self.k
        if k:
            ell = sla.solve_triangular(self.L, new_col, lower=True, check_finite=False)
        else:
            ell = new_col
        self._max_diag = max(self._max_diag, float(new_diag))
        cvar = new_diag - ell @ ell
        if not cvar > COND_VAR_FLOOR * self._max_diag:
            raise NumericalError("numerically singular append")
        dk = math.sqrt(cvar)
        self._L[k, :k] = ell
        self._L[k, k] = dk
        if z is not None:
            mean = float(ell @ self._u[:k]) if k else 0.0
            self._u[k] = (z - mean) / dk
            self.cond_means.append(mean)
            self.cond_vars.append(cvar)
        self.k = k + 1
        return self


def chol_append(seq: CholSequence, new_col, new_diag: float, z: float | None = None) -> CholSequence:
    """Append one row/column to ``seq`` in O(k^2)."""
    return seq.append(new_col, new_diag, z)


def ordered_cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with the conditional-variance floor applied.

    Row k of this factor is exactly what :func:`chol_append` produces when
    the observations are appended in matrix order.
    """
    try:
        L = sla.cholesky(cov, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NumericalError("numerically singular append") from exc
    d = np.diag(L)
    if not np.all(np.isfinite(d)) or np.any(d * d <= COND_VAR_FLOOR * np.max(np.diag(cov))):
        raise NumericalError("numerically singular append")
    return L


def whiten(L: np.ndarray, z) -> np.ndarray:
    """Standardized conditional residuals e_k / d_k for one or more response vectors."""
    return sla.solve_triangular(L, z, lower=True, check_finite=False)


def increments_from_factor(L: np.ndarray, z) -> np.ndarray:
    """Per-observation log-likelihood increments given the ordered factor.

    Works on a vector z of shape (k,) or a stack of shape (k, m).
    """
    u = whiten(L, z)
    logd = np.log(np.diag(L))
    if u.ndim == 2:
        logd = logd[:, None]
    return -0.5 * LOG_2PI - logd - 0.5 * u * u


def loglik_increments(cov, z) -> np.ndarray:
    """Increments l(N_k) - l(N_{k-1}) of the Gaussian log-likelihood.

    ``cov`` and ``z`` must already be arranged in neighbor order; their sum
    is the joint log-likelihood of all observations.
    """
    return increments_from_factor(ordered_cholesky(np.asarray(cov, dtype=float)), np.asarray(z, dtype=float))


def dense_loglik(cov, z) -> float:
    """-z' C^-1 z / 2 - log|2 pi C| / 2 computed from scratch."""
    cov = np.asarray(cov, dtype=float)
    z = np.asarray(z, dtype=float)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise NumericalError("covariance is not positive definite")
    return float(-0.5 * z @ np.linalg.solve(cov, z) - 0.5 * (z.size * LOG_2PI + logdet))


def inverse_downdate(inv, drop: int) -> np.ndarray:
    """Inverse of a covariance with row/column ``drop`` removed, from the full inverse.

    inv(-drop, -drop) - inv(-drop, drop) inv(drop, -drop) / inv(drop, drop);
    the remaining indices keep their relative order.
    """
    inv = np.asarray(inv, dtype=float)
    k = inv.shape[0]
    if not 0 <= drop < k:
        raise IndexError(f"drop index {drop} out of range for size {k}")
    piv = inv[drop, drop]
    if not piv > 1e-14:
        raise NumericalError("non-positive pivot in inverse downdate")
    keep = np.r_[0:drop, drop + 1 : k]
    col = inv[keep, drop]
    return inv[np.ix_(keep, keep)] - np.outer(col, col) / piv


def quad_form_sequence(inv_n, z, perm) -> np.ndarray:
    """q_k = z_k' Sigma_k^-1 z_k for the k nearest observations, k = 1..n.

    ``inv_n`` is the full inverse in original index order and ``perm`` the
    neighbor ordering; the inverse is downdated from the farthest
    observation inwards.
    """
    inv = np.array(inv_n, dtype=float)
    z = np.asarray(z, dtype=float)
    perm = np.asarray(perm)
    n = perm.size
    # work in neighbor order so the farthest observation is always last
    inv = inv[np.ix_(perm, perm)]
    zp = z[perm]
    q = np.empty(n)
    for k in range(n, 0, -1):
        zk = zp[:k]
        q[k - 1] = zk @ inv @ zk
        if k > 1:
            inv = inverse_downdate(inv, k - 1)
    return q


def kl_mean_zero(s1, s2) -> float:
    """KL divergence D(N(0, s1) || N(0, s2)).

    0.5 [tr(s2^-1 s1) - n + log det s2 - log det s1].
    """
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if s1.shape != s2.shape or s1.ndim != 2 or s1.shape[0] != s1.shape[1]:
        raise ValueError("covariances must be square and of equal size")
    try:
        l1 = sla.cholesky(s1, lower=True, check_finite=False)
        l2 = sla.cholesky(s2, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NumericalError("covariance is not positive definite") from exc
    m = sla.solve_triangular(l2, l1, lower=True, check_finite=False)
    tr = float(np.sum(m * m))
    logdet = 2.0 * float(np.sum(np.log(np.diag(l2))) - np.sum(np.log(np.diag(l1))))
    return max(0.5 * (tr - s1.shape[0] + logdet), 0.0)
