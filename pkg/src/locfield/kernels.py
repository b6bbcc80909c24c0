"""Smoothing kernels and local-likelihood weight construction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import NeighborOrdering, NumericalError, WeightVector, as_location, telescope_weights

# weights below this fraction of the largest |w| are clamped to zero
CLAMP_RATIO = 1e-14

_SQRT2 = math.sqrt(2.0)


def hermite(j: int, t):
    """Normalized (probabilists') Hermite polynomial H_j evaluated at ``t``.

    Uses H_0 = 1, H_1 = t and H_{j+1} = t H_j - j H_{j-1}.
    """
    j = int(j)
    if not 0 <= j <= 15:
        raise ValueError("hermite order must be in [0, 15]")
    t = np.asarray(t, dtype=float)
    h_prev, h = np.ones_like(t), t.copy()
    if j == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    for i in range(1, j):
        h_prev, h = h, t * h - i * h_prev
    return h if h.ndim else float(h)


@lru_cache(maxsize=None)
def _hermite_coeffs(j: int) -> tuple:
    # ascending coefficients of H_j
    prev, cur = np.array([1.0]), np.array([0.0, 1.0])
    if j == 0:
        return tuple(prev)
    for i in range(1, j):
        nxt = np.zeros(i + 2)
        nxt[1:] = cur
        nxt[: i] -= i * prev
        prev, cur = cur, nxt
    return tuple(cur)


@lru_cache(maxsize=None)
def kernel_polynomial(r: int) -> np.ndarray:
    """Ascending coefficients of the polynomial factor of K_{2r}.

    The factor is s_r H_{2r-1}(t) / (t 2^{r-1} (r-1)!) with the sign
    s_r = (-1)^{r-1} chosen so the kernel integrates to one.
    """
    c = np.array(_hermite_coeffs(2 * r - 1))
    assert c[0] == 0.0
    scale = (-1) ** (r - 1) / (2 ** (r - 1) * math.factorial(r - 1))
    return scale * c[1:]


@dataclass(frozen=True)
class KernelSpec:
    """Either a Gaussian-based higher-order kernel K_{2r} or a hard threshold."""

    kind: str = "higher_order"
    r: int = 1

    def __post_init__(self):
        if self.kind not in ("higher_order", "hard_threshold"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "higher_order" and (int(self.r) != self.r or self.r < 1):
            raise ValueError("r must be a positive integer")

    @classmethod
    def higher_order(cls, r: int) -> "KernelSpec":
        return cls("higher_order", int(r))

    @classmethod
    def hard_threshold(cls) -> "KernelSpec":
        return cls("hard_threshold", 1)

    @classmethod
    def parse(cls, name: str) -> "KernelSpec":
        """Parse ``'K2'``, ``'K4'``, ... or ``'hard_threshold'``."""
        s = str(name).strip()
        if s.lower() in ("hard", "hard_threshold", "threshold"):
            return cls.hard_threshold()
        if s[:1] in "kK" and s[1:].isdigit() and int(s[1:]) % 2 == 0 and int(s[1:]) > 0:
            return cls.higher_order(int(s[1:]) // 2)
        raise ValueError(f"unknown kernel {name!r}")

    @property
    def name(self) -> str:
        return "hard_threshold" if self.kind == "hard_threshold" else f"K{2 * self.r}"


def kernel_value(spec: KernelSpec, t):
    """Evaluate K_{2r}(t) = Q_{2r-2}(t) phi(t)."""
    if spec.kind != "higher_order":
        raise ValueError("kernel_value requires a higher-order kernel")
    t = np.asarray(t, dtype=float)
    poly = np.polynomial.polynomial.polyval(t, kernel_polynomial(spec.r))
    out = poly * np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class BandwidthPolicy:
    """Bandwidth lambda with optional boundary inflation inside ``domain_box``.

    ``domain_box`` is an array of shape (d, 2) holding [lo, hi] per axis.
    """

    lam: float
    boundary_correction: bool = False
    domain_box: np.ndarray | None = None

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lambda must be positive")
        if self.domain_box is not None:
            box = np.atleast_2d(np.asarray(self.domain_box, dtype=float))
            if box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
                raise ValueError("domain_box must be (d, 2) with lo < hi")
            object.__setattr__(self, "domain_box", box)
        if self.boundary_correction and self.domain_box is None:
            raise ValueError("boundary correction requires a domain_box")

    def with_lambda(self, lam: float) -> "BandwidthPolicy":
        return BandwidthPolicy(lam, self.boundary_correction, self.domain_box)

    def effective(self, t) -> float:
        """Bandwidth at ``t`` after the optional boundary adjustment."""
        if self.boundary_correction:
            return boundary_bandwidth(t, self)
        return float(self.lam)


def boundary_bandwidth(t, policy: BandwidthPolicy) -> float:
    """Inflate lambda near the domain boundary.

    Each axis contributes g(u) = sqrt(2) - (sqrt(2) - 1) min(u, 1) where u is
    the distance to the nearest face along that axis divided by lambda, so a
    2-D corner gets 2 lambda, an edge sqrt(2) lambda and the interior lambda.
    """
    if policy.domain_box is None:
        raise ValueError("boundary_bandwidth requires a domain_box")
    box = policy.domain_box
    t = as_location(t, box.shape[0])
    lo, hi = box[:, 0], box[:, 1]
    if np.any(t < lo) or np.any(t > hi):
        raise ValueError(f"location {t} lies outside the domain box")
    u = np.minimum(t - lo, hi - t) / policy.lam
    g = _SQRT2 - (_SQRT2 - 1.0) * np.minimum(u, 1.0)
    return float(policy.lam * np.prod(g))


def _clamp(w: np.ndarray) -> np.ndarray:
    m = np.max(np.abs(w)) if w.size else 0.0
    if m > 0:
        w = np.where(np.abs(w) < CLAMP_RATIO * m, 0.0, w)
    return w


def kernel_weights(spec: KernelSpec, ordering: NeighborOrdering, policy: BandwidthPolicy) -> WeightVector:
    """Radial kernel weights w_k = K(|t - t_k| / lambda) along ``ordering``."""
    lam = policy.effective(ordering.target)
    u = ordering.dists / lam
    if spec.kind == "hard_threshold":
        w = (ordering.dists <= lam).astype(float)
    else:
        w = _clamp(np.asarray(kernel_value(spec, u), dtype=float))
    if not np.any(w != 0) or not w.sum() > 0:
        raise NumericalError("empty effective neighborhood")
    return telescope_weights(w)


def constrained_weights(ordering: NeighborOrdering, lam: float) -> WeightVector:
    """Minimum-variance weights with local-linear unbiasedness.

    Minimizes sum_k w_k^2 exp(|t - t_k|^2 / 2 lambda^2) subject to
    sum_k w_k = 1 and sum_k w_k (t - t_k) = 0. The Lagrange conditions give
    w_k = (a + b . (t - t_k)) e_k with e_k = exp(-|t - t_k|^2 / 2 lambda^2).
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    u = ordering.offsets
    d2 = ordering.dists ** 2
    # rescaling e by a constant leaves the minimizer unchanged; avoids underflow
    e = np.exp(-(d2 - d2.min()) / (2.0 * lam * lam))
    m0 = e.sum()
    m1 = e @ u
    m2 = (u * e[:, None]).T @ u
    dim = u.shape[1]
    a_mat = np.empty((dim + 1, dim + 1))
    a_mat[0, 0] = m0
    a_mat[0, 1:] = m1
    a_mat[1:, 0] = m1
    a_mat[1:, 1:] = m2
    rhs = np.zeros(dim + 1)
    rhs[0] = 1.0
    if not np.all(np.isfinite(a_mat)) or np.linalg.cond(a_mat) > 1e13:
        raise NumericalError("degenerate geometry")
    coef = np.linalg.solve(a_mat, rhs)
    w = _clamp((coef[0] + u @ coef[1:]) * e)
    if not w.sum() > 0:
        raise NumericalError("degenerate geometry")
    return telescope_weights(w)


@dataclass(frozen=True)
class WeightScheme:
    """How to turn a neighbor ordering into weights at a given bandwidth.

    ``kind`` is ``'kernel'`` (radial ``kernel``) or ``'constrained'``; ``k_max``
    optionally truncates every neighborhood to its k nearest observations.
    """

    kind: str = "kernel"
    kernel: KernelSpec = KernelSpec.higher_order(3)
    boundary_correction: bool = False
    domain_box: np.ndarray | None = None
    k_max: int | None = None

    def __post_init__(self):
        if self.kind not in ("kernel", "constrained"):
            raise ValueError(f"unknown weight scheme {self.kind!r}")
        if self.k_max is not None and self.k_max < 1:
            raise ValueError("k_max must be positive")
        if self.boundary_correction and self.domain_box is None:
            raise ValueError("boundary correction requires a domain_box")

    def policy(self, lam: float) -> BandwidthPolicy:
        return BandwidthPolicy(lam, self.boundary_correction, self.domain_box)

    def prepare(self, ordering: NeighborOrdering) -> NeighborOrdering:
        if self.k_max is not None and len(ordering) > self.k_max:
            return ordering.truncate(self.k_max)
        return ordering

    def weights(self, ordering: NeighborOrdering, lam: float) -> tuple[WeightVector, float]:
        """Weights for an (already truncated) ordering and the bandwidth used."""
        policy = self.policy(lam)
        lam_eff = policy.effective(ordering.target)
        if self.kind == "constrained":
            return constrained_weights(ordering, lam_eff), lam_eff
        return kernel_weights(self.kernel, ordering, policy), lam_eff
