"""Weighted local likelihood: objective, maximizers and surface fitting.

The objective at a target t sums weighted log-likelihood increments
obtained by adding observations one at a time in order of distance to t.
With unit weights it telescopes to the full stationary log-likelihood.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .core import Dataset, NeighborOrdering, NumericalError, WeightVector, order_neighbors, telescope_weights
from .covariance import MaternParams, StationaryMatern, _matern_corr, pairwise_distances
from .kernels import WeightScheme
from .linalg import LOG_2PI, increments_from_factor, ordered_cholesky, quad_form_sequence, whiten

log = logging.getLogger(__name__)

DEFAULT_BOUNDS = {"variance_scale": (1e-6, 1e6), "matern_smoothness": (0.05, 10.0)}
THETA_TOL = 1e-6
# stands in for -inf inside the bounded search
_PENALTY = 1e300


@dataclass(frozen=True)
class LocalModelFamily:
    """One-parameter family of stationary Matérn models used locally.

    ``variance_scale`` frees the variance of ``base`` (theta = sigma^2);
    ``matern_smoothness`` frees the smoothness with sigma^2 and rho fixed
    (theta = nu). ``nugget`` is added to the unit-variance correlation
    diagonal.
    """

    kind: str
    base: MaternParams
    bounds: tuple[float, float] | None = None
    nugget: float = 0.0

    def __post_init__(self):
        if self.kind not in DEFAULT_BOUNDS:
            raise ValueError(f"unknown family {self.kind!r}")
        lo, hi = self.bounds if self.bounds is not None else DEFAULT_BOUNDS[self.kind]
        if not 0 < lo < hi:
            raise ValueError("bounds must satisfy 0 < lo < hi")
        if self.kind == "matern_smoothness" and hi > 20:
            raise ValueError("smoothness upper bound must be <= 20")
        if self.nugget < 0:
            raise ValueError("nugget must be non-negative")
        object.__setattr__(self, "bounds", (float(lo), float(hi)))

    @classmethod
    def variance_scale(cls, base: MaternParams, **kw) -> "LocalModelFamily":
        return cls("variance_scale", base, **kw)

    @classmethod
    def matern_smoothness(cls, sigma2: float, rho: float, **kw) -> "LocalModelFamily":
        return cls("matern_smoothness", MaternParams(sigma2, 1.0, rho), **kw)

    def params(self, theta: float) -> MaternParams:
        theta = _scalar(theta)
        if self.kind == "variance_scale":
            return self.base.replace(sigma2=theta)
        return self.base.replace(nu=theta)

    def model(self, theta: float) -> StationaryMatern:
        return StationaryMatern(self.params(theta))

    def cov_from_dists(self, theta: float, dists: np.ndarray) -> np.ndarray:
        theta = _scalar(theta)
        if self.kind == "variance_scale":
            corr = _matern_corr(self.base.nu, self.base.rho, dists)
            scale = theta
        else:
            corr = _matern_corr(theta, self.base.rho, dists)
            scale = self.base.sigma2
        if self.nugget:
            corr = corr + self.nugget * np.eye(corr.shape[0])
        return scale * corr

    def unit_cov(self, dists: np.ndarray) -> np.ndarray:
        """Correlation (plus nugget) of the variance family's base model."""
        return self.cov_from_dists(1.0, dists) if self.kind == "variance_scale" else None


@dataclass(frozen=True)
class FitResult:
    theta_hat: float
    objective: float
    neighborhood_size: int
    weights_used: WeightVector | None
    lambda_used: float = float("nan")
    target: np.ndarray | None = field(default=None, repr=False)
    error: str | None = None


def _scalar(theta) -> float:
    a = np.asarray(theta, dtype=float).ravel()
    if a.size != 1:
        raise ValueError("only univariate local parameters are supported")
    return float(a[0])


class LocalProblem:
    """Cached pieces of the local likelihood at one target.

    Holds the first ``size`` neighbors of ``t`` and memoizes the
    per-observation log-likelihood increments for each theta tried.
    """

    def __init__(self, data: Dataset, t, fam: LocalModelFamily, ordering: NeighborOrdering | None = None, size=None):
        self.fam = fam
        self.ordering = ordering if ordering is not None else order_neighbors(data, t)
        k = len(self.ordering) if size is None else min(int(size), len(self.ordering))
        self.idx = self.ordering.perm[:k]
        self.z = data.responses[self.idx]
        self.locs = data.locations[self.idx]
        self.dists = pairwise_distances(self.locs)
        self._cache: dict[float, np.ndarray] = {}
        self._unit = None

    @property
    def k(self) -> int:
        return self.idx.size

    def _unit_pieces(self):
        if self._unit is None:
            L = ordered_cholesky(self.fam.unit_cov(self.dists))
            u = whiten(L, self.z)
            self._unit = (np.log(np.diag(L)), u * u)
        return self._unit

    def increments(self, theta) -> np.ndarray:
        theta = _scalar(theta)
        hit = self._cache.get(theta)
        if hit is not None:
            return hit
        if self.fam.kind == "variance_scale":
            logd, u2 = self._unit_pieces()
            inc = -0.5 * LOG_2PI - 0.5 * math.log(theta) - logd - 0.5 * u2 / theta
        else:
            L = ordered_cholesky(self.fam.cov_from_dists(theta, self.dists))
            inc = increments_from_factor(L, self.z)
        self._cache[theta] = inc
        return inc

    def objective(self, theta, w: np.ndarray) -> float:
        return float(w[: self.k] @ self.increments(theta))

    def quad_forms(self) -> np.ndarray:
        """q_k = z_k' R_k^-1 z_k of the unit-variance base model."""
        return np.cumsum(self._unit_pieces()[1])


def _aligned(w: WeightVector, ordering: NeighborOrdering) -> int:
    if len(w) > len(ordering):
        raise ValueError("weight vector longer than the neighbor ordering")
    k = w.effective_size()
    if k == 0:
        raise ValueError("all weights are zero")
    return k


def wll_objective(theta0, t, data: Dataset, w: WeightVector, fam: LocalModelFamily, ordering=None) -> float:
    """Weighted local log-likelihood sum_k w_k [l(N_k) - l(N_{k-1})] at theta0.

    Observations beyond the last nonzero weight do not enter the sweep.
    """
    ordering = ordering if ordering is not None else order_neighbors(data, t)
    k = _aligned(w, ordering)
    theta = _scalar(theta0)
    lo, hi = fam.bounds
    if not lo <= theta <= hi:
        raise ValueError(f"theta {theta} outside bounds [{lo}, {hi}]")
    return LocalProblem(data, t, fam, ordering, k).objective(theta, w.w)


def variance_estimate(t, data: Dataset, w: WeightVector, base: MaternParams, ordering=None,
                      method: str = "cholesky", inv_n=None, nugget: float = 0.0) -> FitResult:
    """Closed-form local variance: sum_k w_k (q_k - q_{k-1}) / sum_k w_k.

    q_k are nested quadratic forms of the unit-variance base model, computed
    either from one Cholesky factor (``method='cholesky'``) or by
    downdating the full inverse ``inv_n`` (``method='downdate'``).
    """
    fam = LocalModelFamily.variance_scale(base, nugget=nugget)
    ordering = ordering if ordering is not None else order_neighbors(data, t)
    k = _aligned(w, ordering)
    prob = LocalProblem(data, t, fam, ordering, k)
    if method == "cholesky":
        q = prob.quad_forms()
    elif method == "downdate":
        if inv_n is None:
            unit = fam.unit_cov(pairwise_distances(data.locations))
            inv_n = np.linalg.inv(unit)
        q = quad_form_sequence(inv_n, data.responses, ordering.perm)[:k]
    else:
        raise ValueError(f"unknown method {method!r}")
    dq = np.diff(q, prepend=0.0)
    ww = w.w[:k]
    s2 = float(ww @ dq / ww.sum())
    lo, hi = fam.bounds
    theta = min(max(s2, lo), hi)
    return FitResult(theta, prob.objective(theta, w.w), k, w, target=ordering.target)


def _safe_objective(prob: LocalProblem, w, theta) -> float:
    try:
        v = prob.objective(theta, w)
    except NumericalError:
        return -math.inf
    return v if math.isfinite(v) else -math.inf


def fit_point(t, data: Dataset, w: WeightVector, fam: LocalModelFamily, ordering=None,
              method: str = "auto", n_scan: int = 24) -> FitResult:
    """Maximize the weighted local likelihood over the family's bounds.

    A log-spaced scan locates the best bracket, then bounded Brent search
    (golden section with parabolic steps) refines it to 1e-6 in theta. Ties
    go to the smaller theta. ``method='auto'`` uses the closed form for the
    variance family; ``'numeric'`` always searches.
    """
    ordering = ordering if ordering is not None else order_neighbors(data, t)
    if method == "auto" and fam.kind == "variance_scale":
        return variance_estimate(t, data, w, fam.base, ordering, nugget=fam.nugget)
    k = _aligned(w, ordering)
    prob = LocalProblem(data, t, fam, ordering, k)
    lo, hi = fam.bounds
    grid = np.geomspace(lo, hi, n_scan)
    vals = np.array([_safe_objective(prob, w.w, g) for g in grid])
    if not np.any(np.isfinite(vals)):
        raise NumericalError("objective is not finite anywhere in the bracket")
    i = int(np.argmax(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n_scan - 1)]
    def neg(th):
        v = _safe_objective(prob, w.w, th)
        return -v if math.isfinite(v) else _PENALTY

    res = optimize.minimize_scalar(
        neg,
        bounds=(a, b),
        method="bounded",
        options={"xatol": THETA_TOL},
    )
    best_theta, best_val = float(grid[i]), float(vals[i])
    cand = float(res.x)
    cand_val = _safe_objective(prob, w.w, cand)
    if cand_val > best_val or (cand_val == best_val and cand < best_theta):
        best_theta, best_val = cand, cand_val
    return FitResult(best_theta, best_val, k, w, target=ordering.target)


def fit_surface(grid, data: Dataset, fam: LocalModelFamily, scheme: WeightScheme, lam: float,
                workers: int | None = None) -> list[FitResult]:
    """One local fit per grid node; node failures are recorded, not raised."""
    grid = np.asarray(grid, dtype=float).reshape(-1, data.dim)

    def one(t):
        try:
            ordering = scheme.prepare(order_neighbors(data, t))
            w, lam_eff = scheme.weights(ordering, lam)
            r = fit_point(t, data, w, fam, ordering)
            return FitResult(r.theta_hat, r.objective, r.neighborhood_size, w, lam_eff, t)
        except (NumericalError, ValueError) as exc:
            log.debug("fit failed at %s: %s", t, exc)
            return FitResult(float("nan"), float("nan"), 0, None, float("nan"), t, str(exc))

    if workers and workers > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, grid))
    return [one(t) for t in grid]


def dense_loglik_theta(theta, data: Dataset, fam: LocalModelFamily) -> float:
    """Full joint log-likelihood of the stationary model at theta."""
    cov = fam.cov_from_dists(theta, pairwise_distances(data.locations))
    return float(np.sum(increments_from_factor(ordered_cholesky(cov), data.responses)))


def stationary_mle(data: Dataset, fam: LocalModelFamily) -> float:
    """Maximum-likelihood theta assuming one stationary model for all data."""
    if fam.kind == "variance_scale":
        L = ordered_cholesky(fam.unit_cov(pairwise_distances(data.locations)))
        u = whiten(L, data.responses)
        lo, hi = fam.bounds
        return min(max(float(u @ u) / data.n, lo), hi)
    ones = telescope_weights(np.ones(data.n))
    t0 = data.locations[0]
    return fit_point(t0, data, ones, fam, method="numeric").theta_hat
