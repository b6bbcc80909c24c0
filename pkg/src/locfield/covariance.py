"""Matérn special functions and (non)stationary Matérn covariance models.

Parameter functions (variance, smoothness, range, anisotropy) may be given
as constants or as callables mapping an (m, d) array of locations to an
(m,) array of values (or (m, d, d) matrices for the anisotropy).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import integrate, special

from .core import NumericalError, as_location, as_points

ParamLike = Any  # float | Callable[[np.ndarray], np.ndarray]


def bessel_k(nu, x):
    """Modified Bessel function of the second kind K_nu(x).

    Valid for 0 < nu <= 21 and 1e-12 <= x <= 700. Backed by the AMOS
    routines in :func:`scipy.special.kv`.
    """
    nu_a = np.asarray(nu, dtype=float)
    x_a = np.asarray(x, dtype=float)
    if np.any(~(nu_a > 0)) or np.any(nu_a > 21):
        raise ValueError("bessel_k requires 0 < nu <= 21")
    if np.any(~(x_a >= 1e-12)) or np.any(x_a > 700):
        raise ValueError("bessel_k requires 1e-12 <= x <= 700")
    out = special.kv(nu_a, x_a)
    return out if out.ndim else float(out)


def _matern_m(nu, x):
    # x^nu K_nu(x) without range checks; x = 0 maps to the limit 2^(nu-1) Gamma(nu)
    nu, x = np.broadcast_arrays(np.asarray(nu, dtype=float), np.asarray(x, dtype=float))
    out = np.empty(x.shape)
    zero = x <= 0
    if np.any(zero):
        nz = nu[zero]
        out[zero] = np.exp((nz - 1.0) * math.log(2.0) + special.gammaln(nz))
    pos = ~zero
    if np.any(pos):
        xp, npos = x[pos], nu[pos]
        with np.errstate(divide="ignore", under="ignore"):
            out[pos] = np.exp(npos * np.log(xp) - xp + np.log(special.kve(npos, xp)))
    return out


def matern_m(nu, x):
    """M_nu(x) = x^nu K_nu(x), with M_nu(0) = 2^(nu-1) Gamma(nu)."""
    nu_a = np.asarray(nu, dtype=float)
    x_a = np.asarray(x, dtype=float)
    if np.any(~(nu_a > 0)) or np.any(nu_a > 21):
        raise ValueError("matern_m requires 0 < nu <= 21")
    if np.any(~(x_a >= 0)):
        raise ValueError("matern_m requires x >= 0")
    out = _matern_m(nu_a, x_a)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MaternParams:
    """Stationary Matérn parameters (variance, smoothness, range)."""

    sigma2: float
    nu: float
    rho: float

    def __post_init__(self):
        for name in ("sigma2", "nu", "rho"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        if self.nu > 20:
            raise ValueError("nu must be <= 20")

    def replace(self, **kw) -> "MaternParams":
        d = {"sigma2": self.sigma2, "nu": self.nu, "rho": self.rho}
        d.update(kw)
        return MaternParams(**d)


def matern_cov(p: MaternParams, h):
    """sigma2 2^(1-nu) / Gamma(nu) M_nu(2 sqrt(nu) h / rho)."""
    h = np.asarray(h, dtype=float)
    out = _matern_corr(p.nu, p.rho, h) * p.sigma2
    return out if out.ndim else float(out)


def _matern_corr(nu, rho, h):
    log_norm = (1.0 - nu) * math.log(2.0) - special.gammaln(nu)
    return np.exp(log_norm) * _matern_m(nu, 2.0 * np.sqrt(nu) * np.abs(h) / rho)


def pairwise_distances(a, b=None) -> np.ndarray:
    a = as_points(a)
    b = a if b is None else as_points(b, a.shape[1])
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def eval_param(p: ParamLike, locs: np.ndarray) -> np.ndarray:
    """Evaluate a constant-or-callable parameter at (m, d) locations."""
    if callable(p):
        v = np.asarray(p(locs), dtype=float)
        return np.broadcast_to(v, (locs.shape[0],)).astype(float)
    return np.full(locs.shape[0], float(p))


def _check_positive(name, v):
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise ValueError(f"{name} must be finite and positive at every location")


class CovarianceModel:
    """Base class: subclasses implement :meth:`matrix`."""

    variant = "base"

    def matrix(self, a, b=None) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def variance(self, locs) -> np.ndarray:
        locs = as_points(locs)
        return np.array([self.matrix(locs[i : i + 1])[0, 0] for i in range(locs.shape[0])])


@dataclass(frozen=True)
class StationaryMatern(CovarianceModel):
    params: MaternParams
    variant = "stationary"

    def matrix(self, a, b=None):
        return matern_cov(self.params, pairwise_distances(a, b))

    def variance(self, locs):
        return np.full(as_points(locs).shape[0], self.params.sigma2)


@dataclass(frozen=True)
class AnisotropicNSMatern(CovarianceModel):
    """sigma_s sigma_t det(A^-1/2) M_{nu_st}(|A^-1/2 (t - s)|), A = (alpha_s + alpha_t)/2.

    ``alpha`` is a positive scalar (meaning alpha * I), a (d, d) SPD matrix,
    or a callable returning (m,) scalars or (m, d, d) matrices.
    """

    sigma: ParamLike = 1.0
    nu: ParamLike = 0.5
    alpha: ParamLike = 1.0
    variant = "full_R"

    def _alpha(self, locs):
        d = locs.shape[1]
        if callable(self.alpha):
            v = np.asarray(self.alpha(locs), dtype=float)
        else:
            v = np.asarray(self.alpha, dtype=float)
        if v.ndim == 0:
            v = np.full(locs.shape[0], float(v))
        elif v.shape == (d, d):
            v = np.broadcast_to(v, (locs.shape[0], d, d))
        elif v.shape == (locs.shape[0],) or v.shape == (locs.shape[0], d, d):
            pass
        else:
            raise ValueError(f"bad alpha shape {v.shape}")
        return v

    def matrix(self, a, b=None):
        a = as_points(a)
        b = a if b is None else as_points(b, a.shape[1])
        d = a.shape[1]
        sa, sb = eval_param(self.sigma, a), eval_param(self.sigma, b)
        na, nb = eval_param(self.nu, a), eval_param(self.nu, b)
        _check_positive("sigma", sa), _check_positive("sigma", sb)
        _check_positive("nu", na), _check_positive("nu", nb)
        aa, ab = self._alpha(a), self._alpha(b)
        nu_st = 0.5 * (na[:, None] + nb[None, :])
        diff = b[None, :, :] - a[:, None, :]
        if aa.ndim == 1 and ab.ndim == 1:
            _check_positive("alpha", aa), _check_positive("alpha", ab)
            al = 0.5 * (aa[:, None] + ab[None, :])
            det_fac = al ** (-d / 2.0)
            r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff) / al)
        else:
            if aa.ndim == 1:
                aa = aa[:, None, None] * np.eye(d)
            if ab.ndim == 1:
                ab = ab[:, None, None] * np.eye(d)
            al = 0.5 * (aa[:, None] + ab[None, :])
            evals, evecs = np.linalg.eigh(al)
            if np.any(evals <= 0):
                raise NumericalError("averaged anisotropy matrix is not positive definite")
            det_fac = np.prod(evals, axis=-1) ** -0.5
            proj = np.einsum("ijkl,ijk->ijl", evecs, diff)
            r = np.sqrt(np.einsum("ijl,ijl->ij", proj * proj, 1.0 / evals))
        return sa[:, None] * sb[None, :] * det_fac * _matern_m(nu_st, r)


def _local_norm(nu, rho, d):
    # [(rho^2 / 4 nu)^(d/2) / (Gamma(nu) 2^(nu-1))]^(1/2), in logs
    return 0.5 * (0.5 * d * np.log(rho * rho / (4.0 * nu)) - special.gammaln(nu) - (nu - 1.0) * math.log(2.0))


@dataclass(frozen=True)
class NSMatern(CovarianceModel):
    """Nonstationary Matérn with local variance sigma_t^2, smoothness nu_t and range rho_t.

    Near any t0 it behaves like the stationary Matérn with parameters
    (sigma_{t0}^2, nu_{t0}, rho_{t0}); the diagonal equals sigma_t^2 exactly.
    """

    sigma: ParamLike = 1.0
    nu: ParamLike = 0.5
    rho: ParamLike = 1.0
    variant = "reparam_K"

    def matrix(self, a, b=None):
        a = as_points(a)
        b = a if b is None else as_points(b, a.shape[1])
        d = a.shape[1]
        sa, sb = eval_param(self.sigma, a), eval_param(self.sigma, b)
        na, nb = eval_param(self.nu, a), eval_param(self.nu, b)
        ra, rb = eval_param(self.rho, a), eval_param(self.rho, b)
        for name, v in (("sigma", sa), ("sigma", sb), ("nu", na), ("nu", nb), ("rho", ra), ("rho", rb)):
            _check_positive(name, v)
        qa, qb = ra * ra / (8.0 * na), rb * rb / (8.0 * nb)
        qsum = qa[:, None] + qb[None, :]
        log_pref = _local_norm(na, ra, d)[:, None] + _local_norm(nb, rb, d)[None, :] - 0.5 * d * np.log(qsum)
        nu_st = 0.5 * (na[:, None] + nb[None, :])
        h = pairwise_distances(a, b)
        return sa[:, None] * sb[None, :] * np.exp(log_pref) * _matern_m(nu_st, h / np.sqrt(qsum))

    def variance(self, locs):
        locs = as_points(locs)
        return eval_param(self.sigma, locs) ** 2


@dataclass(frozen=True)
class NSSmoothnessMatern(CovarianceModel):
    """Matérn with constant variance and range and a spatially varying smoothness nu_t."""

    sigma2: float = 1.0
    rho: float = 1.0
    nu: ParamLike = 0.5
    variant = "smoothness_only"

    def __post_init__(self):
        if not (self.sigma2 > 0 and self.rho > 0):
            raise ValueError("sigma2 and rho must be positive")

    def matrix(self, a, b=None):
        a = as_points(a)
        b = a if b is None else as_points(b, a.shape[1])
        d = a.shape[1]
        na, nb = eval_param(self.nu, a), eval_param(self.nu, b)
        _check_positive("nu", na), _check_positive("nu", nb)
        nu_st = 0.5 * (na[:, None] + nb[None, :])
        half_a = 0.5 * (special.gammaln(na) + (na - 1.0) * math.log(2.0))
        half_b = 0.5 * (special.gammaln(nb) + (nb - 1.0) * math.log(2.0))
        log_pref = (
            0.25 * d * (np.log(na)[:, None] + np.log(nb)[None, :])
            - 0.5 * d * np.log(nu_st)
            - half_a[:, None]
            - half_b[None, :]
        )
        h = pairwise_distances(a, b)
        arg = 2.0 * np.sqrt(na[:, None] * nb[None, :]) / (self.rho * np.sqrt(nu_st)) * h
        return self.sigma2 * np.exp(log_pref) * _matern_m(nu_st, arg)

    def variance(self, locs):
        return np.full(as_points(locs).shape[0], self.sigma2)


@dataclass(frozen=True)
class ModulatedModel(CovarianceModel):
    """Covariance of sigma(t) W(t) for a base model W: diag(sigma) C diag(sigma)."""

    sigma: ParamLike
    base: CovarianceModel
    variant = "variance_modulated"

    def matrix(self, a, b=None):
        a = as_points(a)
        b = a if b is None else as_points(b, a.shape[1])
        sa, sb = eval_param(self.sigma, a), eval_param(self.sigma, b)
        return sa[:, None] * self.base.matrix(a, b) * sb[None, :]


def cov_value(m: CovarianceModel, s, t) -> float:
    """Covariance between two single locations."""
    s = as_location(s)
    t = as_location(t, s.size)
    return float(m.matrix(s[None, :], t[None, :])[0, 0])


def cov_matrix(m: CovarianceModel, locs, nugget: float = 0.0) -> np.ndarray:
    """Symmetric covariance matrix at ``locs``, with an optional diagonal nugget."""
    locs = as_points(locs)
    c = m.matrix(locs)
    c = 0.5 * (c + c.T)
    if nugget:
        if nugget < 0:
            raise ValueError("nugget must be non-negative")
        c[np.diag_indices_from(c)] += nugget
    return c


def gr_integral_residual(nu_st: float, q: float) -> float:
    """Relative gap between int_0^inf x^(nu-1) exp(-q^2/4x - x) dx and 2^(1-nu) M_nu(q)."""
    # substitute x = e^u so the integrand is smooth and doubly-exponentially decaying
    def f(u):
        if abs(u) > 700.0:
            return 0.0
        return math.exp(nu_st * u - 0.25 * q * q * math.exp(-u) - math.exp(u))

    # mode of the integrand in u
    peak = math.log(0.5 * (nu_st + math.sqrt(nu_st * nu_st + q * q)))
    val, _ = _quad_split(f, peak)
    exact = 2.0 ** (1.0 - nu_st) * float(_matern_m(nu_st, q))
    return abs(val - exact) / abs(exact)


def _quad_split(f, center):
    total, err = 0.0, 0.0
    for lo, hi in ((-np.inf, center), (center, np.inf)):
        v, e, info = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=500, full_output=1)[:3]
        total += v
        err += e
    if not np.isfinite(total) or err > 1e-9 * max(abs(total), 1e-300):
        raise NumericalError(f"quadrature did not converge (error estimate {err:g})")
    return total, err


def lemma_convolution_residual(alpha_s=0.5, alpha_t=2.0, scale=1.0, s=0.0, t=1.0) -> float:
    """Check the 1-D Gaussian convolution identity behind the positive-definiteness proof.

    With phi(u) = exp(-u^2 / 2) and kernels of scale ``scale / sqrt(2)``,
    det(A^-1/2) phi(A^-1/2 (s - t) / scale) with A = (alpha_s + alpha_t) / 2
    equals 2^(1/2) c_s c_t int phi(alpha_s^-1/2 (u - s) / h) phi(alpha_t^-1/2 (u - t) / h) du,
    c = (2 pi)^(-1/4) h^(-1/2) alpha^(-1/2), h = scale / sqrt(2). Returns the
    absolute difference between quadrature and the closed form.
    """
    h = scale / math.sqrt(2.0)
    a_st = 0.5 * (alpha_s + alpha_t)
    closed = a_st ** -0.5 * math.exp(-0.5 * (s - t) ** 2 / (a_st * scale * scale))
    c_s = (2 * math.pi) ** -0.25 * h ** -0.5 * alpha_s ** -0.5
    c_t = (2 * math.pi) ** -0.25 * h ** -0.5 * alpha_t ** -0.5

    def f(u):
        return math.exp(-0.5 * (u - s) ** 2 / (alpha_s * h * h) - 0.5 * (u - t) ** 2 / (alpha_t * h * h))

    # the product peaks at the precision-weighted mean of s and t
    center = (s / alpha_s + t / alpha_t) / (1 / alpha_s + 1 / alpha_t)
    val, _ = _quad_split(f, center)
    return abs(math.sqrt(2.0) * c_s * c_t * val - closed)


def verify_appendix_identities(nu_s: float, nu_t: float, q: float) -> dict:
    """Residuals of the Bessel integral identity and the 1-D convolution identity."""
    nu_st = 0.5 * (nu_s + nu_t)
    if not (0 < nu_st <= 21 and 1e-12 <= q <= 700):
        raise ValueError("arguments outside the supported Bessel range")
    return {
        "nu_st": nu_st,
        "q": q,
        "gr_relative_residual": gr_integral_residual(nu_st, q),
        "lemma_residual": lemma_convolution_residual(),
    }
