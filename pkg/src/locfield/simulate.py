"""Exact Gaussian field simulation and sampling-location generators.

Random numbers come from the Philox4x64-10 counter-based generator keyed
by the seed (numpy's ``Philox(key=seed)``, counter starting at zero). Each
raw 64-bit output x is mapped to u = ((x >> 11) + 0.5) / 2^53 in (0, 1) and
then to a standard normal through the inverse normal CDF, so a draw is a
pure function of (seed, position) and can be reproduced anywhere.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .core import Dataset, NumericalError, as_points
from .covariance import CovarianceModel, MaternParams, StationaryMatern, cov_matrix, eval_param
from .linalg import ordered_cholesky

_TWO_M53 = 2.0 ** -53


def _bitgen(seed: int) -> np.random.Philox:
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.Philox(key=seed)


def uniforms(seed: int, n: int) -> np.ndarray:
    """n open-interval uniforms from the seed's counter stream."""
    raw = _bitgen(seed).random_raw(int(n))
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


def standard_normals(seed: int, n: int) -> np.ndarray:
    """n standard normals by inverse-CDF transform of :func:`uniforms`."""
    return special.ndtri(uniforms(seed, n))


def even_1d(n: int, interval=(0.0, 1.0)) -> np.ndarray:
    """n equally spaced points including both endpoints, shape (n, 1)."""
    a, b = map(float, interval)
    if n < 1 or not b > a:
        raise ValueError("need n >= 1 and a nondegenerate interval")
    return np.linspace(a, b, int(n))[:, None]


def uniform_2d(n: int, box=((0.0, 1.0), (0.0, 1.0)), seed: int = 0) -> np.ndarray:
    """n uniform points in an axis-aligned box, shape (n, 2)."""
    box = np.asarray(box, dtype=float)
    if n < 1 or box.shape != (2, 2) or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("need n >= 1 and a nondegenerate 2-D box")
    u = uniforms(seed, 2 * int(n)).reshape(int(n), 2)
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


def gen_locations(spec: dict) -> np.ndarray:
    """Locations from a generator spec.

    ``{"kind": "even_1d", "n": ..., "interval": [a, b]}`` or
    ``{"kind": "uniform_2d", "n": ..., "box": [[x0, x1], [y0, y1]], "seed": ...}``.
    """
    kind = spec.get("kind")
    if kind == "even_1d":
        return even_1d(spec["n"], spec.get("interval", (0.0, 1.0)))
    if kind == "uniform_2d":
        return uniform_2d(spec["n"], spec.get("box", ((0.0, 1.0), (0.0, 1.0))), spec.get("seed", 0))
    raise ValueError(f"unknown location generator {kind!r}")


def field_factor(model: CovarianceModel, locs, nugget: float = 0.0) -> np.ndarray:
    """Lower Cholesky factor of the model covariance at ``locs``."""
    c = cov_matrix(model, locs, nugget)
    try:
        return ordered_cholesky(c)
    except NumericalError as exc:
        raise NumericalError(f"covariance matrix is not numerically positive definite ({exc})") from exc


def sample_field(model: CovarianceModel, locs, seed: int, nugget: float = 0.0, factor=None) -> np.ndarray:
    """One mean-zero draw z = L eps with L the Cholesky factor of the covariance."""
    locs = as_points(locs)
    L = field_factor(model, locs, nugget) if factor is None else factor
    return L @ standard_normals(seed, locs.shape[0])


def sample_fields(model: CovarianceModel, locs, seeds, nugget: float = 0.0, factor=None) -> np.ndarray:
    """Replicate draws sharing one factorization; column r uses ``seeds[r]``."""
    locs = as_points(locs)
    L = field_factor(model, locs, nugget) if factor is None else factor
    eps = np.column_stack([standard_normals(s, locs.shape[0]) for s in seeds])
    return L @ eps


def sample_variance_modulated(sigma_fn, w_params: MaternParams, locs, seed: int, nugget: float = 0.0) -> np.ndarray:
    """Draw W from the stationary Matérn and return sigma_fn(t_j) W(t_j)."""
    locs = as_points(locs)
    sig = eval_param(sigma_fn, locs)
    if np.any(~(sig > 0)):
        raise ValueError("sigma_fn must be positive at every location")
    return sig * sample_field(StationaryMatern(w_params), locs, seed, nugget)


def simulate_dataset(model: CovarianceModel, locs, seed: int, nugget: float = 0.0) -> Dataset:
    locs = as_points(locs)
    return Dataset(locs, sample_field(model, locs, seed, nugget))
