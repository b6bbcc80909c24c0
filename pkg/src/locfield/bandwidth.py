"""Data-driven bandwidth selection and the simulation-based KL oracle.

Both data-driven selectors standardize a statistic of the fitted surface by
its mean and standard deviation over simulations from the stationary fit:
lambda1 uses the spatial variation of the surface and lambda2 the summed
local likelihood ratio against the stationary fit. The oracle maximizes the
inverse KL divergence from the fitted global model to the truth.

Profiles for the observed data and every calibration replicate are
evaluated together in a :class:`ProfileRun`. Each estimation node's
neighbor ordering, weights and covariance factors depend only on the
locations, so they are computed once and applied to all response columns.
The variance family is solved in closed form. The smoothness family is
evaluated on a log-spaced nu grid and maximized on a local (Akima)
cubic interpolant in log nu; the grid stops where local covariances
become numerically singular.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate

from .core import Dataset, NumericalError, as_points, order_neighbors
from .covariance import (
    CovarianceModel,
    MaternParams,
    ModulatedModel,
    NSSmoothnessMatern,
    StationaryMatern,
    cov_matrix,
    pairwise_distances,
)
from .kernels import WeightScheme
from .linalg import increments_from_factor, kl_mean_zero, ordered_cholesky, whiten
from .simulate import standard_normals
from .wll import LocalModelFamily

log = logging.getLogger(__name__)

DEFAULT_REPLICATES = 50
DEFAULT_GRID_SIZE = 25
MAX_DROP_FRACTION = 0.2
KL_CAP = 1e12
# calibration streams start this far from the user seed
CALIBRATION_SEED_OFFSET = 2 ** 32
NU_GRID_SIZE = 48
SPLINE_POINTS = 2001


@dataclass(frozen=True)
class CalibrationResult:
    """Mean and sd (ddof=1) of a statistic over stationary simulations.

    ``mean`` and ``sd`` are scalars or arrays matching the statistic.
    """

    mean: float | np.ndarray
    sd: float | np.ndarray
    replicates: int
    dropped: int = 0

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("calibration needs at least 2 replicates")


@dataclass
class ProfileCurve:
    """A bandwidth criterion over a lambda grid; ``criterion`` is maximized.

    ``statistic`` is the uncalibrated quantity (spatial variation, summed
    likelihood ratio, or KL divergence for the oracle). ``surfaces[i]`` is
    the fitted surface on the estimation grid at ``lambdas[i]``.
    """

    name: str
    lambdas: np.ndarray
    criterion: np.ndarray
    statistic: np.ndarray
    surfaces: np.ndarray | None = field(default=None, repr=False)
    calibration: CalibrationResult | None = field(default=None, repr=False)

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        self.criterion = np.asarray(self.criterion, dtype=float)
        if self.lambdas.shape != self.criterion.shape:
            raise ValueError("lambdas and criterion differ in length")
        if not np.any(np.isfinite(self.criterion)):
            raise NumericalError(f"{self.name} profile is not finite at any bandwidth")

    @property
    def argmax(self) -> int:
        c = np.where(np.isfinite(self.criterion), self.criterion, -np.inf)
        return int(np.argmax(c))

    @property
    def lambda_hat(self) -> float:
        return float(self.lambdas[self.argmax])

    @property
    def standardized(self) -> np.ndarray:
        """Criterion centered and scaled over its finite entries (mean 0, sd 1)."""
        c = self.criterion
        ok = np.isfinite(c)
        out = np.full(c.shape, np.nan)
        sd = np.std(c[ok])
        out[ok] = (c[ok] - np.mean(c[ok])) / sd if sd > 0 else 0.0
        return out

    def rows(self) -> list[tuple]:
        """(lambda, criterion_raw, criterion_standardized, is_argmax) per grid point."""
        std = self.standardized
        a = self.argmax
        return [(float(l), float(c), float(s), int(i == a))
                for i, (l, c, s) in enumerate(zip(self.lambdas, self.criterion, std))]


# -- grids -------------------------------------------------------------------

@dataclass(frozen=True)
class EstimationGrid:
    """Regular cell-centered grid over a box; ``points`` is (prod(shape), d)."""

    points: np.ndarray
    shape: tuple
    spacing: tuple
    box: np.ndarray


def estimation_grid(box, shape=None) -> EstimationGrid:
    """Cell-centered grid: 64 nodes on an interval or 8 x 8 on a rectangle."""
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    d = box.shape[0]
    if d not in (1, 2) or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("need a nondegenerate 1-D or 2-D box")
    if shape is None:
        shape = (64,) if d == 1 else (8, 8)
    shape = tuple(int(s) for s in shape)
    if len(shape) != d or min(shape) < 2:
        raise ValueError("grid needs at least 2 nodes per dimension")
    axes, spacing = [], []
    for (a, b), m in zip(box, shape):
        h = (b - a) / m
        axes.append(a + h * (np.arange(m) + 0.5))
        spacing.append(h)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g.ravel() for g in mesh])
    return EstimationGrid(pts, shape, tuple(spacing), box)


def bounding_box(locs) -> np.ndarray:
    locs = as_points(locs)
    return np.column_stack([locs.min(axis=0), locs.max(axis=0)])


def default_lambda_grid(locs, size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """Log-spaced grid from twice the median nearest-neighbor spacing to half the diameter."""
    locs = as_points(locs)
    if locs.shape[0] < 2:
        raise ValueError("need at least two locations")
    dist = pairwise_distances(locs)
    np.fill_diagonal(dist, np.inf)
    lo = 2.0 * float(np.median(dist.min(axis=1)))
    np.fill_diagonal(dist, 0.0)
    hi = 0.5 * float(dist.max())
    if not hi > lo:
        raise ValueError("locations too clustered for the default bandwidth grid")
    return np.geomspace(lo, hi, int(size))


# -- statistics ----------------------------------------------------------------

def _trapezoid_weights(shape, spacing) -> np.ndarray:
    w = np.ones(shape)
    for ax, (m, h) in enumerate(zip(shape, spacing)):
        v = np.full(m, h)
        v[0] = v[-1] = 0.5 * h
        w = w * v.reshape([-1 if i == ax else 1 for i in range(len(shape))])
    return w


def spatial_variation(theta_surface, spacing) -> float:
    """Integral of |grad theta|^2 over the grid's extent.

    Central differences inside, one-sided at the edges, integrated with the
    trapezoid rule. ``theta_surface`` has shape (m,) or (mx, my).
    """
    th = np.asarray(theta_surface, dtype=float)
    spacing = tuple(np.atleast_1d(np.asarray(spacing, dtype=float)))
    if len(spacing) == 1 and th.ndim > 1:
        spacing = spacing * th.ndim
    return float(_variation_batch(th[..., None], th.shape, spacing)[0])


def _variation_batch(values, shape, spacing) -> np.ndarray:
    """spatial_variation over trailing batch axes; ``values`` is (*shape, ...)."""
    shape = tuple(shape)
    if min(shape) < 2:
        raise ValueError("spatial variation needs at least 2 nodes per dimension")
    if len(spacing) != len(shape):
        raise ValueError("one spacing per grid dimension required")
    v = np.asarray(values, dtype=float)
    sq = np.zeros(v.shape)
    for ax, h in enumerate(spacing):
        sq += np.gradient(v, h, axis=ax) ** 2
    w = _trapezoid_weights(shape, spacing).reshape(shape + (1,) * (v.ndim - len(shape)))
    return np.sum(sq * w, axis=tuple(range(len(shape))))


def _summarize(values: np.ndarray) -> CalibrationResult:
    """Mean/sd over replicate rows, dropping rows with any non-finite entry."""
    values = np.asarray(values, dtype=float)
    R = values.shape[0]
    ok = np.all(np.isfinite(values.reshape(R, -1)), axis=1)
    dropped = int(R - ok.sum())
    if dropped > MAX_DROP_FRACTION * R:
        raise NumericalError(f"{dropped} of {R} calibration replicates failed")
    kept = values[ok]
    if kept.shape[0] < 2:
        raise NumericalError("fewer than 2 usable calibration replicates")
    mean = kept.mean(axis=0)
    sd = kept.std(axis=0, ddof=1)
    if dropped:
        log.info("dropped %d calibration replicates", dropped)
    if np.ndim(mean) == 0:
        mean, sd = float(mean), float(sd)
    return CalibrationResult(mean, sd, int(kept.shape[0]), dropped)


@dataclass(frozen=True)
class SimTemplate:
    """Stationary simulation design: fixed locations and a local model family."""

    locations: np.ndarray
    fam: LocalModelFamily

    def factor(self, theta: float) -> np.ndarray:
        dists = pairwise_distances(self.locations)
        return ordered_cholesky(self.fam.cov_from_dists(theta, dists))

    def draw(self, theta: float, seeds, factor=None) -> np.ndarray:
        """Responses of shape (n, len(seeds)); column r uses ``seeds[r]``."""
        L = self.factor(theta) if factor is None else factor
        n = L.shape[0]
        eps = np.column_stack([standard_normals(int(s) % 2 ** 64, n) for s in seeds])
        return L @ eps


def calibration_seeds(seed: int, R: int) -> list[int]:
    return [(int(seed) + CALIBRATION_SEED_OFFSET + r) % 2 ** 64 for r in range(int(R))]


def calibrate(statistic, theta_bar: float, template: SimTemplate, R: int = DEFAULT_REPLICATES,
              seed: int = 0) -> CalibrationResult:
    """Mean and sd of ``statistic(Dataset)`` over R stationary simulations at theta_bar.

    Replicates whose statistic raises or is non-finite are dropped; more
    than 20% dropped is an error.
    """
    if R < 2:
        raise ValueError("R must be at least 2")
    L = template.factor(theta_bar)
    seeds = calibration_seeds(seed, R)
    vals = []
    for s in seeds:
        z = template.draw(theta_bar, [s], factor=L)[:, 0]
        try:
            v = np.asarray(statistic(Dataset(template.locations, z)), dtype=float)
        except (NumericalError, ValueError) as exc:
            log.debug("calibration replicate %d failed: %s", s, exc)
            v = None
        vals.append(v)
    shape = next((v.shape for v in vals if v is not None), ())
    table = np.array([np.full(shape, np.nan) if v is None else v for v in vals])
    return _summarize(table)


# -- shared profile evaluation ----------------------------------------------------

class _Node:
    __slots__ = ("perm", "dists", "weights", "ok")

    def __init__(self, perm, dists, weights, ok):
        self.perm, self.dists, self.weights, self.ok = perm, dists, weights, ok


class ProfileRun:
    """Fitted surfaces for observed data and calibration replicates over a lambda grid.

    Attributes after construction: ``theta_hat`` and ``lr`` of shape
    (L, G, m) for L bandwidths, G grid nodes and m = R + 1 response columns
    (column 0 is the observed data), and ``theta_bar`` of shape (m,).
    ``lr`` is W(theta_hat, t) - W(theta_bar, t) per node.
    """

    def __init__(self, data: Dataset, fam: LocalModelFamily, scheme: WeightScheme, lambdas=None,
                 R: int = DEFAULT_REPLICATES, seed: int = 0, grid: EstimationGrid | None = None,
                 workers: int | None = None, nu_grid=None):
        self.data, self.fam, self.scheme = data, fam, scheme
        self.lambdas = default_lambda_grid(data.locations) if lambdas is None else np.asarray(lambdas, dtype=float)
        if self.lambdas.size == 0 or np.any(~(self.lambdas > 0)):
            raise ValueError("bandwidth grid must be nonempty and positive")
        self.grid = grid if grid is not None else estimation_grid(
            scheme.domain_box if scheme.domain_box is not None else bounding_box(data.locations))
        self.R = int(R)
        self.seed = int(seed)
        self.workers = workers
        lo, hi = fam.bounds
        self.nu_grid = np.geomspace(lo, hi, NU_GRID_SIZE) if nu_grid is None else np.asarray(nu_grid, dtype=float)
        self.template = SimTemplate(data.locations, fam)

        self.nodes = self._map(self._node, self.grid.points)
        self.valid = np.all([nd.ok for nd in self.nodes], axis=0)
        if not np.any(self.valid):
            raise NumericalError("weights fail at some node for every bandwidth")

        self.theta_bar_obs = float(self._stationary(data.responses[:, None])[0])
        if self.R >= 2:
            reps = self.template.draw(self.theta_bar_obs, calibration_seeds(self.seed, self.R))
            Z = np.column_stack([data.responses, reps])
        else:
            Z = data.responses[:, None]
        self.Z = Z
        self.theta_bar = np.concatenate([[self.theta_bar_obs], self._stationary(Z[:, 1:])]) if Z.shape[1] > 1 \
            else np.array([self.theta_bar_obs])
        parts = self._map(self._node_tables, self.nodes)
        self.theta_hat = np.stack([p[0] for p in parts], axis=1)
        self.lr = np.stack([p[1] for p in parts], axis=1)
        self.theta_hat[~self.valid] = np.nan
        self.lr[~self.valid] = np.nan

    def _map(self, fn, items):
        if self.workers and self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    # geometry
    def _node(self, t) -> _Node:
        ordering = self.scheme.prepare(order_neighbors(self.data, t))
        k = len(ordering)
        W = np.zeros((self.lambdas.size, k))
        ok = np.ones(self.lambdas.size, dtype=bool)
        for i, lam in enumerate(self.lambdas):
            try:
                w, _ = self.scheme.weights(ordering, float(lam))
            except (NumericalError, ValueError) as exc:
                log.debug("weights failed at %s, lambda %.4g: %s", t, lam, exc)
                ok[i] = False
                continue
            W[i, : len(w)] = w.w
        dists = pairwise_distances(self.data.locations[ordering.perm])
        return _Node(ordering.perm, dists, W, ok)

    # stationary fits
    def _stationary(self, Z) -> np.ndarray:
        if Z.shape[1] == 0:
            return np.empty(0)
        lo, hi = self.fam.bounds
        dists = pairwise_distances(self.data.locations)
        if self.fam.kind == "variance_scale":
            u = whiten(ordered_cholesky(self.fam.unit_cov(dists)), Z)
            return np.clip(np.sum(u * u, axis=0) / Z.shape[0], lo, hi)
        ll = []
        for nu in self.nu_grid:
            try:
                L = ordered_cholesky(self.fam.cov_from_dists(nu, dists))
            except NumericalError:
                break
            ll.append(np.sum(increments_from_factor(L, Z), axis=0))
        theta, _ = _spline_argmax(self.nu_grid[: len(ll)], np.array(ll))
        return theta

    # per-node objective tables
    def _node_tables(self, nd: _Node):
        Zk = self.Z[nd.perm]
        W = nd.weights
        lo, hi = self.fam.bounds
        if self.fam.kind == "variance_scale":
            u = whiten(ordered_cholesky(self.fam.unit_cov(nd.dists)), Zk)
            S = W.sum(axis=1)[:, None]
            A = W @ (u * u)
            with np.errstate(divide="ignore", invalid="ignore"):
                th = np.clip(A / S, lo, hi)
            tb = self.theta_bar[None, :]
            lr = -0.5 * S * (np.log(th) - np.log(tb)) - 0.5 * A * (1.0 / th - 1.0 / tb)
            return th, np.maximum(lr, 0.0)
        obj = []
        for nu in self.nu_grid:
            try:
                L = ordered_cholesky(self.fam.cov_from_dists(nu, nd.dists))
            except NumericalError:
                break
            obj.append(W @ increments_from_factor(L, Zk))
        obj = np.array(obj)
        if len(obj) < 4:
            raise NumericalError("local covariance is singular across the smoothness grid")
        L_, m = W.shape[0], Zk.shape[1]
        flat = obj.reshape(len(obj), -1)
        tb = np.broadcast_to(self.theta_bar[None, :], (L_, m)).ravel()
        th, best, at_bar = _spline_argmax(self.nu_grid[: len(obj)], flat, tb)
        lr = np.maximum(best - at_bar, 0.0)
        return th.reshape(L_, m), lr.reshape(L_, m)

    # derived statistics, shape (L, m)
    def variation(self) -> np.ndarray:
        L, _, m = self.theta_hat.shape
        surf = self.theta_hat.transpose(1, 0, 2).reshape(self.grid.shape + (L, m))
        return _variation_batch(surf, self.grid.shape, self.grid.spacing)

    def likelihood_ratio(self) -> np.ndarray:
        return np.sum(self.lr, axis=1)

    def surface(self, i: int, col: int = 0) -> np.ndarray:
        return self.theta_hat[i, :, col]


def _spline_argmax(nus, values, at=None):
    """Maximize columns of ``values`` (len(nus), M) over nu via an Akima interpolant in log nu.

    Returns theta (M,), or with ``at`` given, (theta, max value, value at ``at``)
    where the maximum also considers ``at`` itself so max >= value at ``at``.
    """
    x = np.log(nus)
    if values.ndim == 1:
        values = values[:, None]
    spline = interpolate.Akima1DInterpolator(x, values, axis=0)
    fine = np.linspace(x[0], x[-1], SPLINE_POINTS)
    v = spline(fine)
    i = np.argmax(v, axis=0)
    best = v[i, np.arange(v.shape[1])]
    arg = fine[i]
    lo, hi = nus[0], nus[-1]
    if at is None:
        return np.clip(np.exp(arg), lo, hi), best
    xa = np.clip(np.log(at), x[0], x[-1])
    va = _diag_eval(spline, xa)
    take = va > best
    arg = np.where(take, xa, arg)
    best = np.where(take, va, best)
    return np.clip(np.exp(arg), lo, hi), best, va


def _diag_eval(spline, xa):
    """Evaluate column j of a vector spline at xa[j]."""
    # piecewise cubic: locate interval and apply its coefficients to each column
    x = spline.x
    idx = np.clip(np.searchsorted(x, xa, side="right") - 1, 0, x.size - 2)
    dx = xa - x[idx]
    cols = np.arange(xa.size)
    c = spline.c[:, idx, cols]
    return ((c[0] * dx + c[1]) * dx + c[2]) * dx + c[3]


# -- selectors ----------------------------------------------------------------------

def _calibrated(name, run: ProfileRun, stat: np.ndarray) -> ProfileCurve:
    obs = stat[:, 0]
    cal = _summarize(stat[run.valid, 1:].T)
    crit = np.full(obs.shape, np.nan)
    mean = np.full(obs.shape, np.nan)
    sd = np.full(obs.shape, np.nan)
    mean[run.valid], sd[run.valid] = cal.mean, cal.sd
    ok = run.valid & (sd > 0)
    crit[ok] = (obs[ok] - mean[ok]) / sd[ok]
    full = CalibrationResult(mean, sd, cal.replicates, cal.dropped)
    return ProfileCurve(name, run.lambdas, crit, obs, run.theta_hat[:, :, 0], full)


def _run(data, fam, scheme, lambdas, R, seed, run, **kw) -> ProfileRun:
    if run is not None:
        return run
    if R < 2:
        raise ValueError("R must be at least 2")
    return ProfileRun(data, fam, scheme, lambdas, R, seed, **kw)


def select_lambda1(data: Dataset, fam: LocalModelFamily, scheme: WeightScheme, lambdas=None,
                   R: int = DEFAULT_REPLICATES, seed: int = 0, run: ProfileRun | None = None, **kw) -> ProfileCurve:
    """Calibrated spatial-variation criterion [P - E P] / sd P under the stationary fit."""
    run = _run(data, fam, scheme, lambdas, R, seed, run, **kw)
    return _calibrated("lambda1", run, run.variation())


def select_lambda2(data: Dataset, fam: LocalModelFamily, scheme: WeightScheme, lambdas=None,
                   R: int = DEFAULT_REPLICATES, seed: int = 0, run: ProfileRun | None = None, **kw) -> ProfileCurve:
    """Calibrated summed local likelihood ratio against the stationary fit."""
    run = _run(data, fam, scheme, lambdas, R, seed, run, **kw)
    return _calibrated("lambda2", run, run.likelihood_ratio())


def fitted_global_model(fam: LocalModelFamily, grid: EstimationGrid, surface) -> CovarianceModel:
    """Global model implied by a fitted surface, interpolated from the grid.

    Variance family: diag(sigma_hat) C diag(sigma_hat) with C the base
    correlation. Smoothness family: the smoothness-only nonstationary Matérn
    with nu_hat(t).
    """
    interp = surface_interpolator(grid, surface)
    base = fam.base
    if fam.kind == "variance_scale":
        corr = StationaryMatern(MaternParams(1.0, base.nu, base.rho))
        return ModulatedModel(lambda x: np.sqrt(interp(x)), corr)
    return NSSmoothnessMatern(base.sigma2, base.rho, interp)


def surface_interpolator(grid: EstimationGrid, surface):
    """Linear interpolation of a grid surface, held constant outside the grid."""
    surface = np.asarray(surface, dtype=float)
    if grid.points.shape[1] == 1:
        xs = grid.points[:, 0]
        return lambda x: np.interp(as_points(x, 1)[:, 0], xs, surface)
    axes = [np.unique(grid.points[:, i]) for i in range(2)]
    f = interpolate.RegularGridInterpolator(axes, surface.reshape(grid.shape), method="linear")
    lo = np.array([a[0] for a in axes])
    hi = np.array([a[-1] for a in axes])
    return lambda x: f(np.clip(as_points(x, 2), lo, hi))


def model_kl(fam: LocalModelFamily, grid: EstimationGrid, surface, truth_cov, locs) -> float:
    """KL( fitted global model || truth ) at the observation locations."""
    fitted = cov_matrix(fitted_global_model(fam, grid, surface), locs)
    if fam.nugget:
        fitted = fitted + fam.nugget * np.diag(np.diag(fitted))
    return kl_mean_zero(fitted, truth_cov)


def select_lambda_oracle(data: Dataset, truth: CovarianceModel, fam: LocalModelFamily, scheme: WeightScheme,
                         lambdas=None, run: ProfileRun | None = None, **kw) -> ProfileCurve:
    """Inverse KL from the fitted global model to the truth (capped at 1e12)."""
    if run is None:
        run = ProfileRun(data, fam, scheme, lambdas, R=0, **kw)
    truth_cov = cov_matrix(truth, data.locations)
    kl = np.full(run.lambdas.size, np.nan)
    for i in np.flatnonzero(run.valid):
        try:
            kl[i] = model_kl(fam, run.grid, run.surface(i), truth_cov, data.locations)
        except (NumericalError, ValueError) as exc:
            log.debug("oracle KL failed at lambda %.4g: %s", run.lambdas[i], exc)
    with np.errstate(divide="ignore"):
        crit = np.where(np.isfinite(kl), np.minimum(1.0 / kl, KL_CAP), np.nan)
    return ProfileCurve("oracle", run.lambdas, crit, kl, run.theta_hat[:, :, 0])


def bandwidth_profiles(data: Dataset, fam: LocalModelFamily, scheme: WeightScheme, lambdas=None,
                       R: int = DEFAULT_REPLICATES, seed: int = 0, truth: CovarianceModel | None = None,
                       selectors=("lambda1", "lambda2", "oracle"), **kw) -> dict:
    """Selector profiles from one shared run, plus the run itself under ``"run"``.

    The oracle is included only when ``truth`` is given; calibration is
    skipped when only the oracle is requested.
    """
    selectors = [s for s in selectors if s != "oracle" or truth is not None]
    calibrated = [s for s in selectors if s != "oracle"]
    if calibrated and R < 2:
        raise ValueError("R must be at least 2")
    run = ProfileRun(data, fam, scheme, lambdas, R if calibrated else 0, seed, **kw)
    out = {}
    if "lambda1" in selectors:
        out["lambda1"] = select_lambda1(data, fam, scheme, run=run)
    if "lambda2" in selectors:
        out["lambda2"] = select_lambda2(data, fam, scheme, run=run)
    if "oracle" in selectors:
        out["oracle"] = select_lambda_oracle(data, truth, fam, scheme, run=run)
    out["run"] = run
    return out
