"""Quick numerical self-checks behind ``locfield selftest``.

Each check returns (name, value, tolerance, passed) where ``value`` is the
worst error observed.
"""

from __future__ import annotations

import numpy as np

from .bayesrisk import TraceGeometry
from .core import order_neighbors, telescope_weights
from .covariance import (
    AnisotropicNSMatern,
    NSMatern,
    NSSmoothnessMatern,
    MaternParams,
    cov_matrix,
    gr_integral_residual,
    lemma_convolution_residual,
    matern_cov,
    pairwise_distances,
)
from .kernels import KernelSpec, constrained_weights, kernel_value
from .linalg import CholSequence, dense_loglik, inverse_downdate, loglik_increments


def _row(name, value, tol):
    return (name, float(value), float(tol), bool(value < tol))


def check_appendix():
    gr = max(gr_integral_residual(nu, q) for nu in (0.3, 0.8, 1.5, 2.5) for q in (0.1, 1.0, 3.0))
    return [_row("bessel integral identity", gr, 1e-6), _row("gaussian convolution identity", lemma_convolution_residual(), 1e-8)]


def check_positive_definite(rng, trials=10):
    worst = 0.0
    for _ in range(trials):
        locs = rng.uniform(0, 1, size=(30, 2))
        a, b = rng.uniform(0.3, 2.0, 2)
        models = (
            AnisotropicNSMatern(lambda x: 1 + 0.5 * x[:, 0], lambda x: a + x[:, 1], lambda x: 0.05 + 0.1 * x[:, 0]),
            NSMatern(lambda x: 1 + x[:, 1], lambda x: b + x[:, 0], lambda x: 0.2 + 0.3 * x[:, 1]),
            NSSmoothnessMatern(1.0, 0.3, lambda x: a + x[:, 0] * x[:, 1]),
        )
        for m in models:
            ev = np.linalg.eigvalsh(cov_matrix(m, locs))
            worst = max(worst, -ev.min() / ev.max())
    return [_row("nonstationary covariances PSD", worst, 1e-8)]


def check_linalg(rng):
    locs = rng.uniform(0, 1, size=(25, 1))
    cov = matern_cov(MaternParams(1.0, 1.2, 0.3), pairwise_distances(locs)) + 1e-6 * np.eye(25)
    z = rng.standard_normal(25)
    seq = CholSequence(4)
    for k in range(25):
        seq.append(cov[k, :k], cov[k, k])
    chol_err = np.max(np.abs(seq.L - np.linalg.cholesky(cov)))
    inv = np.linalg.inv(cov)
    down_err = np.max(np.abs(inverse_downdate(inv, 7) - np.linalg.inv(np.delete(np.delete(cov, 7, 0), 7, 1))))
    down_err /= np.max(np.abs(inv))
    well = matern_cov(MaternParams(1.0, 0.8, 0.2), pairwise_distances(locs)) + 1e-3 * np.eye(25)
    ll = dense_loglik(well, z)
    tele = abs(np.sum(loglik_increments(well, z)) - ll) / max(1.0, abs(ll))
    return [_row("cholesky append", chol_err, 1e-8), _row("inverse downdate (relative)", down_err, 1e-8),
            _row("log-likelihood telescoping (relative)", tele, 1e-8)]


def check_kernels():
    x, w = np.polynomial.hermite_e.hermegauss(80)
    w = w / np.sqrt(2 * np.pi)
    worst = 0.0
    for r in range(1, 5):
        vals = kernel_value(KernelSpec.higher_order(r), x) / np.exp(-0.5 * x * x) * np.sqrt(2 * np.pi)
        for p in range(2 * r):
            m = np.sum(w * vals * x ** p)
            worst = max(worst, abs(m - (1.0 if p == 0 else 0.0)))
    return [_row("kernel moments r<=4", worst, 1e-8)]


def check_weights(rng):
    worst = 0.0
    for _ in range(10):
        locs = rng.uniform(0, 1, size=(40, 2))
        o = order_neighbors(locs, rng.uniform(0.2, 0.8, 2))
        w = constrained_weights(o, 0.2).w
        worst = max(worst, abs(w.sum() - 1.0), np.max(np.abs(w @ o.offsets)))
    locs = np.linspace(0, 1, 30)[:, None]
    o = order_neighbors(locs, [0.4])
    cov = matern_cov(MaternParams(1.0, 0.8, 0.3), pairwise_distances(locs[o.perm]))
    wv = telescope_weights(np.exp(-0.5 * (o.dists / 0.2) ** 2))
    b00 = abs(TraceGeometry(cov, -o.offsets[:, 0], 0).B2(wv.wtilde)[0, 0] - 1.0)
    return [_row("constrained weights feasible", worst, 1e-10), _row("B00 equals one", b00, 1e-10)]


def run_checks(seed: int = 0) -> list[tuple]:
    rng = np.random.default_rng(seed)
    return (check_appendix() + check_positive_definite(rng) + check_linalg(rng)
            + check_kernels() + check_weights(rng))
