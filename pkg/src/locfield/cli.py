"""Command-line harness: ``locfield <command> --config <file|preset>``.

Commands write CSVs with a header row, each accompanied by a
``<name>.meta.json`` sidecar holding the resolved config, its SHA-256
hash, the seed and the library version. Nothing time-dependent is written,
so reruns with the same config and seed are byte-identical.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bandwidth import bandwidth_profiles, default_lambda_grid, estimation_grid, model_kl
from .bayesrisk import PriorSpec, TraceGeometry, improvement_grid, ordered_setup, risk_curve
from .config import (
    PRESETS,
    ConfigError,
    build_family,
    build_lambda_grid,
    build_model,
    build_scheme,
    config_hash,
    load_config,
)
from .core import Dataset, NumericalError, read_dataset, write_dataset
from .covariance import MaternParams, cov_matrix
from .kernels import KernelSpec
from .simulate import gen_locations, simulate_dataset
from .svg import heat_grid, line_plot
from .wll import fit_surface

log = logging.getLogger("locfield")

COMMANDS = ("simulate", "estimate", "bandwidth", "bayes-risk", "selftest")


# -- output helpers ------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def write_csv(path: Path, header, rows, ctx: dict) -> Path:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_cell(v) for v in r])
    write_sidecar(path, ctx)
    return path


def write_sidecar(path: Path, ctx: dict) -> Path:
    meta = {
        "command": ctx["command"],
        "config": ctx["config"],
        "config_sha256": config_hash(ctx["config"]),
        "seed": ctx["seed"],
        "version": __version__,
    }
    side = path.with_name(path.name + ".meta.json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return side


# -- shared setup ------------------------------------------------------------------------

def _box(locs) -> np.ndarray:
    return np.column_stack([locs.min(axis=0), locs.max(axis=0)])


def _domain(cfg, locs) -> np.ndarray:
    spec = cfg.get("locations", {})
    if spec.get("kind") == "even_1d":
        return np.asarray([spec.get("interval", [0.0, 1.0])], dtype=float)
    if spec.get("kind") == "uniform_2d":
        return np.asarray(spec.get("box", [[0.0, 1.0], [0.0, 1.0]]), dtype=float)
    return _box(locs)


def _dataset(cfg, seed) -> tuple[Dataset, object]:
    """Observed data (from ``data`` or simulated) and the truth model if known."""
    truth = build_model(cfg["model"]) if "model" in cfg else None
    if "data" in cfg:
        try:
            return read_dataset(cfg["data"]), truth
        except OSError as exc:
            raise ConfigError(f"cannot read data file {cfg['data']}: {exc}") from exc
    if truth is None or "locations" not in cfg:
        raise ConfigError("need either 'data' or both 'model' and 'locations'")
    locs = gen_locations(cfg["locations"])
    return simulate_dataset(truth, locs, seed, cfg["model"].get("nugget", 0.0)), truth


def _estimation(cfg, data):
    if "estimation" not in cfg:
        raise ConfigError("config needs an 'estimation' section")
    e = cfg["estimation"]
    fam = build_family(e)
    box = _domain(cfg, data.locations)
    scheme = build_scheme(e, box)
    grid = estimation_grid(box, e.get("grid_shape"))
    lg = e.get("lambda_grid")
    lambdas = build_lambda_grid(lg)
    if lambdas is None:
        size = lg.get("size", 25) if isinstance(lg, dict) else 25
        lambdas = default_lambda_grid(data.locations, size)
    return fam, scheme, grid, lambdas


def _profiles(cfg, data, truth, fam, scheme, grid, lambdas, seed, threads, need=None):
    b = cfg.get("bandwidth", {})
    selectors = list(need or b.get("selectors", ["lambda1", "lambda2", "oracle"]))
    if "oracle" in selectors and truth is None:
        raise ConfigError("the oracle selector needs a known 'model'")
    prof = bandwidth_profiles(data, fam, scheme, lambdas, R=b.get("replicates", 50), seed=seed, truth=truth,
                              selectors=selectors, grid=grid, workers=threads)
    return {k: v for k, v in prof.items() if k in selectors}, prof["run"]


def _surface_rows(grid, res):
    for p, r in zip(grid.points, res):
        yield (*p, r.theta_hat, r.objective, r.neighborhood_size, r.lambda_used, r.error or "")


# -- commands ------------------------------------------------------------------------------

def cmd_simulate(cfg, out: Path, seed: int, threads) -> list[Path]:
    data, _ = _dataset({k: v for k, v in cfg.items() if k != "data"}, seed)
    path = write_dataset(data, out / "data.csv")
    write_sidecar(path, _ctx("simulate", cfg, seed))
    if data.dim == 1:
        line_plot(out / "data.svg", data.locations[:, 0], {"z": data.responses}, "simulated field")
    return [path]


def cmd_estimate(cfg, out: Path, seed: int, threads) -> list[Path]:
    ctx = _ctx("estimate", cfg, seed)
    data, truth = _dataset(cfg, seed)
    fam, scheme, grid, lambdas = _estimation(cfg, data)
    lam = cfg["estimation"].get("lambda", "lambda2")
    written = []
    if isinstance(lam, str):
        prof, _ = _profiles(cfg, data, truth, fam, scheme, grid, lambdas, seed, threads, need=[lam])
        written += _write_profiles(prof, out, ctx)
        lam = prof[lam].lambda_hat
    res = fit_surface(grid.points, data, fam, scheme, float(lam), workers=threads)
    header = (["x"] if data.dim == 1 else ["x", "y"]) + ["theta_hat", "objective", "k_effective", "lambda_used", "errors"]
    written.append(write_csv(out / "surface.csv", header, _surface_rows(grid, res), ctx))
    est = np.array([r.theta_hat for r in res])
    if data.dim == 1:
        series = {"estimate": est}
        if truth is not None and fam.kind == "variance_scale":
            series["truth"] = cov_matrix(truth, grid.points).diagonal()
        line_plot(out / "surface.svg", grid.points[:, 0], series, f"local estimate, lambda={lam:.4g}")
    else:
        heat_grid(out / "surface.svg", est.reshape(grid.shape).T[::-1], f"local estimate, lambda={lam:.4g}")
    return written


def _write_profiles(prof: dict, out: Path, ctx) -> list[Path]:
    paths = []
    header = ["lambda", "criterion_raw", "criterion_standardized", "is_argmax"]
    series = {}
    for name, curve in prof.items():
        paths.append(write_csv(out / f"profile_{name}.csv", header, curve.rows(), ctx))
        series[name] = curve.standardized
        x = curve.lambdas
    if series:
        line_plot(out / "profiles.svg", np.log10(x), series, "standardized profiles vs log10(lambda)")
    return paths


def cmd_bandwidth(cfg, out: Path, seed: int, threads) -> list[Path]:
    ctx = _ctx("bandwidth", cfg, seed)
    data, truth = _dataset(cfg, seed)
    fam, scheme, grid, lambdas = _estimation(cfg, data)
    prof, run = _profiles(cfg, data, truth, fam, scheme, grid, lambdas, seed, threads)
    paths = _write_profiles(prof, out, ctx)
    rows = []
    truth_cov = cov_matrix(truth, data.locations) if truth is not None else None
    for name, curve in prof.items():
        kl = ""
        if truth_cov is not None:
            try:
                kl = model_kl(fam, grid, run.surface(curve.argmax), truth_cov, data.locations)
            except NumericalError:
                kl = float("nan")
        rows.append((name, curve.lambda_hat, kl))
    paths.append(write_csv(out / "selection.csv", ["selector", "lambda_hat", "kl_to_truth"], rows, ctx))
    return paths


def cmd_bayes_risk(cfg, out: Path, seed: int, threads) -> list[Path]:
    ctx = _ctx("bayes-risk", cfg, seed)
    if "bayes_risk" not in cfg:
        raise ConfigError("config needs a 'bayes_risk' section")
    b = cfg["bayes_risk"]
    p = b["prior"]
    prior = PriorSpec.gaussian(p["c0"], p["tau2"], p["N"])
    a, z = b.get("interval", [0.0, 1.0])
    n = b.get("n", 100)
    locs = np.linspace(a, z, n, endpoint=b.get("endpoint", False))
    t0 = b.get("t0", 0.5 * (a + z))
    lambdas = build_lambda_grid(b.get("lambda_grid", {"size": 40}), (z - a) / n, z - a)
    if b.get("mode", "heatmap") == "heatmap":
        rows = improvement_grid(b.get("nu_grid", [0.8]), b.get("rho_grid", [0.8]),
                                KernelSpec.parse(b.get("kernel_a", "K6")),
                                KernelSpec.parse(b.get("kernel_b", "hard_threshold")),
                                lambdas, prior, locs, t0, oracle=b.get("oracle", "risk"),
                                draws=b.get("kl_draws", 4000), seed=seed)
        keys = ["nu", "rho", "pct_risk_improvement", "pct_bias_improvement", "lambda_A", "lambda_B"]
        path = write_csv(out / "heatmap.csv", keys, ([r[k] for k in keys] for r in rows), ctx)
        nus, rhos = b.get("nu_grid", [0.8]), b.get("rho_grid", [0.8])
        grid = np.array([r["pct_risk_improvement"] for r in rows]).reshape(len(nus), len(rhos))
        heat_grid(out / "heatmap.svg", grid, "% risk improvement (rows nu, cols rho)")
        return [path]
    params = MaternParams(**b.get("matern", {"sigma2": 1.0, "nu": 0.8, "rho": 0.8}))
    ordering, cov, offs = ordered_setup(locs, t0, params)
    geom = TraceGeometry(cov, offs, prior.N)
    rows, risk_series = [], {}
    for name in b.get("kernels", ["K2", "K4", "K6", "K8", "hard_threshold"]):
        c = risk_curve(KernelSpec.parse(name), lambdas, geom, ordering, prior)
        risk_series[name] = c["risk"]
        rows += [(name, l, r, e) for l, r, e in zip(c["lambda"], c["risk"], c["expected_bias_sq"])]
    path = write_csv(out / "risk_curves.csv", ["kernel", "lambda", "risk", "expected_bias_sq"], rows, ctx)
    line_plot(out / "risk_curves.svg", np.log10(lambdas), risk_series, "Bayes risk vs log10(lambda)")
    return [path]


def cmd_selftest(cfg, out, seed: int, threads) -> list[Path]:
    from .selftest import run_checks

    rows = run_checks(seed)
    width = max(len(r[0]) for r in rows)
    print(f"{'check'.ljust(width)}  {'value':>12}  {'tolerance':>10}  result")
    for name, value, tol, ok in rows:
        print(f"{name.ljust(width)}  {value:12.3e}  {tol:10.1e}  {'PASS' if ok else 'FAIL'}")
    if not all(r[3] for r in rows):
        raise NumericalError("selftest failures")
    return []


def _ctx(command, cfg, seed):
    return {"command": command, "config": cfg, "seed": seed}


HANDLERS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "bandwidth": cmd_bandwidth,
    "bayes-risk": cmd_bayes_risk,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="locfield", description="Local likelihood estimation for nonstationary Gaussian fields.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help=f"YAML/JSON config file or preset ({', '.join(PRESETS)})")
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed; overrides the config")
    p.add_argument("--threads", type=int, default=1, help="maximum worker threads")
    p.add_argument("--version", action="version", version=f"locfield {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("LOCFIELD_LOG", "error").lower()
    logging.basicConfig(level={"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selftest":
            cfg = load_config(args.config) if args.config else {}
        elif not args.config:
            raise ConfigError("--config is required")
        else:
            cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for path in HANDLERS[args.command](cfg, out, seed, args.threads):
            log.info("wrote %s", path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
