"""Experiment configuration: schema, parameter expressions and presets.

Configs are YAML (or JSON) mappings validated against :data:`SCHEMA`
before anything is computed; unknown keys are rejected. Spatially varying
parameters are written as small expressions in the coordinates ``x``, ``y``
(``t`` is an alias for ``x``), e.g. ``"2*sin(t/0.015) + 2.8"``.
"""

from __future__ import annotations

import ast
import copy
import hashlib
import json
import math
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .core import as_points
from .covariance import (
    AnisotropicNSMatern,
    CovarianceModel,
    MaternParams,
    ModulatedModel,
    NSMatern,
    NSSmoothnessMatern,
    StationaryMatern,
)
from .kernels import KernelSpec, WeightScheme
from .wll import LocalModelFamily


class ConfigError(ValueError):
    """Invalid configuration (exit code 2)."""


# -- expressions ---------------------------------------------------------------

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt}
_CONSTS = {"pi": math.pi}
_VARS = ("x", "y", "t")
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}


class Expression:
    """A parameter function of location parsed from a restricted grammar.

    Numbers, ``pi``, the coordinates ``x``, ``y`` and ``t`` (= ``x``),
    ``+ - * / **``, unary minus and ``sin``, ``cos``, ``exp``, ``sqrt``.
    Calling it on (m, d) locations returns an (m,) array.
    """

    def __init__(self, source: str):
        self.source = str(source)
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {self.source!r}") from exc
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ConfigError(f"only numeric constants allowed in {self.source!r}")
        elif isinstance(node, ast.Name):
            if node.id not in _VARS and node.id not in _CONSTS:
                raise ConfigError(f"unknown name {node.id!r} in {self.source!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ConfigError(f"operator not allowed in {self.source!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ConfigError(f"operator not allowed in {self.source!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords or len(node.args) != 1:
                raise ConfigError(f"only sin/cos/exp/sqrt of one argument allowed in {self.source!r}")
            self._check(node.args[0])
        else:
            raise ConfigError(f"unsupported syntax in {self.source!r}")

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        return _FUNCS[node.func.id](self._eval(node.args[0], env))

    def __call__(self, locs) -> np.ndarray:
        locs = as_points(locs)
        x = locs[:, 0]
        y = locs[:, 1] if locs.shape[1] > 1 else np.zeros_like(x)
        with np.errstate(all="ignore"):
            v = self._eval(self._tree, {"x": x, "y": y, "t": x})
        return np.broadcast_to(np.asarray(v, dtype=float), x.shape).copy()

    def __repr__(self):
        return f"Expression({self.source!r})"


def param(value):
    """Number stays a number; a string becomes an :class:`Expression`."""
    return Expression(value) if isinstance(value, str) else float(value)


# -- schema ------------------------------------------------------------------------

_num_or_expr = {"type": ["number", "string"]}
_pos = {"type": "number", "exclusiveMinimum": 0}
_matern = {
    "type": "object",
    "additionalProperties": False,
    "required": ["sigma2", "nu", "rho"],
    "properties": {"sigma2": _pos, "nu": _pos, "rho": _pos},
}
_lambda_grid = {
    "oneOf": [
        {"type": "array", "items": _pos, "minItems": 1},
        {
            "type": "object",
            "additionalProperties": False,
            "properties": {"size": {"type": "integer", "minimum": 1}, "min": _pos, "max": _pos},
        },
    ]
}
_kernel = {"type": "string", "pattern": r"^(K(2|4|6|8|10|12|14|16)|hard_threshold)$"}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "data": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": ["stationary", "variance_modulated", "full_R", "reparam_K", "smoothness_only"]},
                "matern": _matern,
                "sigma": _num_or_expr,
                "sigma2": _pos,
                "nu": _num_or_expr,
                "rho": _num_or_expr,
                "alpha": _num_or_expr,
                "nugget": {"type": "number", "minimum": 0},
            },
        },
        "locations": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "n"],
            "properties": {
                "kind": {"enum": ["even_1d", "uniform_2d"]},
                "n": {"type": "integer", "minimum": 1},
                "interval": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "box": {
                    "type": "array",
                    "minItems": 2,
                    "maxItems": 2,
                    "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                },
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "estimation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": ["variance_scale", "matern_smoothness"]},
                "base": _matern,
                "bounds": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
                "nugget": {"type": "number", "minimum": 0},
                "weights": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "scheme": {"enum": ["kernel", "constrained"]},
                        "kernel": _kernel,
                        "boundary_correction": {"type": "boolean"},
                        "k_max": {"type": "integer", "minimum": 1},
                    },
                },
                "lambda": {"oneOf": [_pos, {"enum": ["lambda1", "lambda2", "oracle"]}]},
                "lambda_grid": _lambda_grid,
                "grid_shape": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1, "maxItems": 2},
            },
        },
        "bandwidth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "replicates": {"type": "integer", "minimum": 2},
                "selectors": {
                    "type": "array",
                    "items": {"enum": ["lambda1", "lambda2", "oracle"]},
                    "minItems": 1,
                    "uniqueItems": True,
                },
            },
        },
        "bayes_risk": {
            "type": "object",
            "additionalProperties": False,
            "required": ["prior"],
            "properties": {
                "mode": {"enum": ["heatmap", "curves"]},
                "nu_grid": {"type": "array", "items": _pos, "minItems": 1},
                "rho_grid": {"type": "array", "items": _pos, "minItems": 1},
                "matern": _matern,
                "kernel_a": _kernel,
                "kernel_b": _kernel,
                "kernels": {"type": "array", "items": _kernel, "minItems": 1},
                "lambda_grid": _lambda_grid,
                "n": {"type": "integer", "minimum": 2},
                "interval": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "endpoint": {"type": "boolean"},
                "t0": {"type": "number"},
                "oracle": {"enum": ["risk", "kl"]},
                "kl_draws": {"type": "integer", "minimum": 10},
                "prior": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["c0", "tau2", "N"],
                    "properties": {
                        "c0": _pos,
                        "tau2": {"type": "number", "minimum": 0},
                        "N": {"type": "integer", "minimum": 0, "maximum": 8},
                    },
                },
            },
        },
    },
}


# -- presets -----------------------------------------------------------------------

_SIGMA_1D = "2*sin(t/0.015) + 2.8"
_NU_2D = "1.5 + sin(2*pi*x)*sin(pi*y)"

PRESETS = {
    "fig1": {
        "seed": 1,
        "model": {"family": "variance_modulated", "sigma": _SIGMA_1D, "matern": {"sigma2": 1.0, "nu": 0.8, "rho": 0.2}},
        "locations": {"kind": "even_1d", "n": 200, "interval": [0.0, 0.1]},
        "estimation": {
            "family": "variance_scale",
            "base": {"sigma2": 1.0, "nu": 0.8, "rho": 0.2},
            "weights": {"scheme": "kernel", "kernel": "K6"},
            "lambda": "oracle",
        },
        "bandwidth": {"selectors": ["oracle"]},
    },
    "fig2": {
        "seed": 0,
        "bayes_risk": {
            "mode": "heatmap",
            "nu_grid": [0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0],
            "rho_grid": [0.4, 0.6, 0.8, 1.0, 1.2],
            "kernel_a": "K6",
            "kernel_b": "hard_threshold",
            "lambda_grid": {"size": 40, "min": 0.01, "max": 1.0},
            "n": 100,
            "interval": [0.0, 1.0],
            "endpoint": False,
            "t0": 0.5,
            "prior": {"c0": 2.0, "tau2": 4.0, "N": 4},
        },
    },
    "fig3": {
        "seed": 0,
        "bayes_risk": {
            "mode": "curves",
            "matern": {"sigma2": 1.0, "nu": 0.8, "rho": 0.8},
            "kernels": ["K2", "K4", "K6", "K8", "hard_threshold"],
            "lambda_grid": {"size": 40, "min": 0.01, "max": 1.0},
            "n": 150,
            "interval": [0.0, 1.0],
            "endpoint": True,
            "t0": 0.5,
            "prior": {"c0": 2.0, "tau2": 4.0, "N": 4},
        },
    },
    "fig4": {
        "seed": 4,
        "model": {"family": "variance_modulated", "sigma": _SIGMA_1D, "matern": {"sigma2": 1.0, "nu": 0.5, "rho": 0.5}},
        "locations": {"kind": "even_1d", "n": 1000, "interval": [0.0, 0.1]},
        "estimation": {
            "family": "variance_scale",
            "base": {"sigma2": 1.0, "nu": 0.5, "rho": 0.5},
            "weights": {"scheme": "kernel", "kernel": "K6"},
            "lambda": "lambda2",
        },
        "bandwidth": {"replicates": 50, "selectors": ["lambda1", "lambda2", "oracle"]},
    },
    "fig5": {
        "seed": 5,
        "model": {"family": "variance_modulated", "sigma": _SIGMA_1D, "matern": {"sigma2": 1.0, "nu": 1.0, "rho": 0.5}},
        "locations": {"kind": "even_1d", "n": 1000, "interval": [0.0, 0.1]},
        "estimation": {
            "family": "variance_scale",
            "base": {"sigma2": 1.0, "nu": 1.0, "rho": 0.5},
            "weights": {"scheme": "kernel", "kernel": "K6"},
            "lambda": "lambda2",
        },
        "bandwidth": {"replicates": 50, "selectors": ["lambda1", "lambda2", "oracle"]},
    },
    "fig6": {
        "seed": 6,
        "model": {"family": "smoothness_only", "sigma2": 1.0, "rho": 0.5, "nu": _NU_2D},
        "locations": {"kind": "uniform_2d", "n": 800, "box": [[0.0, 1.0], [0.0, 1.0]], "seed": 6},
        "estimation": {
            "family": "matern_smoothness",
            "base": {"sigma2": 1.0, "nu": 1.0, "rho": 0.5},
            "weights": {"scheme": "constrained", "boundary_correction": True, "k_max": 150},
            "lambda": "lambda2",
        },
        "bandwidth": {"replicates": 50, "selectors": ["lambda2"]},
    },
}


def load_config(spec: str) -> dict:
    """Load a preset name or a YAML/JSON file, validate it and return a copy."""
    if spec in PRESETS:
        cfg = copy.deepcopy(PRESETS[spec])
    else:
        path = Path(spec)
        if not path.is_file():
            raise ConfigError(f"no such config file or preset: {spec}")
        try:
            cfg = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {spec}: {exc}") from exc
    validate(cfg)
    return cfg


def validate(cfg) -> None:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    for key in ("sigma", "nu", "rho", "alpha"):
        v = cfg.get("model", {}).get(key)
        if isinstance(v, str):
            Expression(v)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# -- builders --------------------------------------------------------------------------

def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"{where} needs '{key}'")
    return section[key]


def build_model(m: dict) -> CovarianceModel:
    """Truth/simulation covariance model from the ``model`` section."""
    fam = m["family"]
    if fam == "stationary":
        return StationaryMatern(MaternParams(**_require(m, "matern", "model")))
    if fam == "variance_modulated":
        base = StationaryMatern(MaternParams(**_require(m, "matern", "model")))
        return ModulatedModel(param(_require(m, "sigma", "model")), base)
    if fam == "full_R":
        return AnisotropicNSMatern(param(m.get("sigma", 1.0)), param(m.get("nu", 0.5)), param(m.get("alpha", 1.0)))
    if fam == "reparam_K":
        return NSMatern(param(m.get("sigma", 1.0)), param(m.get("nu", 0.5)), param(m.get("rho", 1.0)))
    return NSSmoothnessMatern(float(m.get("sigma2", 1.0)), float(m.get("rho", 1.0)), param(_require(m, "nu", "model")))


def build_family(e: dict) -> LocalModelFamily:
    base = MaternParams(**_require(e, "base", "estimation"))
    kw = {"nugget": float(e.get("nugget", 0.0))}
    if "bounds" in e:
        kw["bounds"] = tuple(e["bounds"])
    if e["family"] == "variance_scale":
        return LocalModelFamily.variance_scale(base, **kw)
    return LocalModelFamily.matern_smoothness(base.sigma2, base.rho, **kw)


def build_scheme(e: dict, box) -> WeightScheme:
    w = e.get("weights", {})
    return WeightScheme(
        kind=w.get("scheme", "kernel"),
        kernel=KernelSpec.parse(w.get("kernel", "K6")),
        boundary_correction=bool(w.get("boundary_correction", False)),
        domain_box=np.asarray(box, dtype=float),
        k_max=w.get("k_max"),
    )


def build_lambda_grid(spec, default_lo=None, default_hi=None) -> np.ndarray | None:
    if spec is None:
        return None
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    lo, hi = spec.get("min", default_lo), spec.get("max", default_hi)
    if lo is None or hi is None:
        return None
    if not hi > lo:
        raise ConfigError("lambda_grid max must exceed min")
    return np.geomspace(lo, hi, int(spec.get("size", 25)))
