"""JSON run configurations: schemas, defaults and object builders.

Every subcommand has a schema (``SCHEMAS``) checked with ``jsonschema``
and a defaults record merged in before validation, so the resolved
configuration written beside the outputs is complete.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema
import numpy as np

from .exceptions import ConfigError, ContractError
from .model import MixtureModel, balanced_counts, make_covariance, orthogonal_means
from .numerics import RngStream
from . import pushforward as pf

U64_MAX = (1 << 64) - 1

_COV = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["identity", "ramp", "toeplitz", "lowrank"]},
        "s": {"type": "number", "exclusiveMinimum": 0},
        "lo": {"type": "number", "exclusiveMinimum": 0},
        "hi": {"type": "number", "exclusiveMinimum": 0},
        "rho": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
        "r": {"type": "integer", "minimum": 1},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_MEANS = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["orthogonal", "file", "zero"]},
        "kappa": {"type": "number", "minimum": 0},
        "path": {"type": "string"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_MODEL = {
    "type": "object",
    "properties": {
        "p": {"type": "integer", "minimum": 1},
        "n": {"type": "integer", "minimum": 1},
        "c": {"type": "number", "exclusiveMinimum": 0},
        "k": {"type": "integer", "minimum": 1},
        "counts": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "means": _MEANS,
        "covariance": {"oneOf": [_COV, {"type": "array", "items": _COV, "minItems": 1}]},
        "kappa_max": {"type": "number", "exclusiveMinimum": 0},
        "k_max": {"type": "integer", "minimum": 1},
    },
    "required": ["k"],
    "additionalProperties": False,
}

_NETWORK = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["relu", "identity"]},
        "input_dim": {"type": "integer", "minimum": 1},
        "widths": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "output_dim": {"type": "integer", "minimum": 1},
        "heads": {"type": ["integer", "null"], "minimum": 1},
        "sigma_star": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "residual": {"type": "boolean"},
        "bias_scale": {"type": "number", "minimum": 0},
        "head_offset": {"type": "number", "minimum": 0},
        "scale": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_SEED = {"type": "integer", "minimum": 0, "maximum": U64_MAX}
_OMEGA = {"enum": ["hadamard", "leave-two-out"]}

SCHEMAS = {
    "density": {
        "type": "object",
        "properties": {
            "seed": _SEED,
            "model": _MODEL,
            "grid": {
                "type": "object",
                "properties": {
                    "lo": {"type": "number"}, "hi": {"type": "number"},
                    "points": {"type": "integer", "minimum": 2},
                },
                "required": ["lo", "hi", "points"],
                "additionalProperties": False,
            },
            "eps": {"type": ["number", "null"], "exclusiveMinimum": 0},
            "omega": _OMEGA,
            "weighting": {"enum": ["counts", "balanced"]},
            "edge_threshold": {"type": "number", "exclusiveMinimum": 0},
            "overlay": {"type": "boolean"},
            "delta_at": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            "subspace": {
                "type": ["object", "null"],
                "properties": {
                    "interval": {"type": "array", "items": {"type": "number"},
                                 "minItems": 2, "maxItems": 2},
                    "quadrature_points": {"type": "integer", "minimum": 32},
                },
                "required": ["interval"],
                "additionalProperties": False,
            },
        },
        "required": ["model", "grid"],
        "additionalProperties": False,
    },
    "universality": {
        "type": "object",
        "properties": {
            "seed": _SEED,
            "k": {"type": "integer", "minimum": 1},
            "n_per_class": {"type": "integer", "minimum": 2},
            "trials": {"type": "integer", "minimum": 1},
            "network": _NETWORK,
            "bins": {"type": "integer", "minimum": 1},
        },
        "required": ["k", "n_per_class", "network"],
        "additionalProperties": False,
    },
    "specwalk": {
        "type": "object",
        "properties": {
            "seed": _SEED,
            "d0": {"type": "integer", "minimum": 1},
            "d1": {"type": "integer", "minimum": 1},
            "eta": {"type": "number", "exclusiveMinimum": 0},
            "sigma_star": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                           "minItems": 1},
            "iterations": {"type": "integer", "minimum": 1},
            "runs": {"type": "integer", "minimum": 1},
            "normalize": {"type": "boolean"},
            "epsilon": {"type": "number", "minimum": 0},
            "burnin_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            "network_layers": {"type": "integer", "minimum": 1},
        },
        "required": ["sigma_star"],
        "additionalProperties": False,
    },
    "deviation": {
        "type": "object",
        "properties": {
            "seed": _SEED,
            "model": _MODEL,
            "z": {"type": "number", "exclusiveMinimum": 0},
            "p_list": {"type": "array", "items": {"type": "integer", "minimum": 2},
                       "minItems": 1},
            "trials": {"type": "integer", "minimum": 1},
            "omega": _OMEGA,
        },
        "required": ["model", "p_list"],
        "additionalProperties": False,
    },
    "concentration": {
        "type": "object",
        "properties": {
            "seed": _SEED,
            "network": _NETWORK,
            "trials": {"type": "integer", "minimum": 1000},
            "directions": {"type": "integer", "minimum": 1},
            "t_grid": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0}},
            "class": {"type": ["integer", "null"], "minimum": 0},
        },
        "required": ["network"],
        "additionalProperties": False,
    },
    "ingest-compare": {
        "type": "object",
        "properties": {
            "seed": _SEED,
            "features": {"type": "string"},
            "labels": {"type": "string"},
            "trials": {"type": "integer", "minimum": 1},
            "bins": {"type": "integer", "minimum": 1},
        },
        "required": [],
        "additionalProperties": False,
    },
}

DEFAULTS = {
    "density": {"seed": 0, "eps": None, "omega": "hadamard", "weighting": "counts",
                "edge_threshold": 0.02, "overlay": False, "delta_at": [1.0],
                "subspace": None},
    "universality": {"seed": 0, "trials": 10, "bins": 50},
    "specwalk": {"seed": 0, "d0": 100, "d1": 100, "eta": 0.01, "iterations": 2000,
                 "runs": 1, "normalize": True, "epsilon": 0.05,
                 "burnin_fraction": 0.1, "network_layers": 1},
    "deviation": {"seed": 0, "z": 1.0, "trials": 200, "omega": "hadamard"},
    "concentration": {"seed": 0, "trials": 10000, "directions": 32, "t_grid": None,
                      "class": None},
    "ingest-compare": {"seed": 0, "trials": 10, "bins": 50},
}

MODEL_DEFAULTS = {"means": {"kind": "orthogonal", "kappa": 1.0},
                  "covariance": {"kind": "identity", "s": 1.0}, "kappa_max": 10.0}

NETWORK_DEFAULTS = {"widths": [], "heads": None, "sigma_star": 1.0, "residual": False,
                    "bias_scale": 0.0, "head_offset": 0.0, "scale": 1.0}


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_json(path) -> dict:
    """Parse a JSON file, reporting syntax errors with line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def resolve(command: str, raw: dict, seed: int | None = None) -> dict:
    """Merge defaults, apply a seed override and validate against the schema."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    cfg = _merge(DEFAULTS[command], raw)
    if "model" in cfg and isinstance(cfg["model"], dict):
        cfg["model"] = _merge(MODEL_DEFAULTS, cfg["model"])
    if "network" in cfg and isinstance(cfg["network"], dict):
        cfg["network"] = _merge(NETWORK_DEFAULTS, cfg["network"])
    if seed is not None:
        cfg["seed"] = int(seed)
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for err in errors:
            where = "/".join(str(x) for x in err.absolute_path) or "<root>"
            lines.append(f"{where}: {err.message}")
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))
    _check_semantics(command, cfg)
    return cfg


def _check_semantics(command, cfg):
    if command == "density" and cfg["subspace"] is not None:
        cfg["subspace"].setdefault("quadrature_points", 64)
        a, b = cfg["subspace"]["interval"]
        if not a < b:
            raise ConfigError("subspace/interval: need a < b")
    if "model" in cfg:
        m = cfg["model"]
        if command == "density" and "p" not in m:
            raise ConfigError("model: 'p' is required")
        if command == "density" and "n" not in m and "c" not in m and "counts" not in m:
            raise ConfigError("model: one of 'n', 'c' or 'counts' is required")
        if command == "deviation" and "c" not in m and "n" not in m:
            m["c"] = 1.0
        if "counts" in m and len(m["counts"]) != m["k"]:
            raise ConfigError(f"model/counts: expected {m['k']} entries")
        if isinstance(m["covariance"], list) and len(m["covariance"]) not in (1, m["k"]):
            raise ConfigError(f"model/covariance: list needs 1 or {m['k']} entries")
        if m["means"]["kind"] == "file" and "path" not in m["means"]:
            raise ConfigError("model/means: kind 'file' needs 'path'")
        if "k_max" in m and m["k"] > m["k_max"]:
            raise ConfigError(f"model/k: {m['k']} exceeds k_max {m['k_max']}")
    if command == "universality":
        net = cfg["network"]
        heads = net.get("heads")
        if heads is None or heads != cfg["k"]:
            raise ConfigError(
                f"network/heads: need one head per class (k={cfg['k']}), got {heads}"
            )
    if "network" in cfg:
        net = cfg["network"]
        if net["kind"] == "relu" and not net.get("widths"):
            raise ConfigError("network/widths: relu networks need at least one width")
        if "input_dim" not in net:
            raise ConfigError("network/input_dim is required")


# -- builders -----------------------------------------------------------------

def build_model(spec: dict, stream: RngStream, p: int | None = None) -> MixtureModel:
    """Mixture model from a resolved ``model`` record.

    The means use substream 0 of ``stream`` and covariance factories
    substream ``1 + l``.
    """
    p = int(spec["p"] if p is None else p)
    k = int(spec["k"])
    if "counts" in spec:
        counts = np.asarray(spec["counts"], dtype=np.int64)
    else:
        n = int(spec["n"]) if "n" in spec else int(round(p / float(spec["c"])))
        counts = balanced_counts(n, k)
    means_spec = spec["means"]
    if means_spec["kind"] == "orthogonal":
        means = orthogonal_means(p, k, float(means_spec.get("kappa", 1.0)),
                                 stream.substream(0))
    elif means_spec["kind"] == "zero":
        means = np.zeros((p, k))
    else:
        from .io import read_matrix
        means = read_matrix(means_spec["path"])
        if means.shape != (p, k):
            raise ConfigError(f"model/means: file holds {means.shape}, need {(p, k)}")
    cov_spec = spec["covariance"]
    cov_list = cov_spec if isinstance(cov_spec, list) else [cov_spec]
    if len(cov_list) == 1:
        cov_list = cov_list * k
    covs = []
    for l, c in enumerate(cov_list):
        params = {key: v for key, v in c.items() if key != "kind"}
        try:
            covs.append(make_covariance(c["kind"], p, stream.substream(1 + l), **params))
        except ContractError as exc:
            raise ConfigError(f"model/covariance/{l}: {exc}") from None
    model = MixtureModel.from_covariances(means, np.stack(covs), counts)
    model.validate(kappa_max=spec.get("kappa_max"), k_max=spec.get("k_max"))
    return model


def build_network(spec: dict, stream: RngStream) -> pf.LipschitzNetwork:
    """Network from a resolved ``network`` record.

    ``identity`` builds the identity map on ``input_dim`` (with ``heads``
    class heads that shift by ``+-head_offset`` along a seeded direction).
    ``relu`` builds :func:`pushforward.random_network`. ``scale`` multiplies
    the output.
    """
    d = int(spec["input_dim"])
    heads = spec.get("heads")
    if spec["kind"] == "identity":
        if heads:
            direction = stream.substream(0).generator().standard_normal(d)
            direction /= np.linalg.norm(direction)
            offsets = np.linspace(-1.0, 1.0, heads) if heads > 1 else np.zeros(1)
            net = pf.LipschitzNetwork(d, (), tuple(
                pf.Affine(np.eye(d), spec["head_offset"] * o * np.sqrt(d) * direction)
                for o in offsets))
        else:
            net = pf.identity_network(d)
    else:
        out = spec.get("output_dim")
        net = pf.random_network(
            d, spec["widths"], stream, sigma_star=spec.get("sigma_star"),
            heads=heads, output_dim=out, residual=spec["residual"],
            bias_scale=spec["bias_scale"],
        )
    if spec.get("scale", 1.0) != 1.0:
        net = net.scaled(float(spec["scale"]))
    return net
