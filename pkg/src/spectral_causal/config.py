"""Strict experiment configuration.

A configuration is a single JSON document.  Every field has a default; any
unknown field anywhere in the document is an error (nothing is silently
ignored).  See ``DEFAULTS`` for the full schema.
"""

from __future__ import annotations

import copy
import hashlib
import json

SETTINGS = ("iv", "ivoc", "pcl")

DEFAULTS = {
    "setting": "iv",
    "generator": {
        # linear_gaussian_iv, demand_design, discrete_toy, pcl_discrete
        "name": "linear_gaussian_iv",
        "params": {},
    },
    "rep": {
        # iv uses {"d": k}; ivoc/pcl use d_left/d_inst/d_cond/d_out
        "dims": {},
        # per-net hidden layer widths: iv keys phi/psi, conditioned keys
        # left/inst/cond/out
        "hidden": {},
        "final_activations": {},
        "batch_norm": False,
        "standardize": True,
        "exact_features": False,
    },
    "loss": "l2",
    "optimizer": {
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "epochs": 100,
        "batch_size": 256,
    },
    "regularizer": {
        "kind": "param_l2",
        "lambda_sweep": [1e-4, 1e-3, 1e-2],
    },
    "method": "closed_form",
    "solver": {
        "jitter": 1e-8,
        "gda_step": None,
        "gda_max_iters": 200000,
        "gda_tol": 1e-8,
    },
    "split_rep_estimation": False,
    "skip_treatment_factorization": False,
    "baseline_lambda": 1e-6,
    "n_train": 2000,
    "n_test": 1000,
    "unlabeled_n": 0,
    "pcl_effect_samples": 2000,
    "seed": 0,
    "replicates": 1,
    "replicate_subseeds": True,
}

_GENERATORS = ("linear_gaussian_iv", "demand_design", "discrete_toy", "pcl_discrete")
_FREEFORM_KEYS = {("generator", "params"), ("rep", "dims"), ("rep", "hidden"),
                  ("rep", "final_activations")}


class ConfigError(ValueError):
    """Invalid or unknown configuration field."""


def _merge(defaults, given, path):
    if not isinstance(given, dict):
        raise ConfigError(f"field {'.'.join(path) or '<root>'} must be an object")
    merged = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown config field {'.'.join([*path, key])!r}")
        if isinstance(defaults[key], dict) and tuple([*path, key]) not in _FREEFORM_KEYS:
            merged[key] = _merge(defaults[key], value, [*path, key])
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def validate_config(raw: dict) -> dict:
    """Merge a user config over the defaults, rejecting unknown fields and
    malformed values.  Returns the fully populated config dict."""
    cfg = _merge(DEFAULTS, raw, [])
    if cfg["setting"] not in SETTINGS:
        raise ConfigError(f"setting must be one of {SETTINGS}, got {cfg['setting']!r}")
    if cfg["generator"]["name"] not in _GENERATORS:
        raise ConfigError(
            f"generator.name must be one of {_GENERATORS}, got {cfg['generator']['name']!r}")
    if cfg["loss"] not in ("l2", "mle"):
        raise ConfigError(f"loss must be 'l2' or 'mle', got {cfg['loss']!r}")
    if cfg["method"] not in ("closed_form", "gda"):
        raise ConfigError(f"method must be 'closed_form' or 'gda', got {cfg['method']!r}")
    if cfg["regularizer"]["kind"] not in ("param_l2", "function_l2"):
        raise ConfigError(f"unknown regularizer.kind {cfg['regularizer']['kind']!r}")
    sweep = cfg["regularizer"]["lambda_sweep"]
    if not sweep or any(lam < 0 for lam in sweep):
        raise ConfigError("regularizer.lambda_sweep must be a nonempty list of "
                          "nonnegative values")
    for key in ("n_train", "n_test", "replicates"):
        if int(cfg[key]) < 1:
            raise ConfigError(f"{key} must be >= 1, got {cfg[key]}")
    if int(cfg["unlabeled_n"]) < 0:
        raise ConfigError(f"unlabeled_n must be >= 0, got {cfg['unlabeled_n']}")
    for key, value in cfg["rep"]["dims"].items():
        if int(value) < 1:
            raise ConfigError(f"rep.dims.{key} must be >= 1, got {value}")
    if int(cfg["optimizer"]["epochs"]) < 0:
        raise ConfigError("optimizer.epochs must be >= 0")
    if int(cfg["optimizer"]["batch_size"]) < 2:
        raise ConfigError("optimizer.batch_size must be >= 2")
    return cfg


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return validate_config(raw)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]
