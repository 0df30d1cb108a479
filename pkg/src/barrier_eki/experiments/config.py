"""Experiment configuration: defaults, strict merging, loading and hashing.

A configuration is a nested dict. User files are merged onto the defaults
and every key must already exist there, so typos fail loudly.
"""

import copy
import hashlib
import json
from pathlib import Path

from ..errors import ConfigError

DEFAULTS = {
    "name": "custom",
    "model": "heat1d",
    "heat1d": {"dx": 0.01, "dt": 0.05, "eps": 0.1},
    "darcy2d": {"n": 32, "f": 1.0, "k_obs": 50, "obs_seed": 0},
    "prior": {
        "sigma2": 10.0,
        "length_scale": 0.1,
        "r": 12,
        "tau": 0.01,
        "alpha": 2.0,
        "s": 25,
        "nugget": 1e-9,
    },
    "noise_std": 0.1,
    "truth_seed": 1,
    "noise_seed": 2,
    "ensemble": {"J": 10, "seed": 3, "pre_project": False, "shrink": 0.5},
    "constraint": {"kind": "norm-ball", "radius": "half_prior_norm_of_truth", "slack": 0.3,
                   "lower": None, "upper": None},
    "variant": "barrier-mean",
    "lambda": 0.01,
    "inflation": {"kind": "constant", "rho0": 0.8, "beta": 0.0},
    "penalty": {"kind": "constant", "tau0": 1e4},
    "integrator": {
        "method": "dopri5",
        "rtol": 1e-6,
        "atol": 1e-9,
        "t_final": 1e6,
        "checkpoints": 200,
        "t_first": 1e-2,
        "h0": None,
        "h_min": 1e-14,
        "h_max": None,
        "safety": 0.9,
        "max_halvings": 40,
        "max_steps": 10_000_000,
        "jac_every": 30,
    },
    "reference": {
        "enabled": True,
        "subspace": "auto",
        "tau_ladder": [1.0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6],
        "tol_grad": 1e-8,
        "method": "newton",
        "target": "auto",
    },
    "output": {"dir": None},
}

MODELS = ("heat1d", "darcy2d")
CONSTRAINT_KINDS = ("norm-ball", "box", "none")


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], val, where + ".")
        else:
            if isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must not be a mapping")
            out[key] = copy.deepcopy(val)
    return out


def make_config(overrides=None, base=None):
    """Merge ``overrides`` onto ``base`` (defaults when omitted) and validate.

    Raises
    ------
    ConfigError
        On unknown keys, type mismatches or invalid choices.
    """
    cfg = _merge(DEFAULTS if base is None else base, overrides or {})
    validate(cfg)
    return cfg


def validate(cfg):
    if cfg["model"] not in MODELS:
        raise ConfigError(f"model must be one of {MODELS}, got {cfg['model']!r}")
    if cfg["constraint"]["kind"] not in CONSTRAINT_KINDS:
        raise ConfigError(f"constraint.kind must be one of {CONSTRAINT_KINDS}")
    if cfg["constraint"]["kind"] == "norm-ball" and \
            cfg["constraint"]["radius"] != "half_prior_norm_of_truth":
        try:
            if float(cfg["constraint"]["radius"]) <= 0:
                raise ValueError
        except (TypeError, ValueError):
            raise ConfigError("constraint.radius must be 'half_prior_norm_of_truth' or a "
                              "positive number") from None
    if int(cfg["ensemble"]["J"]) < 2:
        raise ConfigError("ensemble.J must be at least 2")
    if cfg["reference"]["target"] not in ("auto", "u_tau", "u_star"):
        raise ConfigError("reference.target must be 'auto', 'u_tau' or 'u_star'")
    if cfg["reference"]["subspace"] not in ("auto", True, False):
        raise ConfigError("reference.subspace must be 'auto', true or false")
    for key in ("truth_seed", "noise_seed"):
        if not isinstance(cfg[key], int):
            raise ConfigError(f"{key} must be an integer")


def load_config(path):
    """Read a YAML or JSON file and merge it onto the defaults.

    A top-level ``preset`` key starts from that preset instead of the bare
    defaults.
    """
    import yaml

    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    base = None
    if "preset" in data:
        from .presets import get_preset

        data = dict(data)
        base = get_preset(data.pop("preset"))
    return make_config(data, base)


def config_hash(cfg):
    """SHA-256 of the canonical JSON form, ignoring the output directory."""
    c = copy.deepcopy(cfg)
    c["output"] = {"dir": None}
    blob = json.dumps(c, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
