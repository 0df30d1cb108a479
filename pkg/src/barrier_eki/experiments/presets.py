"""Named experiment presets at full and desk scale.

Full-scale presets run to the long horizons (T up to 1e6). Desk-scale
presets shorten the horizon (and the Darcy mesh) so that the acceptance suite
runs in minutes.
"""

import copy

from ..errors import ConfigError
from .config import make_config

_PSEUDOLINEAR = {
    "name": "pseudolinear",
    "model": "heat1d",
    # smallest decade of eps for which lambda = 0.01 clears the strong-convexity threshold
    "heat1d": {"dx": 0.01, "dt": 0.05, "eps": 0.01},
    "prior": {"sigma2": 10.0, "length_scale": 0.1, "r": 12},
    "constraint": {"kind": "norm-ball", "radius": "half_prior_norm_of_truth"},
    "variant": "barrier-mean",
    "lambda": 0.01,
    "inflation": {"kind": "constant", "rho0": 0.8},
    "penalty": {"kind": "constant", "tau0": 1e4},
    "integrator": {"method": "ros2w", "t_final": 1e6},
}

_DARCY = {
    "name": "darcy",
    "model": "darcy2d",
    "darcy2d": {"n": 32, "f": 1.0, "k_obs": 50, "obs_seed": 0},
    "prior": {"tau": 0.01, "alpha": 2.0, "s": 25},
    "constraint": {"kind": "box", "slack": 0.3},
    "ensemble": {"pre_project": True},
    "variant": "barrier-mean",
    "lambda": 0.01,
    "inflation": {"kind": "constant", "rho0": 0.8},
    "penalty": {"kind": "constant", "tau0": 1e4},
    "integrator": {"method": "ros2w", "t_final": 1e6},
}

_ADAPTIVE = {
    **copy.deepcopy(_DARCY),
    "name": "adaptive-tau",
    "darcy2d": {"n": 6, "f": 1.0, "k_obs": 50, "obs_seed": 0},
    "inflation": {"kind": "constant", "rho0": 0.7},
    "penalty": {"kind": "linear", "tau0": 1.0},
    # not stiff on this mesh; the explicit pair is far cheaper than ros2w here
    "integrator": {"method": "dopri5", "t_final": 1e5},
    "reference": {"target": "u_star"},
}

_NORM_BALL_CONTROL = {
    **copy.deepcopy(_PSEUDOLINEAR),
    "name": "norm-ball-control",
    "variant": "plain-eki",
    "lambda": 0.0,
    "inflation": {"kind": "off", "rho0": 0.0},
}

FULL = {
    "pseudolinear": _PSEUDOLINEAR,
    "pseudolinear-log": {**copy.deepcopy(_PSEUDOLINEAR), "name": "pseudolinear-log",
                         "inflation": {"kind": "log-increasing", "rho0": 0.0}},
    "darcy": _DARCY,
    "adaptive-tau": _ADAPTIVE,
    "norm-ball-control": _NORM_BALL_CONTROL,
}

# horizons and meshes used by ``verify``
DESK = {
    "pseudolinear": {"integrator": {"t_final": 1e4}},
    "pseudolinear-log": {"integrator": {"t_final": 1e4}},
    "darcy": {"darcy2d": {"n": 8}, "integrator": {"t_final": 1e3}},
    "adaptive-tau": {"integrator": {"t_final": 1e4}},
    "norm-ball-control": {"integrator": {"t_final": 1e4}},
}

DESCRIPTIONS = {
    "pseudolinear": "1-D heat source (eps=0.01), norm-ball constraint, tau=1e4, lambda=0.01, rho=0.8",
    "pseudolinear-log": "as pseudolinear with rho_t = 1 - 1/log(t + e)",
    "darcy": "2-D Darcy on a 32x32 mesh, box from truth (slack 0.3), tau=1e4, rho=0.8",
    "adaptive-tau": "2-D Darcy on a 6x6 mesh, rho=0.7, tau(t) = t + 1",
    "norm-ball-control": "pseudolinear problem integrated by plain EKI (no barrier)",
}


def preset_names():
    return tuple(FULL)


def get_preset(name, /, desk=False, **overrides):
    """Validated configuration for preset ``name``.

    ``desk=True`` applies the shortened horizon; keyword ``overrides`` are
    merged last (nested dicts allowed).
    """
    if name not in FULL:
        raise ConfigError(f"unknown preset {name!r}; choose from {preset_names()}")
    cfg = make_config(FULL[name])
    if desk:
        cfg = make_config(DESK[name], base=cfg)
    if overrides:
        cfg = make_config(overrides, base=cfg)
    return cfg


def fixed_tau_variant(cfg, tau):
    """Copy of ``cfg`` with a constant penalty ``tau``."""
    return make_config({"name": f"{cfg['name']}-tau{tau:g}",
                        "penalty": {"kind": "constant", "tau0": float(tau)}}, base=cfg)
