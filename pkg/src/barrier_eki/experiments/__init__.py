"""Experiment orchestration: configs, presets, runs, records and theory overlays."""

from .config import DEFAULTS, config_hash, load_config, make_config
from .presets import fixed_tau_variant, get_preset, preset_names
from .record import COLUMNS, TrajectoryRecord
from .runner import Problem, Reference, RunResult, build_problem, compute_reference, run_experiment
from .theory import (TheoryConstants, collapse_bound, collapse_bound_overlay, eigen_lower_bound,
                     grad_flow_error, grad_flow_error_scaling, loglog_slope, rate_estimate,
                     theory_constants)
