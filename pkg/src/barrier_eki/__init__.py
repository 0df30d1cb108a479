"""Continuous-time ensemble Kalman inversion with log-barrier convex constraints."""

from ._kernels import BACKEND
from .constraints import (BoxBounds, ConstraintSet, ConvexConstraint, barrier_drift,
                          barrier_value, feasibility_margin, make_affine, make_box,
                          make_norm_ball, project_box)
from .dynamics import (FlowSpec, InflationSchedule, PenaltySchedule, eval_schedules,
                       mean_drift, rhs_centered, rhs_constrained, rhs_plain_eki)
from .ensemble import (AffineSubspace, Ensemble, EnsembleStats, compute_stats,
                       min_eigenvalue_on_span, spread, subspace_distance)
from .errors import *  # noqa: F401,F403
from .forward_models import (Darcy2DModel, Heat1DModel, KLPrior1D, KLPrior2D, build_darcy2d,
                             build_heat1d, make_box_from_truth, solve_darcy, synthesize_data)
from .integrator import IntegratorConfig, integrate, pre_project, solve_ode
from .linalg import SPDMatrix
from .potentials import (BarrierPotential, CallableModel, ForwardModel, LinearModel,
                         PseudolinearModel, RegularizedPotential, phi_barrier, phi_misfit,
                         phi_reg)
from .reference_solver import (best_barrier_minimizer, duality_gap_bound, kkt_residual,
                               solve_barrier, solve_constrained)

__version__ = "0.1.0"
