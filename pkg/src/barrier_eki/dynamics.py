"""Right-hand sides of the EKI particle flows and their schedules.

For particle j the constrained flow is

    du_j/dt = - C_uG Gamma^{-1} (G(u_j) - y) - lam C C0^{-1} u_j
              + rho_t C_uG Gamma^{-1} (G(u_j) - mean G)
              + beta_t lam C C0^{-1} (u_j - mean u)
              + C b(mean u)

where ``b = barrier_drift(cs, ., tau_t)``. The inflation terms average to
zero over the ensemble, so the mean follows the uninflated drift.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .constraints import ConstraintSet, barrier_drift
from .errors import InvalidInputError

VARIANTS = ("plain-eki", "tikhonov-eki", "barrier-mean", "barrier-per-particle")
INFLATION_KINDS = ("constant", "log-increasing", "off")
PENALTY_KINDS = ("constant", "linear")

_RHO_MAX = 1.0 - 1e-12


@dataclass(frozen=True)
class InflationSchedule:
    """Inflation strength ``rho_t`` (and constant ``beta``).

    ``constant`` keeps ``rho0``; ``log-increasing`` uses
    ``1 - 1/log(t + e)``; ``off`` is zero.
    """

    kind: str = "off"
    rho0: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in INFLATION_KINDS:
            raise InvalidInputError(f"unknown inflation kind {self.kind!r}")
        if not (0.0 <= self.rho0 < 1.0) or not (0.0 <= self.beta < 1.0):
            raise InvalidInputError("rho0 and beta must lie in [0, 1)")

    def rho(self, t):
        if self.kind == "constant":
            return self.rho0
        if self.kind == "log-increasing":
            return min(max(1.0 - 1.0 / math.log(t + math.e), 0.0), _RHO_MAX)
        return 0.0


@dataclass(frozen=True)
class PenaltySchedule:
    """Barrier penalty: ``constant`` (``tau0``) or ``linear`` (``t + 1``)."""

    kind: str = "constant"
    tau0: float = 1.0

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise InvalidInputError(f"unknown penalty kind {self.kind!r}")
        if not self.tau0 > 0:
            raise InvalidInputError("tau0 must be positive")

    def tau(self, t):
        if self.kind == "linear":
            return t + 1.0
        return self.tau0


def eval_schedules(inflation, penalty, t):
    """``(rho_t, beta_t, tau_t)`` at flow time ``t >= 0``."""
    if t < 0:
        raise InvalidInputError("schedules are defined for t >= 0")
    return inflation.rho(t), inflation.beta, penalty.tau(t)


@dataclass(frozen=True)
class FlowSpec:
    """Everything the right-hand side needs besides the ensemble and time."""

    variant: str
    model: object
    lam: float = 0.0
    cs: ConstraintSet = field(default_factory=ConstraintSet)
    inflation: InflationSchedule = field(default_factory=InflationSchedule)
    penalty: PenaltySchedule = field(default_factory=PenaltySchedule)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"unknown variant {self.variant!r}")
        if self.is_barrier and self.cs.m < 1:
            raise InvalidInputError("barrier variants need at least one constraint")
        if self.lam < 0:
            raise InvalidInputError("lambda must be nonnegative")
        if self.lam > 0 and self.variant != "plain-eki" and self.model.C0 is None:
            raise InvalidInputError("regularized variants need C0 on the model")
        self.model._require_data()

    @property
    def is_barrier(self):
        return self.variant.startswith("barrier")

    @property
    def regularized(self):
        return self.variant != "plain-eki" and self.lam > 0


def _moments(U, spec):
    G = spec.model.apply_batch(U)
    return G, _kernels.ensemble_moments(np.ascontiguousarray(U), np.ascontiguousarray(G))


def rhs_array(U, spec, t):
    """Drift of every particle for a raw ``(J, d)`` array; see module docstring."""
    model = spec.model
    G, (mean_u, mean_g, Eu, Eg, cov, cross) = _moments(U, spec)
    if spec.variant == "plain-eki":
        return -(cross @ model.Gamma.solve((G - model.y).T)).T

    rho, beta, tau = eval_schedules(spec.inflation, spec.penalty, t)
    R = (G - model.y).T
    if rho:
        R = R - rho * Eg
    drift = -(cross @ model.Gamma.solve(R))
    if spec.regularized:
        X = U.T - beta * Eu if beta else U.T
        drift -= spec.lam * (cov @ model.C0.solve(X))
    if spec.variant == "barrier-mean":
        drift += (cov @ barrier_drift(spec.cs, mean_u, tau))[:, None]
    elif spec.variant == "barrier-per-particle":
        B = np.column_stack([barrier_drift(spec.cs, u, tau) for u in U])
        drift += cov @ B
    return drift.T


def rhs_plain_eki(ens, model):
    """``-C_uG Gamma^{-1} (G(u_j) - y)`` for every particle, shape ``(J, d)``."""
    return rhs_array(ens.particles, FlowSpec("plain-eki", model), 0.0)


def rhs_constrained(ens, spec, t):
    """Drift of every particle under ``spec`` at time ``t``, shape ``(J, d)``.

    Raises
    ------
    FeasibilityMarginError
        When a barrier is evaluated within the feasibility margin.
    """
    return rhs_array(ens.particles, spec, t)


def rhs_centered(ens, spec, t):
    """Drift of the centered particles ``u_j - mean u``, shape ``(J, d)``.

    Computed from its own closed form, so it can be checked against
    ``rhs - mean(rhs)``.
    """
    model = spec.model
    U = ens.particles
    G, (mean_u, mean_g, Eu, Eg, cov, cross) = _moments(U, spec)
    if spec.variant == "plain-eki":
        return -(cross @ model.Gamma.solve(Eg)).T
    rho, beta, tau = eval_schedules(spec.inflation, spec.penalty, t)
    drift = -(1.0 - rho) * (cross @ model.Gamma.solve(Eg))
    if spec.regularized:
        drift -= (1.0 - beta) * spec.lam * (cov @ model.C0.solve(Eu))
    if spec.variant == "barrier-per-particle":
        B = np.column_stack([barrier_drift(spec.cs, u, tau) for u in U])
        drift += cov @ (B - B.mean(axis=1, keepdims=True))
    return drift.T


def mean_drift(ens, spec, t):
    """Drift of the ensemble mean for the barrier-mean flow.

    ``-C_uG Gamma^{-1} (mean G - y) - lam C C0^{-1} mean u + C b(mean u)``,
    which does not involve the inflation schedule.
    """
    model = spec.model
    U = ens.particles
    G, (mean_u, mean_g, Eu, Eg, cov, cross) = _moments(U, spec)
    v = -cross @ model.Gamma.solve(mean_g - model.y)
    if spec.regularized:
        v -= spec.lam * (cov @ model.C0.solve(mean_u))
    if spec.is_barrier:
        _, _, tau = eval_schedules(spec.inflation, spec.penalty, t)
        v += cov @ barrier_drift(spec.cs, mean_u, tau)
    return v


def offspan_coupling(U, spec, t):
    """Coupling matrix ``S`` of perturbations orthogonal to the ensemble span.

    If every particle is perturbed by ``delta_l`` orthogonal to the span of
    the centered particles, the orthogonal part of the drift changes by
    ``sum_l S[j, l] delta_l`` to first order, with

        S[j, l] = (1/J) (e_l^T b_j - g_l^T Gamma^{-1} R_j - lam e_l^T C0^{-1} X_j).

    Here ``R_j`` and ``X_j`` are the inflated residual and state of particle j,
    and ``b_j`` is its barrier drift. Every other term of the Jacobian maps
    into the span.
    """
    model = spec.model
    J = U.shape[0]
    G, (mean_u, mean_g, Eu, Eg, cov, cross) = _moments(U, spec)
    # assembled as M[l, j], returned transposed
    if spec.variant == "plain-eki":
        return -(Eg.T @ model.Gamma.solve((G - model.y).T)).T / J
    rho, beta, tau = eval_schedules(spec.inflation, spec.penalty, t)
    R = (G - model.y).T - rho * Eg
    M = -(Eg.T @ model.Gamma.solve(R))
    if spec.regularized:
        M -= spec.lam * (Eu.T @ model.C0.solve(U.T - beta * Eu))
    if spec.variant == "barrier-mean":
        M += (Eu.T @ barrier_drift(spec.cs, mean_u, tau))[:, None]
    elif spec.variant == "barrier-per-particle":
        M += Eu.T @ np.column_stack([barrier_drift(spec.cs, u, tau) for u in U])
    return M.T / J
