"""Adaptive time stepping with a feasibility guard.

Two steppers share the step loop: explicit Dormand-Prince 5(4) (``"dopri5"``,
the default) and a linearly implicit Rosenbrock-W method of order two
(``"ros2w"``) for stiff barrier flows.

A step is accepted only if the embedded error estimate passes the mixed
tolerance and, for barrier flows, the proposed state is strictly feasible.
A step that fails feasibility (or whose stages hit the feasibility margin) is
halved and retried independently of the error controller.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import _kernels
from .constraints import project_box
from .dynamics import eval_schedules, offspan_coupling, rhs_array
from .ensemble import AffineSubspace, Ensemble
from .errors import (DivergenceError, FeasibilityMarginError, InvalidBoundsError,
                     InvalidInputError, StiffnessAbortError)

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# fifth-order minus embedded fourth-order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

_BETA = 0.04
_EXPO = 0.2 - 0.75 * _BETA
_GROW_MAX = 5.0
METHODS = ("dopri5", "ros2w")
_SHRINK_MIN = 0.1


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances, step bounds and checkpointing.

    ``h0=None`` selects the initial step automatically. Checkpoints are
    ``checkpoints`` log-spaced times from ``t_first`` to ``T`` (plus ``t=0``).
    ``method`` picks the stepper; ``jac_every`` is the Jacobian refresh
    interval (in accepted steps) for ``"ros2w"``.
    """

    T: float
    rtol: float = 1e-6
    atol: float = 1e-9
    h0: Optional[float] = None
    h_min: float = 1e-14
    h_max: float = math.inf
    safety: float = 0.9
    checkpoints: int = 200
    t_first: float = 1e-2
    max_halvings: int = 40
    max_steps: int = 10_000_000
    method: str = "dopri5"
    jac_every: int = 30

    def __post_init__(self):
        if not self.T > 0:
            raise InvalidInputError("T must be positive")
        if not (self.rtol > 0 and self.atol > 0):
            raise InvalidInputError("rtol and atol must be positive")
        if not 0 < self.safety < 1:
            raise InvalidInputError("safety must lie in (0, 1)")
        if not 0 < self.h_min <= self.h_max:
            raise InvalidInputError("need 0 < h_min <= h_max")
        if self.h0 is not None and not self.h_min <= self.h0 <= self.h_max:
            raise InvalidInputError("need h_min <= h0 <= h_max")
        if self.checkpoints < 1:
            raise InvalidInputError("need at least one checkpoint")
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown method {self.method!r}")
        if self.jac_every < 1:
            raise InvalidInputError("jac_every must be at least 1")

    def checkpoint_times(self):
        if self.T <= self.t_first or self.checkpoints == 1:
            ts = np.array([self.T])
        else:
            ts = np.logspace(math.log10(self.t_first), math.log10(self.T), self.checkpoints)
            ts[-1] = self.T
        return np.concatenate([[0.0], ts])


@dataclass(frozen=True)
class StepOutcome:
    accepted: bool
    t_new: float
    h_new: float
    reason: str  # "error-control" | "feasibility-reject" | "min-step"


@dataclass
class StepStats:
    accepted: int = 0
    rejected_error: int = 0
    rejected_feasibility: int = 0
    nfev: int = 0
    njev: int = 0

    def as_dict(self):
        return {"accepted": self.accepted, "rejected_error": self.rejected_error,
                "rejected_feasibility": self.rejected_feasibility, "nfev": self.nfev,
                "njev": self.njev}


@dataclass
class ODEResult:
    t: float
    y: np.ndarray
    stats: StepStats
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)


def _initial_step(fun, t0, y0, f0, rtol, atol, stats, order):
    """Hairer's starting step heuristic."""
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    try:
        f1 = fun(t0 + h0, y0 + h0 * f0)
        stats.nfev += 1
    except FeasibilityMarginError:
        return h0 * 1e-2
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if not np.isfinite(d2):
        return h0 * 1e-2
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / order)
    return min(100 * h0, h1)


class _Dopri5:
    """Dormand-Prince 5(4) stages with first-same-as-last reuse and PI control."""

    order = 5

    def __init__(self, fun, stats):
        self.fun = fun
        self.stats = stats
        self.f = None
        self.K = None

    def begin(self, t, y):
        self.f = self.fun(t, y)
        self.stats.nfev += 1
        self.K = np.empty((7, y.size))
        return self.f

    def attempt(self, t, y, h):
        K = self.K
        K[0] = self.f
        for s in range(1, 7):
            ys = y + h * (np.asarray(_A[s]) @ K[:s])
            K[s] = self.fun(t + _C[s] * h, ys)
            self.stats.nfev += 1
        return ys, h * (_E @ K), K  # last stage sits at the 5th-order solution

    def commit(self, t, y, extra):
        self.f = extra[6].copy()

    def rejected(self, t, y):
        pass

    @staticmethod
    def factor(err, err_old, safety):
        return safety * max(err, 1e-16) ** -_EXPO * err_old ** _BETA


_ROS_GAMMA = 1.0 + 1.0 / math.sqrt(2.0)


class _Ros2W:
    """Two-stage Rosenbrock-W method of order 2 (L-stable for exact Jacobians).

        (I - g h Jac) k1 = f(t, y)
        (I - g h Jac) k2 = f(t + h, y + h k1) - 2 k1
        y+ = y + 1.5 h k1 + 0.5 h k2,   g = 1 + 1/sqrt(2)

    Order two holds for any matrix in place of the Jacobian, so it is
    refreshed only every ``jac_every`` steps, after a rejection with a stale
    matrix, or when ``t`` has doubled. The difference to the embedded
    first-order solution ``y + h k1`` is passed through one more solve with
    the iteration matrix and serves as the error estimate.
    """

    order = 2

    def __init__(self, fun, stats, jacobian, jac_every):
        self.fun = fun
        self.stats = stats
        self.jac = jacobian
        self.jac_every = jac_every
        self.f = None
        self.age = 0
        self.t_jac = 0.0

    def _refresh(self, t, y):
        self.stats.nfev += self.jac.update(t, y, self.f)
        self.stats.njev += 1
        self.age = 0
        self.t_jac = t

    def begin(self, t, y):
        self.f = self.fun(t, y)
        self.stats.nfev += 1
        self._refresh(t, y)
        return self.f

    def attempt(self, t, y, h):
        solve = self.jac.factor(_ROS_GAMMA * h)
        k1 = solve(self.f)
        f1 = self.fun(t + h, y + h * k1)
        self.stats.nfev += 1
        k2 = solve(f1 - 2.0 * k1)
        # filtered through W so stiff components in quasi-equilibrium do not
        # dominate the first-order error estimate
        return y + 1.5 * h * k1 + 0.5 * h * k2, solve(0.5 * h * (k1 + k2)), None

    def commit(self, t, y, extra):
        self.f = self.fun(t, y)
        self.stats.nfev += 1
        self.age += 1
        if self.age >= self.jac_every or (self.t_jac > 0 and t >= 2.0 * self.t_jac) \
                or (self.t_jac == 0 and t > 0):
            self._refresh(t, y)

    def rejected(self, t, y):
        if self.age > 0:  # the matrix may be stale
            self._refresh(t, y)

    @staticmethod
    def factor(err, err_old, safety):
        return safety * max(err, 1e-16) ** -0.5


class DenseFDJacobian:
    """Forward-difference Jacobian of a small generic system."""

    def __init__(self, fun):
        self.fun = fun
        self.M = None

    def update(self, t, y, f0):
        n = y.size
        M = np.empty((n, n))
        for i in range(n):
            e = np.sqrt(np.finfo(float).eps) * max(1.0, abs(y[i]))
            yp = y.copy()
            yp[i] += e
            M[:, i] = (self.fun(t, yp) - f0) / e
        self.M = M
        return n

    def factor(self, hg):
        lu = scipy.linalg.lu_factor(np.eye(self.M.shape[0]) - hg * self.M, check_finite=False)
        return lambda v: scipy.linalg.lu_solve(lu, v, check_finite=False)


class EnsembleJacobian:
    """Jacobian of a particle flow split along the initial ensemble span.

    Perturbations inside the span are differenced numerically in subspace
    coordinates (``J r`` right-hand sides). Perturbations orthogonal to it
    only couple particles through :func:`~barrier_eki.dynamics.offspan_coupling`,
    which is applied exactly. The coupling from orthogonal into in-span
    directions is dropped, which the W-method tolerates.
    """

    def __init__(self, spec, J, d, basis):
        self.spec = spec
        self.J, self.d = J, d
        self.B = basis
        self.full = basis.shape[1] == d
        self.Ms = None
        self.S = None

    def update(self, t, y, f0):
        J, d, B = self.J, self.d, self.B
        r = B.shape[1]
        U = y.reshape(J, d)
        F0 = f0.reshape(J, d) @ B
        Ms = np.empty((J * r, J * r))
        evals = 0
        for l in range(J):
            step = np.sqrt(np.finfo(float).eps) * max(1.0, float(np.max(np.abs(U[l]))))
            for k in range(r):
                for sign in (1.0, -1.0):
                    Up = U.copy()
                    Up[l] += sign * step * B[:, k]
                    try:
                        Fp = rhs_array(Up, self.spec, t) @ B
                        evals += 1
                        break
                    except FeasibilityMarginError:
                        continue
                else:
                    raise FeasibilityMarginError("cannot difference the Jacobian inside the margin")
                Ms[:, l * r + k] = ((Fp - F0) / (sign * step)).ravel()
        self.Ms = Ms
        if not self.full:
            self.S = offspan_coupling(U, self.spec, t)
        return evals

    def factor(self, hg):
        J, d, B = self.J, self.d, self.B
        lu_s = None if self.Ms.size == 0 else \
            scipy.linalg.lu_factor(np.eye(self.Ms.shape[0]) - hg * self.Ms, check_finite=False)
        lu_o = None if self.full else scipy.linalg.lu_factor(np.eye(J) - hg * self.S,
                                                             check_finite=False)

        def solve(v):
            V = v.reshape(J, d)
            Vs = V @ B
            X = np.zeros_like(V)
            if lu_s is not None:
                Xs = scipy.linalg.lu_solve(lu_s, Vs.ravel(), check_finite=False)
                X += Xs.reshape(Vs.shape) @ B.T
            if lu_o is not None:
                X += scipy.linalg.lu_solve(lu_o, V - Vs @ B.T, check_finite=False)
            return X.ravel()

        return solve


def solve_ode(fun, y0, cfg, admissible=None, observer=None, diagnose=None, t0=0.0,
              jacobian=None):
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``cfg.T``.

    Parameters
    ----------
    fun : callable ``(t, y) -> dy``
        May raise :class:`FeasibilityMarginError`; the step is then halved.
    admissible : callable ``(t, y) -> bool``, optional
        Post-step acceptance test; failure halves the step.
    observer : callable ``(t, y, stats)``, optional
        Called at ``t0`` and at every checkpoint time.
    diagnose : callable ``(t, y) -> (margin, tau)``, optional
        Used to annotate stiffness aborts.
    jacobian : object, optional
        Jacobian provider for ``method="ros2w"``; defaults to
        :class:`DenseFDJacobian`.

    Returns
    -------
    ODEResult
        Final time and state, step statistics and checkpoint states.

    Raises
    ------
    StiffnessAbortError
        The step fell below ``h_min`` or feasibility needed more than
        ``max_halvings`` consecutive halvings.
    DivergenceError
        The state or its derivative became non-finite and could not be
        recovered by step reduction.
    """
    y = np.array(y0, dtype=float, copy=True)
    if not np.all(np.isfinite(y)):
        raise DivergenceError("initial state is not finite", t=t0)
    t = float(t0)
    stats = StepStats()
    out = ODEResult(t, y, stats)
    marks = [s for s in cfg.checkpoint_times() if s > t]
    if cfg.method == "dopri5":
        stepper = _Dopri5(fun, stats)
    else:
        stepper = _Ros2W(fun, stats, jacobian or DenseFDJacobian(fun), cfg.jac_every)

    def record(tt, yy):
        out.times.append(tt)
        out.states.append(yy.copy())
        if observer is not None:
            observer(tt, yy, stats)

    def abort(msg, tt, yy, divergent=False):
        if divergent:
            raise DivergenceError(msg, t=tt)
        margin, tau = diagnose(tt, yy) if diagnose is not None else (math.nan, math.nan)
        raise StiffnessAbortError(f"{msg} at t={tt:.6g} (margin={margin:.3e}, tau={tau:.3g})",
                                  t=tt, margin=margin, tau=tau)

    record(t, y)
    f = stepper.begin(t, y)
    if not np.all(np.isfinite(f)):
        raise DivergenceError("right-hand side is not finite at the initial state", t=t)
    h = cfg.h0 if cfg.h0 is not None else _initial_step(fun, t, y, f, cfg.rtol, cfg.atol,
                                                        stats, stepper.order)
    h = min(max(h, cfg.h_min), cfg.h_max)
    err_old = 1e-4
    halvings = 0
    last_rejected = False
    last_nonfinite = False
    mark_i = 0
    steps = 0

    while mark_i < len(marks):
        target = marks[mark_i]
        if steps >= cfg.max_steps:
            abort("step budget exhausted", t, y)
        steps += 1
        h_prop = h
        landing = t + 1.1 * h >= target
        h_try = target - t if landing else h
        if h_try < cfg.h_min or t + h_try == t:
            abort("step size below minimum", t, y, divergent=last_nonfinite)

        outcome = None
        try:
            y_new, err_vec, extra = stepper.attempt(t, y, h_try)
        except FeasibilityMarginError:
            outcome = "feasibility-reject"

        if outcome is None:
            if not (np.all(np.isfinite(err_vec)) and np.all(np.isfinite(y_new))):
                err = math.inf
                last_nonfinite = True
            else:
                err = _kernels.rms_error_norm(err_vec, y, y_new, cfg.atol, cfg.rtol)
                last_nonfinite = False
            if err > 1.0:
                outcome = "error-control"
            elif admissible is not None and not admissible(t + h_try, y_new):
                outcome = "feasibility-reject"

        if outcome == "feasibility-reject":
            stats.rejected_feasibility += 1
            halvings += 1
            if halvings > cfg.max_halvings:
                abort("feasibility not restored after repeated halving", t, y)
            h = 0.5 * h_try
            last_rejected = True
            continue
        if outcome == "error-control":
            stats.rejected_error += 1
            fac = _SHRINK_MIN if not math.isfinite(err) else \
                max(_SHRINK_MIN, cfg.safety * err ** (-1.0 / stepper.order))
            h = h_try * fac
            last_rejected = True
            stepper.rejected(t, y)
            continue

        # accepted
        stats.accepted += 1
        halvings = 0
        fac = min(max(stepper.factor(err, err_old, cfg.safety), _SHRINK_MIN), _GROW_MAX)
        if last_rejected:
            fac = min(fac, 1.0)
        err_old = max(err, 1e-4)
        h_next = h_try * fac
        if landing:
            h_next = max(h_next, min(h_prop, h_next * _GROW_MAX))
        h = min(h_next, cfg.h_max)
        last_rejected = False
        t = target if landing else t + h_try
        y = y_new
        stepper.commit(t, y, extra)
        if landing:
            record(t, y)
            mark_i += 1

    out.t, out.y = t, y
    return out


@dataclass
class IntegrationResult:
    ensemble: Ensemble
    t: float
    stats: StepStats
    times: list
    snapshots: list


def _feasible(spec, U):
    cs = spec.cs
    if spec.variant == "barrier-per-particle":
        return all(np.all(cs.values(u) < -cs.eps) for u in U)
    return bool(np.all(cs.values(U.mean(axis=0)) < -cs.eps))


def integrate(ens0, spec, cfg, observer=None):
    """Integrate the particle flow ``spec`` from ``ens0`` up to ``cfg.T``.

    The state is the flat concatenation of all particles. ``observer`` is
    called as ``observer(t, ensemble, stats)`` at ``t=0`` and every checkpoint.

    Raises
    ------
    InvalidInputError
        Barrier flow started from a mean (or particle) that is not strictly
        interior.
    StiffnessAbortError, DivergenceError
        See :func:`solve_ode`.
    """
    J, d = ens0.J, ens0.d
    if spec.is_barrier and not _feasible(spec, ens0.particles):
        raise InvalidInputError("initial ensemble is not strictly feasible; pre-project it first")

    def fun(t, y):
        return rhs_array(y.reshape(J, d), spec, t).ravel()

    admissible = None
    if spec.is_barrier:
        def admissible(t, y):
            return _feasible(spec, y.reshape(J, d))

    def diagnose(t, y):
        U = y.reshape(J, d)
        margin = float(np.max(spec.cs.values(U.mean(axis=0)))) if spec.cs.m else -math.inf
        return margin, eval_schedules(spec.inflation, spec.penalty, t)[2]

    obs = None
    if observer is not None:
        def obs(t, y, stats):
            observer(t, Ensemble(y.reshape(J, d)), stats)

    jac = None
    if cfg.method == "ros2w":
        basis = AffineSubspace.from_ensemble(ens0).basis if J > 1 else np.zeros((d, 0))
        jac = EnsembleJacobian(spec, J, d, basis)
    res = solve_ode(fun, ens0.flat(), cfg, admissible, obs, diagnose, jacobian=jac)
    snaps = [s.reshape(J, d) for s in res.states]
    return IntegrationResult(Ensemble(res.y.reshape(J, d)), res.t, res.stats, res.times, snaps)


def pre_project(ens, bounds, shrink):
    """Clamp every particle into the box, then pull it toward the box center.

    ``u <- P(u) + shrink * (center - P(u))`` on constrained components.

    Raises
    ------
    InvalidBoundsError
        For a degenerate box or ``shrink`` outside ``[0, 1)``.
    """
    if not 0.0 <= shrink < 1.0:
        raise InvalidBoundsError("shrink must lie in [0, 1)")
    if not np.all(bounds.lower < bounds.upper):
        raise InvalidBoundsError("degenerate box")
    P = project_box(bounds, ens.particles)
    idx = bounds.indices
    P[:, idx] += shrink * (bounds.center - P[:, idx])
    return Ensemble(P)
