"""Interior-point reference solutions for comparison with the particle flows.

``solve_barrier`` minimizes ``phi_reg + barrier`` for one penalty ``tau``,
optionally restricted to an affine subspace. ``solve_constrained`` follows an
increasing ``tau`` ladder with warm starts and recovers the multipliers
``-1 / (tau h_j)``, whose duality gap is at most ``m / tau``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .ensemble import AffineSubspace
from .errors import InvalidInputError, InvalidStartError, PartialResultError
from .potentials import BarrierPotential, grad_phi_barrier, grad_phi_reg, phi_barrier, phi_reg

ARMIJO_C1 = 1e-4
DEFAULT_LADDER = (1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6)
_MAX_BACKTRACK = 60
_ROUNDOFF = 1e-14
# Newton stops when the gradient norm has not halved over this many iterations
_STALL_WINDOW = 50


@dataclass
class BarrierSolveResult:
    """Outcome of one barrier minimization.

    ``trace`` holds ``(objective, grad_norm)`` per iterate when requested.
    """

    minimizer: np.ndarray
    objective: float
    grad_norm: float
    iterations: int
    converged: bool
    tau: float = np.nan
    method: str = "newton"
    subspace: bool = False
    trace: list = field(default_factory=list)


@dataclass
class KKTReport:
    """KKT residuals of a candidate point and multipliers.

    ``multipliers_valid`` is false when some multiplier is negative; the
    residuals are computed regardless. ``projected`` marks a stationarity
    residual measured along a subspace basis only.
    """

    point: np.ndarray
    multipliers: np.ndarray
    stationarity_norm: float
    complementarity: float
    primal_feasibility: float
    multipliers_valid: bool = True
    projected: bool = False
    tau: float = np.nan
    stages: list = field(default_factory=list)


def _strictly_interior(cs, x):
    return cs.m == 0 or bool(np.all(cs.values(x) < -cs.eps))


def _barrier_hessian(bp, x, B, h_fd):
    """Hessian of ``phi_b`` in the coordinates ``x + B z`` at ``z = 0``."""
    pot, cs, tau = bp.base, bp.cs, bp.tau
    r = B.shape[1]
    H = np.empty((r, r))
    for k in range(r):
        e = h_fd * B[:, k]
        H[:, k] = B.T @ (grad_phi_reg(pot, x + e) - grad_phi_reg(pot, x - e)) / (2 * h_fd)
    if cs.m:
        hv = cs.values(x)
        GB = cs.gradients(x) @ B
        H += (GB.T * (1.0 / hv ** 2)) @ GB / tau
        H -= B.T @ cs.weighted_hessian_apply(x, 1.0 / hv, B) / tau
    return 0.5 * (H + H.T)


def _newton_direction(H, g):
    try:
        c = scipy.linalg.cho_factor(H, lower=True, check_finite=False)
        return -scipy.linalg.cho_solve(c, g, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        w, V = np.linalg.eigh(H)
        floor = 1e-8 * max(np.max(np.abs(w)), 1.0)
        return -(V @ ((V.T @ g) / np.maximum(np.abs(w), floor)))


def solve_barrier(bp, x0, subspace=None, tol_grad=1e-8, max_iter=100_000, method="newton",
                  trace=False, continuation=True):
    """Minimize ``bp`` from the strictly interior point ``x0``.

    Parameters
    ----------
    bp : BarrierPotential
    x0 : array_like
        Strictly interior start; projected onto ``subspace`` when one is given.
    subspace : AffineSubspace, optional
        Restrict iterates to ``offset + span(basis)``; the stopping test then
        uses the projected gradient ``basis^T grad``.
    tol_grad : float
        Stop once the (projected) gradient norm falls to this value.
    method : {"newton", "gradient"}
        ``"gradient"`` is steepest descent with Armijo backtracking from a
        Barzilai-Borwein trial step. ``"newton"``
        uses a finite-difference Hessian of the misfit part and the exact
        barrier Hessian, with the same backtracking. Both halve any trial step
        that leaves the strict interior.
    trace : bool
        Record ``(objective, grad_norm)`` at every iterate of the final solve.
    continuation : bool
        For ``"newton"`` with ``tau > 1``, first solve at ``tau = 1, 10, 100, ...``
        below the target and warm-start from each minimizer. A cold Newton start
        at large ``tau`` tends to stall against the boundary.

    Returns
    -------
    BarrierSolveResult
        ``converged`` is false if the iteration cap or a line-search stall was
        hit first.

    Raises
    ------
    InvalidStartError
        If ``x0`` is not strictly interior.
    """
    if method not in ("newton", "gradient"):
        raise InvalidInputError(f"unknown method {method!r}")
    cs = bp.cs
    x = np.array(x0, dtype=float, copy=True)
    if subspace is not None:
        x = subspace.project(x)
        B = subspace.basis
    else:
        B = np.eye(x.size)
    if not _strictly_interior(cs, x):
        raise InvalidStartError("starting point is not strictly feasible")
    used = 0
    if continuation and method == "newton" and cs.m and bp.tau > 1.0:
        t = 1.0
        while t < bp.tau:
            res = _minimize(BarrierPotential(bp.base, cs, t), x, B, tol_grad, max_iter, method,
                            False)
            used += res.iterations
            if res.converged:
                x = res.minimizer
            t *= 10.0
    res = _minimize(bp, x, B, tol_grad, max_iter, method, trace)
    res.iterations += used
    res.subspace = subspace is not None
    return res


def _minimize(bp, x, B, tol_grad, max_iter, method, trace):
    cs = bp.cs
    f = phi_barrier(bp, x)
    g = B.T @ grad_phi_barrier(bp, x)
    gnorm = float(np.linalg.norm(g))
    hist = [(f, gnorm)] if trace else []
    alpha_bb = 1.0
    it = 0
    best_window = [gnorm]
    while gnorm > tol_grad and it < max_iter:
        it += 1
        if method == "newton" and it % _STALL_WINDOW == 0:
            if gnorm > 0.5 * best_window[-1]:
                break  # no progress: round-off floor above tol_grad
            best_window.append(gnorm)
        if method == "newton":
            h_fd = 1e-5 * (1.0 + float(np.max(np.abs(x))))
            p = _newton_direction(_barrier_hessian(bp, x, B, h_fd), g)
            slope = float(g @ p)
            if not slope < 0:
                p, slope = -g, -gnorm ** 2
            alpha = 1.0
        else:
            p, slope = -g, -gnorm ** 2
            alpha = alpha_bb if it > 1 else 1.0 / max(gnorm, 1.0)
        slack = _ROUNDOFF * (abs(f) + 1.0)
        gt = None
        for _ in range(_MAX_BACKTRACK):
            xt = x + alpha * (B @ p)
            if _strictly_interior(cs, xt):
                ft = phi_barrier(bp, xt)
                if ft <= f + ARMIJO_C1 * alpha * slope:
                    break
                # objective differences are at round-off: fall back on the gradient norm
                if ft <= f + slack:
                    gt = B.T @ grad_phi_barrier(bp, xt)
                    if np.linalg.norm(gt) < gnorm:
                        break
                    gt = None
            alpha *= 0.5
        else:
            break  # line search stalled
        g_old = g
        x, f = xt, ft
        g = gt if gt is not None else B.T @ grad_phi_barrier(bp, x)
        # Barzilai-Borwein trial step for the next gradient iteration
        step, dg = alpha * p, g - g_old
        curv = float(step @ dg)
        alpha_bb = float(step @ step) / curv if curv > 0 else 2.0 * alpha
        alpha_bb = min(max(alpha_bb, 1e-12), 1e12)
        gnorm = float(np.linalg.norm(g))
        if trace:
            hist.append((f, gnorm))
    return BarrierSolveResult(x, f, gnorm, it, gnorm <= tol_grad, bp.tau, method, False, hist)


@dataclass
class MultiStartResult:
    """Best barrier minimizer over several starts.

    ``candidates`` lists ``(start_index, objective, converged)`` for every
    strictly interior start; infeasible starts are skipped.
    """

    best: BarrierSolveResult
    start_index: int
    candidates: list


def best_barrier_minimizer(bp, starts, subspace=None, tol_grad=1e-8, max_iter=100_000,
                           method="newton"):
    """Run :func:`solve_barrier` from every interior start and keep the lowest objective.

    Without strong convexity the barrier objective can have several local
    minimizers on a subspace; a single descent run then depends on its start.

    Raises
    ------
    InvalidStartError
        If no start is strictly interior after projection.
    """
    best, best_i, cands = None, -1, []
    for i, x0 in enumerate(starts):
        try:
            res = solve_barrier(bp, x0, subspace, tol_grad, max_iter, method)
        except InvalidStartError:
            continue
        cands.append((i, float(res.objective), bool(res.converged)))
        better = best is None or (res.converged, -res.objective) > (best.converged, -best.objective)
        if better:
            best, best_i = res, i
    if best is None:
        raise InvalidStartError("no start is strictly feasible")
    return MultiStartResult(best, best_i, cands)


def kkt_residual(pot, cs, u, multipliers, subspace=None):
    """KKT residuals of ``(u, multipliers)`` for ``min phi_reg s.t. h(u) <= 0``.

    ``stationarity_norm`` is ``||grad phi_reg + sum_j mult_j grad h_j||``,
    measured along ``subspace.basis`` when a subspace is given.
    """
    u = np.asarray(u, dtype=float)
    mult = np.atleast_1d(np.asarray(multipliers, dtype=float))
    if mult.size != cs.m:
        raise InvalidInputError(f"expected {cs.m} multipliers, got {mult.size}")
    stat = grad_phi_reg(pot, u)
    if cs.m:
        stat = stat + cs.weighted_gradient_sum(u, mult)
        hv = cs.values(u)
        comp = float(np.max(np.abs(mult * hv)))
        primal = float(np.max(hv))
    else:
        comp, primal = 0.0, -np.inf
    if subspace is not None:
        stat = subspace.basis.T @ stat
    return KKTReport(u, mult, float(np.linalg.norm(stat)), comp, primal,
                     bool(np.all(mult >= 0)), subspace is not None)


@dataclass(frozen=True)
class LadderStage:
    tau: float
    minimizer: np.ndarray
    phi_reg: float
    grad_norm: float
    iterations: int


def solve_constrained(pot, cs, x0, tau_ladder=DEFAULT_LADDER, subspace=None, tol_grad=1e-8,
                      method="newton", max_iter=100_000):
    """Approximate KKT point by warm-started barrier solves along ``tau_ladder``.

    Returns
    -------
    KKTReport
        At the last ladder stage, with multipliers ``-1/(tau h_j)`` and the
        per-stage minimizers in ``stages``.

    Raises
    ------
    PartialResultError
        If a stage does not converge; ``last_good`` is the previous stage.
    """
    taus = [float(t) for t in tau_ladder]
    if not taus or any(b <= a for a, b in zip(taus, taus[1:])) or taus[0] <= 0:
        raise InvalidInputError("tau ladder must be positive and strictly increasing")
    x = np.asarray(x0, dtype=float)
    stages = []
    for tau in taus:
        res = solve_barrier(BarrierPotential(pot, cs, tau), x, subspace, tol_grad, max_iter,
                            method)
        if not res.converged:
            raise PartialResultError(
                f"barrier stage tau={tau:g} stopped at grad norm {res.grad_norm:.3e}",
                last_good=stages[-1] if stages else None)
        x = res.minimizer
        stages.append(LadderStage(tau, x, phi_reg(pot, x), res.grad_norm, res.iterations))
    tau = taus[-1]
    mult = -1.0 / (tau * cs.values(x)) if cs.m else np.zeros(0)
    rep = kkt_residual(pot, cs, x, mult, subspace)
    rep.tau = tau
    rep.stages = stages
    return rep


def duality_gap_bound(cs, tau):
    """``m / tau``, the suboptimality bound of the barrier minimizer."""
    return cs.m / tau


def pl_violations(f, grad, f_star, mu, points, rtol=1e-10):
    """Count points where ``f(x) - f_star > ||grad f(x)||^2 / (2 mu)``."""
    bad = 0
    for x in points:
        lhs = f(x) - f_star
        rhs = float(np.sum(grad(x) ** 2)) / (2.0 * mu)
        if lhs > rhs + rtol * (abs(rhs) + 1.0):
            bad += 1
    return bad


def default_subspace(ensemble):
    """Affine hull of the ensemble when ``J <= d``, otherwise ``None`` (full space)."""
    return AffineSubspace.from_ensemble(ensemble) if ensemble.J <= ensemble.d else None
