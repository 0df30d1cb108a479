"""Acceptance checks A1-A15 at desk scale.

Each ``check_*`` function takes a :class:`RunCache` (so that experiment runs
shared between checks are integrated once) and returns a :class:`CheckResult`.
:func:`run_acceptance` runs a selection and :func:`format_table` renders the
pass/fail table printed by ``barrier-eki verify``.
"""

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from ..constraints import barrier_drift, barrier_value, feasibility_margin, make_affine
from ..dynamics import (FlowSpec, InflationSchedule, PenaltySchedule, mean_drift,
                       rhs_constrained)
from ..ensemble import Ensemble, compute_stats
from ..errors import BarrierEKIError, UndefinedRateError
from ..forward_models import build_darcy2d
from ..integrator import IntegratorConfig, solve_ode
from ..potentials import (BarrierPotential, LinearModel, RegularizedPotential,
                          check_strong_convexity_pseudolinear, fd_gradient, grad_phi_barrier,
                          grad_phi_reg, phi_barrier, phi_reg)
from ..reference_solver import pl_violations, solve_barrier
from .config import config_hash
from .presets import fixed_tau_variant, get_preset
from .runner import build_problem, run_experiment
from .theory import collapse_bound_overlay, grad_flow_error_scaling, rate_estimate

FIXED_TAUS = (1.0, 10.0, 100.0, 1000.0, 10000.0)
FD_POINTS = 100
FD_RTOL = 1e-5


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one acceptance criterion."""

    name: str
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<4} {status}  {self.title}: {self.detail}"


class RunCache:
    """Memoizes :func:`run_experiment` by configuration hash."""

    def __init__(self, outdir=None):
        self.outdir = outdir
        self._runs = {}

    def run(self, cfg):
        key = config_hash(cfg)
        if key not in self._runs:
            out = None if self.outdir is None else f"{self.outdir}/{cfg['name']}-{key[:8]}"
            self._runs[key] = run_experiment(cfg, outdir=out)
        return self._runs[key]

    def preset(self, preset, /, desk=True, **overrides):
        return self.run(get_preset(preset, desk=desk, **overrides))

    def __len__(self):
        return len(self._runs)


# named runs shared between checks

def _pseudolinear(cache):
    return cache.preset("pseudolinear")


def _pseudolinear_eps01(cache):
    return cache.preset("pseudolinear", name="pseudolinear-eps0.1", heat1d={"eps": 0.1})


def _adaptive_family(cache):
    base = get_preset("adaptive-tau", desk=True)
    adaptive = cache.run(base)
    fixed = [cache.run(fixed_tau_variant(base, tau)) for tau in FIXED_TAUS]
    return adaptive, fixed


def _barrier_runs(cache):
    runs = [_pseudolinear(cache), cache.preset("pseudolinear-log"), cache.preset("darcy"),
            _pseudolinear_eps01(cache)]
    adaptive, fixed = _adaptive_family(cache)
    return runs + [adaptive] + fixed


def _fmt(x):
    return f"{x:.3g}"


# -- criteria ---------------------------------------------------------------------


def check_a1(cache):
    run = _pseudolinear(cache)
    ov = collapse_bound_overlay(run.record, run.constants)
    ov_p = collapse_bound_overlay(run.record, run.constants, run.constants.sigma_provable)
    ok = run.record.completed and ov.violations == 0 and run.elapsed <= 120.0
    detail = (f"violations={ov.violations}/{ov.t.size} (max V/bound {_fmt(ov.max_ratio)}), "
              f"with sigma=lam(1-beta)/sigma_max: {ov_p.violations}; "
              f"runtime {run.elapsed:.1f}s <= 120s")
    return ok, detail


def check_a2(cache):
    parts, ok = [], True
    for name in ("pseudolinear", "pseudolinear-log"):
        run = cache.preset(name, desk=False)
        try:
            s = rate_estimate(run.record)
        except UndefinedRateError as exc:
            s, good = math.nan, False
            parts.append(f"{name}: {exc}")
        else:
            good = -1.15 <= s <= -0.85
            parts.append(f"{name} slope {s:.3f} (T={run.config['integrator']['t_final']:g})")
        ok &= good and run.record.completed
    return ok, "; ".join(parts) + " in [-1.15, -0.85]"


def check_a3(cache):
    bad, total = [], 0
    for run in _barrier_runs(cache):
        m = run.record.array("margin")
        total += m.size
        if not run.record.completed or not np.all(m < 0):
            bad.append(run.config["name"])
    if bad:
        return False, f"infeasible or aborted: {', '.join(bad)}"
    return True, f"margin < 0 at all {total} checkpoints of {len(_barrier_runs(cache))} runs"


def check_a4(cache):
    worst, name = 0.0, ""
    for run in _barrier_runs(cache) + [cache.preset("norm-ball-control")]:
        if run.problem.ens0.J >= run.problem.model.d:
            continue
        v = float(np.max(run.record.array("subspace_dist")))
        if v > worst:
            worst, name = v, run.config["name"]
    return worst <= 1e-8, f"max relative subspace distance {_fmt(worst)} ({name}) <= 1e-8"


def _one_d_problem():
    model = LinearModel(np.eye(1), y=np.zeros(1), Gamma=np.eye(1), C0=np.eye(1))
    pot = RegularizedPotential(model, 0.0)
    cs = make_affine(np.array([[-1.0]]), np.array([1.0]))
    return pot, cs, np.array([2.0]), np.array([1.0])


def _quadratic_5d(seed=0):
    rng = np.random.default_rng(seed)
    d = 5
    A = rng.standard_normal((d, d)) + 2.0 * np.eye(d)
    y = 3.0 * rng.standard_normal(d)
    model = LinearModel(A, y=y, Gamma=np.eye(d), C0=np.eye(d))
    pot = RegularizedPotential(model, 1.0)
    C = rng.standard_normal((3, d))
    cs = make_affine(C, -np.ones(3))
    # independent QP oracle
    H = A.T @ A + np.eye(d)
    g = -A.T @ y
    res = scipy.optimize.minimize(
        lambda u: 0.5 * u @ H @ u + g @ u, np.zeros(d), jac=lambda u: H @ u + g,
        method="SLSQP",
        constraints=[{"type": "ineq", "fun": lambda u: -(C @ u - 1.0), "jac": lambda u: -C}],
        options={"ftol": 1e-15, "maxiter": 1000})
    return pot, cs, np.zeros(d), res.x


def check_a5(cache):
    worst, parts, ok = -math.inf, [], True
    for label, (pot, cs, x0, u_star) in (("1d", _one_d_problem()), ("5d", _quadratic_5d())):
        f_star = phi_reg(pot, u_star)
        for tau in (1.0, 10.0, 100.0, 1000.0):
            r = solve_barrier(BarrierPotential(pot, cs, tau), x0, tol_grad=1e-12)
            excess = phi_reg(pot, r.minimizer) - f_star - cs.m / tau
            worst = max(worst, excess)
            ok &= r.converged and excess <= 1e-6
            if label == "1d":
                closed = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 / tau))
                dev = abs(r.minimizer[0] - closed)
                ok &= dev <= 1e-6
                parts.append(f"tau={tau:g} |u-closed|={_fmt(dev)}")
    return ok, f"max gap - m/tau = {_fmt(worst)} <= 1e-6; 1d " + ", ".join(parts)


def check_a6(cache):
    run = _pseudolinear(cache)
    ref = run.reference
    rec = run.record
    err = rec.array("err_param")
    rel = err[-1] / np.linalg.norm(ref.u_tau)
    t = rec.array("t")
    last = err[t >= t[-1] / 10.0]
    mono = bool(np.all(np.diff(last) <= 0.0))
    ok = rec.completed and ref.subspace and rel <= 1e-2 and mono
    return ok, (f"||mean - u_tau||/||u_tau|| = {_fmt(rel)} <= 1e-2 (subspace reference "
                f"{ref.subspace}); monotone over last decade: {mono}")


def check_a7(cache):
    run = _pseudolinear_eps01(cache)
    rec = run.record
    fit = grad_flow_error_scaling(rec.array("gf_err"), rec.array("V_e"), _misfit(run))
    lin = cache.preset("pseudolinear", name="linear-check", heat1d={"eps": 0.0},
                       integrator={"t_final": 100.0})
    lin_max = float(np.max(lin.record.array("gf_err")))
    ok = fit.exponent >= 1.3 and math.isfinite(fit.max_ratio) and lin_max <= 1e-10
    return ok, (f"eps=0.1 exponent {fit.exponent:.3f} >= 1.3, max ratio {_fmt(fit.max_ratio)}; "
                f"linear model max Err {_fmt(lin_max)} <= 1e-10")


def _misfit(run):
    """Data misfit of the mean at every checkpoint (``phi_reg`` minus its prior term)."""
    rec = run.record
    lam = float(run.config["lambda"])
    return rec.array("phi_reg") - lam * rec.array("mean_norm_c0")


def check_a8(cache):
    p = build_problem(get_preset("pseudolinear", desk=True))
    rng = np.random.default_rng(8)
    J = p.ens0.J
    worst, states = 0.0, 0
    while states < 5:
        # random row-stochastic mixing keeps the mean near the feasible initial mean
        W = 0.7 * np.eye(J) + 0.3 * rng.dirichlet(np.ones(J), size=J)
        ens = Ensemble(W @ p.ens0.particles)
        if feasibility_margin(p.cs, ens.mean) >= 0:
            continue
        t = float(states)
        drifts = []
        for rho in (0.0, 0.8):
            spec = FlowSpec("barrier-mean", p.model, 0.01, p.cs, InflationSchedule("constant", rho),
                            PenaltySchedule("constant", 1e4))
            drifts.append(rhs_constrained(ens, spec, t).mean(axis=0))
        ref = mean_drift(ens, spec, t)
        scale = np.linalg.norm(drifts[0])
        worst = max(worst, np.linalg.norm(drifts[1] - drifts[0]) / scale,
                    np.linalg.norm(drifts[0] - ref) / scale)
        states += 1
    return worst <= 1e-12, (f"max relative difference of mean drifts {_fmt(worst)} <= 1e-12 "
                            f"at {states} feasible states")


def closed_form_ode(t, x, a=0.5, b=1.0, c=2.0):
    return -(a / (t + b)) * x - c * x * x


def check_a9(cache):
    cfg = IntegratorConfig(T=10.0, t_first=0.1, checkpoints=3)
    res = solve_ode(closed_form_ode, np.array([0.25]), cfg)
    errs = {t: abs(y[0] - 0.25 / (t + 1.0)) for t, y in zip(res.times, res.states) if t > 0}
    ok = sorted(errs) == [0.1, 1.0, 10.0] and max(errs.values()) <= 1e-6
    return ok, ", ".join(f"|x({t:g}) - 0.25/(t+1)| = {_fmt(e)}" for t, e in errs.items())


def check_a10(cache):
    p = build_problem(get_preset("pseudolinear", desk=True))
    m = p.model
    B = math.sqrt(2.0 * p.radius * m.C0.max_eig)
    lam = 0.01
    rep = check_strong_convexity_pseudolinear(m.A, m.eps, lam, m.y, B, n_sample=100, seed=10)
    lam_low = 0.5 * rep.threshold - m.eps ** 2
    low = check_strong_convexity_pseudolinear(m.A, m.eps, max(lam_low, 0.0), m.y, B,
                                              n_sample=100, seed=10)
    ok = rep.satisfied and rep.sampled_min_hessian_eig > 0
    return ok, (f"threshold {_fmt(rep.threshold)} < lam={lam:g}: min eig "
                f"{_fmt(rep.sampled_min_hessian_eig)} > 0; reported only: lam={_fmt(lam_low)} "
                f"gives min eig {_fmt(low.sampled_min_hessian_eig)}")


def check_a11(cache):
    rng = np.random.default_rng(11)
    bad = total = 0
    for d in (2, 5, 20):
        Q = rng.standard_normal((d, d))
        Q = Q @ Q.T + 0.1 * np.eye(d)
        mu = float(np.linalg.eigvalsh(Q)[0])
        xs = rng.standard_normal(d)

        def f(x, Q=Q, xs=xs):
            return 0.5 * (x - xs) @ Q @ (x - xs)

        def g(x, Q=Q, xs=xs):
            return Q @ (x - xs)

        pts = xs + 3.0 * rng.standard_normal((1000, d))
        bad += pl_violations(f, g, 0.0, mu, pts)
        total += len(pts)
    return bad == 0, f"{bad} violations at {total} points on 3 quadratics"


def _interior_points(p, count, seed):
    """Seeded points of the norm ball at random fractions of its radius."""
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(p.model.C0.matrix)
    out = []
    for _ in range(count):
        u = L @ rng.standard_normal(p.model.d)
        level = rng.uniform(0.05, 0.9) * p.radius
        out.append(u * math.sqrt(level / (0.5 * p.model.C0.quad(u))))
    return out


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def check_a14(cache):
    p = build_problem(get_preset("pseudolinear", desk=True))
    pot = RegularizedPotential(p.model, 0.01)
    bp = BarrierPotential(pot, p.cs, 10.0)
    # the norm-ball constraint curves on the length scale sqrt(sigma_min(C0))
    step = min(1e-6, 1e-4 * math.sqrt(p.model.C0.min_eig))
    worst = {"phi_reg": 0.0, "phi_b": 0.0, "barrier_drift": 0.0, "heat1d_jacobian": 0.0}
    for u in _interior_points(p, FD_POINTS, 14):
        fd = fd_gradient(lambda x: phi_reg(pot, x), u, step)
        worst["phi_reg"] = max(worst["phi_reg"], _rel(grad_phi_reg(pot, u), fd))
        fd = fd_gradient(lambda x: phi_barrier(bp, x), u, step)
        worst["phi_b"] = max(worst["phi_b"], _rel(grad_phi_barrier(bp, u), fd))
        fd = -fd_gradient(lambda x: barrier_value(p.cs, x, 10.0), u, step)
        worst["barrier_drift"] = max(worst["barrier_drift"], _rel(barrier_drift(p.cs, u, 10.0), fd))
        fd = _fd_jacobian(p.model, u, step)
        worst["heat1d_jacobian"] = max(worst["heat1d_jacobian"], _rel(p.model.jacobian(u), fd))
    ok = max(worst.values()) <= FD_RTOL
    return ok, (", ".join(f"{k} {_fmt(v)}" for k, v in worst.items())
                + f" <= {FD_RTOL:g} at {FD_POINTS} points (step {_fmt(step)})")


def _fd_jacobian(model, u, rel_step=1e-6):
    cols = []
    for i in range(u.size):
        h = rel_step * (1.0 + abs(u[i]))
        e = np.zeros(u.size)
        e[i] = h
        cols.append((model.apply(u + e) - model.apply(u - e)) / (2.0 * h))
    return np.column_stack(cols)


def double_sum_stats(U, G):
    """Mean, covariance and cross-covariance by explicit loops over particles."""
    J, d = U.shape
    K = G.shape[1]
    mu = [sum(U[j, a] for j in range(J)) / J for a in range(d)]
    mg = [sum(G[j, k] for j in range(J)) / J for k in range(K)]
    cov = np.array([[sum((U[j, a] - mu[a]) * (U[j, b] - mu[b]) for j in range(J)) / J
                     for b in range(d)] for a in range(d)])
    cross = np.array([[sum((U[j, a] - mu[a]) * (G[j, k] - mg[k]) for j in range(J)) / J
                       for k in range(K)] for a in range(d)])
    return np.array(mu), np.array(mg), cov, cross


def poisson_center_series(terms=4001):
    """``p(1/2, 1/2)`` for ``-lap p = 1`` on the unit square by double sine series."""
    k = np.arange(1, terms + 1, 2, dtype=float)
    s = np.where(((k - 1) / 2) % 2 == 0, 1.0, -1.0)
    M, N = np.meshgrid(k, k, indexing="ij")
    S = np.outer(s, s)
    return float(np.sum(16.0 * S / (np.pi ** 4 * M * N * (M * M + N * N))))


def dopri_order(rtols=(1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10), T=10.0):
    """Slope of ``-log err`` against ``log steps`` on the closed-form test ODE."""
    errs, steps = [], []
    for rt in rtols:
        res = solve_ode(closed_form_ode, np.array([0.25]),
                        IntegratorConfig(T=T, rtol=rt, atol=1e-3 * rt, checkpoints=1))
        errs.append(abs(res.y[0] - 0.25 / (T + 1.0)))
        steps.append(res.stats.accepted)
    return -float(np.polyfit(np.log(steps), np.log(errs), 1)[0])


def check_a15(cache):
    rng = np.random.default_rng(15)
    U = rng.standard_normal((7, 4))
    G = np.column_stack([U @ rng.standard_normal(4), np.sin(U).sum(axis=1), U[:, 0] ** 2])
    st = compute_stats(Ensemble(U), G)
    mu, mg, cov, cross = double_sum_stats(U, G)
    stat_err = max(np.max(np.abs(st.mean - mu)), np.max(np.abs(st.mean_G - mg)),
                   np.max(np.abs(st.cov - cov)), np.max(np.abs(st.cross_cov - cross)))
    model = build_darcy2d(32)
    pc = float(model.pressure_at(np.zeros(model.d), [[0.5, 0.5]])[0])
    pref = poisson_center_series()
    order = dopri_order()
    ok = stat_err <= 1e-12 and abs(pc - pref) <= 2e-3 and order >= 4.0
    return ok, (f"stats vs double sum {_fmt(stat_err)} <= 1e-12; center pressure {pc:.6f} vs "
                f"{pref:.6f} (diff {_fmt(abs(pc - pref))} <= 2e-3); DOPRI order {order:.2f} >= 4")


def check_a12(cache):
    adaptive, fixed = _adaptive_family(cache)
    u_star = adaptive.reference.u_star
    if u_star is None or any(r.final is None for r in [adaptive] + fixed):
        return False, "missing KKT reference or aborted run"

    def err(run):
        return float(np.linalg.norm(run.final.mean - u_star))

    e_ad = err(adaptive)
    e_fix = [err(r) for r in fixed]
    best = min(e_fix)
    mono = all(b <= a for a, b in zip(e_fix, e_fix[1:]))
    steps_ad = adaptive.record.meta["stats"]["accepted"]
    steps_hi = fixed[-1].record.meta["stats"]["accepted"]
    nfev_ad = adaptive.record.meta["stats"]["nfev"]
    nfev_hi = fixed[-1].record.meta["stats"]["nfev"]
    ok = e_ad <= 2.0 * best and mono and steps_ad <= steps_hi
    fixed_txt = ", ".join(f"{e:.4f}" for e in e_fix)
    return ok, (f"adaptive err {e_ad:.4f} <= 2 x best fixed {best:.4f}: {e_ad <= 2 * best}; "
                f"fixed errs [{fixed_txt}] monotone: {mono}; accepted steps adaptive {steps_ad} "
                f"<= tau=1e4 {steps_hi}: {steps_ad <= steps_hi} (nfev {nfev_ad} vs {nfev_hi})")


def check_a13(cache):
    barrier = _pseudolinear(cache).record.array("margin")[-1]
    control = cache.preset("norm-ball-control").record.array("margin")[-1]
    ok = barrier < 0 < control
    return ok, f"barrier final margin {_fmt(barrier)} < 0 < control final margin {_fmt(control)}"


CHECKS = {
    "A1": ("collapse upper bound", check_a1),
    "A2": ("collapse rate", check_a2),
    "A3": ("feasibility", check_a3),
    "A4": ("subspace property", check_a4),
    "A5": ("duality gap", check_a5),
    "A6": ("convergence to u*^tau", check_a6),
    "A7": ("gradient-flow approximation", check_a7),
    "A8": ("mean invariance of inflation", check_a8),
    "A9": ("closed-form ODE", check_a9),
    "A10": ("strong-convexity threshold", check_a10),
    "A11": ("PL inequality", check_a11),
    "A12": ("adaptive penalty", check_a12),
    "A13": ("constraint-violation contrast", check_a13),
    "A14": ("gradient/FD consistency", check_a14),
    "A15": ("oracle equivalence", check_a15),
}


def run_check(name, cache=None):
    """Run criterion ``name``; exceptions become a failed result."""
    title, fn = CHECKS[name]
    cache = cache if cache is not None else RunCache()
    t0 = time.perf_counter()
    try:
        passed, detail = fn(cache)
    except BarrierEKIError as exc:
        passed, detail = False, f"error: {type(exc).__name__}: {exc}"
    return CheckResult(name, title, bool(passed), detail, time.perf_counter() - t0)


def run_acceptance(names=None, cache=None, progress=None):
    """Run the selected criteria (all by default) sharing one run cache."""
    cache = cache if cache is not None else RunCache()
    out = []
    for name in names or CHECKS:
        res = run_check(name, cache)
        if progress is not None:
            progress(res)
        out.append(res)
    return out


def format_table(results):
    lines = [r.line() for r in results]
    n_pass = sum(r.passed for r in results)
    lines.append(f"{n_pass}/{len(results)} criteria passed")
    return "\n".join(lines)
