"""Build a problem from a configuration, run one flow and record diagnostics."""

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..constraints import ConstraintSet, feasibility_margin, make_box, make_norm_ball
from ..dynamics import FlowSpec, InflationSchedule, PenaltySchedule, eval_schedules
from ..ensemble import AffineSubspace, Ensemble, spread, subspace_distance
from ..errors import (BarrierEKIError, DivergenceError, InvalidInputError, PartialResultError,
                      StiffnessAbortError)
from ..forward_models import (KLPrior1D, KLPrior2D, build_darcy2d, build_heat1d,
                              make_box_from_truth, sample_kl_1d, sample_kl_2d,
                              synthesize_data)
from ..integrator import IntegratorConfig, integrate, pre_project
from ..potentials import BarrierPotential, RegularizedPotential, phi_barrier, phi_reg
from ..reference_solver import best_barrier_minimizer, duality_gap_bound, solve_constrained
from .config import config_hash, make_config
from .record import TrajectoryRecord, json_safe
from .theory import grad_flow_error, theory_constants


@dataclass
class Problem:
    """Everything a run needs besides the flow settings."""

    model: object
    prior: object
    truth: np.ndarray
    y: np.ndarray
    cs: ConstraintSet
    ens0: Ensemble
    subspace: AffineSubspace
    bounds: object = None
    radius: float = math.nan
    pre_projected: bool = False


def _prior_and_model(cfg):
    p = cfg["prior"]
    if cfg["model"] == "heat1d":
        h = cfg["heat1d"]
        model = build_heat1d(h["dx"], h["dt"], h["eps"])
        prior = KLPrior1D(model.grid, p["sigma2"], p["length_scale"], p["r"])
        sample = sample_kl_1d
    else:
        h = cfg["darcy2d"]
        model = build_darcy2d(h["n"], h["f"], h["k_obs"], h["obs_seed"])
        prior = KLPrior2D(model.points, p["tau"], p["alpha"], p["s"])
        sample = sample_kl_2d
    return model, prior, sample


def _constraints(cfg, model, truth):
    c = cfg["constraint"]
    if c["kind"] == "none":
        return ConstraintSet(), None, math.nan
    if c["kind"] == "norm-ball":
        if c["radius"] == "half_prior_norm_of_truth":
            r = 0.5 * model.C0.quad(truth)
        else:
            r = float(c["radius"])
        return make_norm_ball(model.C0, r), None, r
    if c["lower"] is not None or c["upper"] is not None:
        from ..constraints import BoxBounds

        lo = np.broadcast_to(np.asarray(c["lower"], dtype=float), (model.d,))
        hi = np.broadcast_to(np.asarray(c["upper"], dtype=float), (model.d,))
        bounds = BoxBounds(lo.copy(), hi.copy(), np.arange(model.d))
    else:
        bounds = make_box_from_truth(truth, c["slack"])
    return make_box(bounds), bounds, math.nan


def _outside(cs, u):
    """True when ``u`` is not strictly interior (within the feasibility margin)."""
    return bool(np.any(cs.values(u) >= -cs.eps))


def _pull_toward(U, center, cs, per_particle, shrink):
    """Pull infeasible particles (or the whole ensemble) toward an interior point."""
    U = U.copy()
    for _ in range(200):
        if per_particle:
            bad = [j for j in range(U.shape[0]) if _outside(cs, U[j])]
            if not bad:
                return U
            U[bad] = center + (1.0 - shrink) * (U[bad] - center)
        else:
            if not _outside(cs, U.mean(axis=0)):
                return U
            U = center + (1.0 - shrink) * (U - center)
    raise InvalidInputError("pre-projection did not reach the interior")


def build_problem(cfg):
    """Model, prior, synthetic data, constraints and initial ensemble for ``cfg``."""
    model, prior, sample = _prior_and_model(cfg)
    C0 = prior.covariance(cfg["prior"]["nugget"])
    truth = sample(prior, 1, cfg["truth_seed"])[0]
    data = synthesize_data(model, truth, cfg["noise_std"], cfg["noise_seed"])
    Gamma = cfg["noise_std"] ** 2 * np.eye(model.K)
    model = model.with_data(y=data.y, Gamma=Gamma, C0=C0)
    cs, bounds, radius = _constraints(cfg, model, truth)
    e = cfg["ensemble"]
    U0 = sample(prior, int(e["J"]), e["seed"])
    projected = False
    if cs.m and e["pre_project"]:
        per_particle = cfg["variant"] == "barrier-per-particle"
        pts = U0 if per_particle else U0.mean(axis=0)[None, :]
        infeasible = any(_outside(cs, u) for u in pts)
        if bounds is not None:
            if infeasible:
                U0 = pre_project(Ensemble(U0), bounds, e["shrink"]).particles
                projected = True
        else:
            center = cs.witness if cs.witness is not None else np.zeros(model.d)
            U1 = _pull_toward(U0, center, cs, per_particle, e["shrink"])
            projected = not np.array_equal(U1, U0)
            U0 = U1
    ens0 = Ensemble(U0)
    return Problem(model, prior, truth, data.y, cs, ens0, AffineSubspace.from_ensemble(ens0),
                   bounds, radius, projected)


def build_flow(cfg, problem):
    inf = cfg["inflation"]
    pen = cfg["penalty"]
    return FlowSpec(cfg["variant"], problem.model, lam=float(cfg["lambda"]), cs=problem.cs,
                    inflation=InflationSchedule(inf["kind"], float(inf["rho0"]),
                                                float(inf["beta"])),
                    penalty=PenaltySchedule(pen["kind"], float(pen["tau0"])))


def integrator_config(cfg):
    i = cfg["integrator"]
    return IntegratorConfig(
        T=float(i["t_final"]), rtol=float(i["rtol"]), atol=float(i["atol"]),
        h0=None if i["h0"] is None else float(i["h0"]), h_min=float(i["h_min"]),
        h_max=math.inf if i["h_max"] is None else float(i["h_max"]),
        safety=float(i["safety"]), checkpoints=int(i["checkpoints"]),
        t_first=float(i["t_first"]), max_halvings=int(i["max_halvings"]),
        max_steps=int(i["max_steps"]), method=i["method"], jac_every=int(i["jac_every"]))


# -- reference solutions -------------------------------------------------------------


@dataclass
class Reference:
    """Barrier minimizer at the run's penalty and an approximate KKT point.

    ``target`` names which of the two the run's errors are measured against.
    """

    u_tau: np.ndarray = None
    u_star: np.ndarray = None
    tau: float = math.nan
    target: str = "u_tau"
    subspace: bool = False
    info: dict = field(default_factory=dict)

    @property
    def point(self):
        return self.u_star if self.target == "u_star" else self.u_tau

    def as_dict(self):
        def arr(x):
            return None if x is None else [float(v) for v in x]

        return {"u_tau": arr(self.u_tau), "u_star": arr(self.u_star), "tau": self.tau,
                "target": self.target, "subspace": self.subspace, **self.info}


def _starts(problem):
    starts = [problem.ens0.mean]
    if problem.cs.witness is not None:
        starts.append(problem.cs.witness)
    if problem.bounds is not None:
        c = np.zeros(problem.model.d)
        c[problem.bounds.indices] = problem.bounds.center
        starts.append(c)
    starts.extend(problem.ens0.particles)
    return starts


def compute_reference(cfg, problem):
    """Multi-start barrier minimizer ``u*^tau`` and a ladder approximation of ``u*``.

    Errors are measured against ``u*^tau`` for a constant penalty and against
    ``u*`` for the linear schedule unless ``reference.target`` says otherwise.

    The subspace is the affine hull of the initial ensemble when
    ``reference.subspace`` is true, or ``"auto"`` with ``J <= d``. Returns
    ``None`` without constraints or when the reference is disabled.
    """
    rc = cfg["reference"]
    cs = problem.cs
    if not rc["enabled"] or cs.m == 0:
        return None
    use_sub = rc["subspace"] is True or (rc["subspace"] == "auto"
                                         and problem.ens0.J <= problem.model.d)
    sub = problem.subspace if use_sub else None
    pot = RegularizedPotential(problem.model, float(cfg["lambda"]))
    pen = cfg["penalty"]
    if pen["kind"] == "linear":
        tau = float(cfg["integrator"]["t_final"]) + 1.0
        target = "u_star"
    else:
        tau = float(pen["tau0"])
        target = "u_tau"
    if rc["target"] != "auto":
        target = rc["target"]
    starts = _starts(problem)
    ms = best_barrier_minimizer(BarrierPotential(pot, cs, tau), starts, sub, rc["tol_grad"],
                                method=rc["method"])
    info = {
        "barrier": {"objective": ms.best.objective, "grad_norm": ms.best.grad_norm,
                    "converged": ms.best.converged, "start_index": ms.start_index,
                    "candidates": [list(c) for c in ms.candidates]},
        "duality_gap_bound": duality_gap_bound(cs, tau),
    }
    u_star = None
    try:
        rep = solve_constrained(pot, cs, starts[ms.start_index], rc["tau_ladder"], sub,
                                rc["tol_grad"], rc["method"])
        u_star = rep.point
        info["kkt"] = {"tau": rep.tau, "multipliers": [float(v) for v in rep.multipliers],
                       "stationarity": rep.stationarity_norm,
                       "complementarity": rep.complementarity,
                       "primal_feasibility": rep.primal_feasibility,
                       "multipliers_valid": rep.multipliers_valid, "projected": rep.projected}
    except PartialResultError as exc:
        info["kkt"] = {"error": str(exc)}
        if target == "u_star" and exc.last_good is not None:
            u_star = exc.last_good.minimizer
    if target == "u_star" and u_star is None:
        target = "u_tau"
    return Reference(ms.best.minimizer, u_star, tau, target, use_sub, info)


# -- running -------------------------------------------------------------------------


@dataclass
class RunResult:
    record: TrajectoryRecord
    reference: Reference
    constants: object
    problem: Problem
    final: Ensemble = None
    config: dict = None
    elapsed: float = 0.0


def _observer(record, problem, spec, ref, scale):
    model = problem.model
    pot = RegularizedPotential(model, spec.lam)
    B = problem.subspace.basis
    u_ref = None if ref is None else ref.point
    g_ref = None if u_ref is None else model.apply(u_ref)
    want_gf = getattr(model, "has_jacobian", False) or hasattr(model, "A")

    def obs(t, ens, stats):
        if len(record) and t <= record.columns["t"][-1]:
            return
        mean = ens.mean
        rho, _, tau = eval_schedules(spec.inflation, spec.penalty, t)
        E = ens.particles - mean
        if B.shape[1]:
            P = (E @ B)
            eta = float(np.linalg.eigvalsh(P.T @ P / ens.J)[0])
        else:
            eta = 0.0
        margin = feasibility_margin(spec.cs, mean) if spec.cs.m else -math.inf
        preg = phi_reg(pot, mean)
        pb = phi_barrier(BarrierPotential(pot, spec.cs, tau), mean) if spec.cs.m else preg
        if u_ref is not None:
            ep = float(np.linalg.norm(mean - u_ref))
            eo = math.sqrt(model.Gamma.quad(model.apply(mean) - g_ref))
        else:
            ep = eo = math.nan
        row = {"t": t, "V_e": spread(ens), "eta_min": max(eta, 0.0), "margin": margin,
               "phi_reg": preg, "phi_b": pb, "err_param": ep, "err_obs": eo,
               "subspace_dist": subspace_distance(ens, problem.subspace) / scale,
               "rho_t": rho, "tau_t": tau}
        extra = {"mean_norm_c0": 0.5 * model.C0.quad(mean)}
        if want_gf:
            extra["gf_err"] = grad_flow_error(ens, model)
        record.append(row, stats.as_dict(), **extra)

    return obs


def _abort_reason(exc):
    if isinstance(exc, StiffnessAbortError):
        return "stiffness-abort"
    if isinstance(exc, DivergenceError):
        return "divergence"
    if isinstance(exc, InvalidInputError):
        return "infeasible-start"
    return "solver-failure"


def run_experiment(cfg, outdir=None, reference=True):
    """Run the configured flow and write artifacts to ``outdir`` when given.

    Integration and solver errors never propagate: they are captured in
    ``record.abort`` (and ``abort.json``) together with every checkpoint
    reached before the failure.
    """
    cfg = make_config(base=cfg)
    outdir = outdir or cfg["output"]["dir"]
    t0 = time.perf_counter()
    problem = build_problem(cfg)
    spec = build_flow(cfg, problem)
    ref = None
    record = TrajectoryRecord()
    record.meta = {"config_hash": config_hash(cfg), "name": cfg["name"],
                   "seeds": {"truth": cfg["truth_seed"], "noise": cfg["noise_seed"],
                             "ensemble": cfg["ensemble"]["seed"],
                             "obs_points": cfg["darcy2d"]["obs_seed"]},
                   "pre_projected": problem.pre_projected}
    try:
        if reference:
            ref = compute_reference(cfg, problem)
    except BarrierEKIError as exc:
        record.meta["reference_error"] = str(exc)
    constants = theory_constants(problem.model, problem.ens0, spec.lam, spec.inflation.beta)
    record.meta["constants"] = constants.as_dict()
    scale = max(float(np.max(np.linalg.norm(problem.ens0.particles, axis=1))), 1e-300)
    obs = _observer(record, problem, spec, ref, scale)
    final = None
    try:
        res = integrate(problem.ens0, spec, integrator_config(cfg), obs)
        final = res.ensemble
        record.meta["stats"] = res.stats.as_dict()
    except BarrierEKIError as exc:
        # a rejected start fails before the first step
        record.abort = {"reason": _abort_reason(exc), "message": str(exc),
                        "t": float(getattr(exc, "t", 0.0))}
    elapsed = time.perf_counter() - t0
    record.meta["elapsed_s"] = elapsed
    result = RunResult(record, ref, constants, problem, final, cfg, elapsed)
    if outdir is not None:
        write_artifacts(result, outdir)
    return result


def write_artifacts(result, outdir):
    d = Path(outdir)
    d.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    (d / "config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True))
    result.record.write(d)
    ref = result.reference.as_dict() if result.reference is not None else None
    (d / "reference.json").write_text(json.dumps(json_safe(ref), indent=1))
    p = result.problem
    prob = {"truth": p.truth.tolist(), "y": p.y.tolist(),
            "seeds": result.record.meta["seeds"], "radius": p.radius,
            "pre_projected": p.pre_projected}
    if p.bounds is not None:
        prob["box"] = {"lower": p.bounds.lower.tolist(), "upper": p.bounds.upper.tolist()}
    if hasattr(p.model, "obs_points"):
        prob["obs_points"] = p.model.obs_points.tolist()
    (d / "problem.json").write_text(json.dumps(json_safe(prob)))
    abort = d / "abort.json"
    if result.record.abort is not None:
        abort.write_text(json.dumps(json_safe(result.record.abort), indent=1))
    elif abort.exists():
        abort.unlink()
