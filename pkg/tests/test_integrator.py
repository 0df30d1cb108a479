import math

import numpy as np
import pytest

from barrier_eki.constraints import BoxBounds, make_affine
from barrier_eki.dynamics import FlowSpec, InflationSchedule, PenaltySchedule
from barrier_eki.ensemble import Ensemble
from barrier_eki.errors import (DivergenceError, InvalidBoundsError, InvalidInputError,
                                StiffnessAbortError)
from barrier_eki.integrator import IntegratorConfig, integrate, pre_project, solve_ode
from barrier_eki.potentials import LinearModel


def closed_form_ode(t, x, a=0.5, b=1.0, c=2.0):
    return -(a / (t + b)) * x - c * x * x


@pytest.mark.parametrize("method", ["dopri5", "ros2w"])
def test_exponential_decay(method):
    cfg = IntegratorConfig(T=1.0, rtol=1e-8, atol=1e-12, method=method)
    res = solve_ode(lambda t, x: -x, np.array([1.0]), cfg)
    tol = 1e-7 if method == "dopri5" else 1e-5
    assert res.y[0] == pytest.approx(math.exp(-1.0), abs=tol)
    assert res.t == 1.0


def test_closed_form_ode():
    cfg = IntegratorConfig(T=1.0, rtol=1e-8, atol=1e-12)
    res = solve_ode(closed_form_ode, np.array([0.25]), cfg)
    assert res.y[0] == pytest.approx(0.125, abs=1e-6)
    for t, x in zip(res.times, res.states):
        assert x[0] == pytest.approx(0.25 / (t + 1.0), abs=1e-6)


def test_convergence_order():
    errs, steps = [], []
    for rtol in 10.0 ** -np.arange(4, 11):
        cfg = IntegratorConfig(T=10.0, rtol=rtol, atol=1e-3 * rtol, checkpoints=1)
        res = solve_ode(closed_form_ode, np.array([0.25]), cfg)
        errs.append(abs(res.y[0] - 0.25 / 11.0))
        steps.append(res.stats.accepted)
    slope = -np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert slope >= 4.0
    assert errs[-1] < errs[0]


def test_checkpoints_monotone_and_end_at_T():
    cfg = IntegratorConfig(T=1e3, checkpoints=25)
    ts = cfg.checkpoint_times()
    assert ts[0] == 0.0 and ts[-1] == 1e3 and ts[1] == pytest.approx(1e-2)
    assert np.all(np.diff(ts) > 0)
    res = solve_ode(lambda t, x: -x / (1 + t), np.array([1.0]), cfg)
    np.testing.assert_array_equal(res.times, ts)


@pytest.mark.parametrize("kwargs", [
    {"T": 0.0}, {"T": 1.0, "rtol": 0.0}, {"T": 1.0, "safety": 1.0},
    {"T": 1.0, "h_min": 1.0, "h_max": 0.1}, {"T": 1.0, "h0": 1e-20},
    {"T": 1.0, "checkpoints": 0}, {"T": 1.0, "method": "bdf"},
])
def test_config_validation(kwargs):
    with pytest.raises(InvalidInputError):
        IntegratorConfig(**kwargs)


def test_divergence():
    def fun(t, x):
        return -x if t < 0.5 else np.full_like(x, np.nan)

    with pytest.raises(DivergenceError):
        solve_ode(fun, np.array([1.0]), IntegratorConfig(T=2.0))
    with pytest.raises(DivergenceError):
        solve_ode(lambda t, x: -x, np.array([np.nan]), IntegratorConfig(T=1.0))


def test_stiffness_abort_when_never_admissible():
    cfg = IntegratorConfig(T=1.0, max_halvings=5)
    with pytest.raises(StiffnessAbortError):
        solve_ode(lambda t, x: -x, np.array([1.0]), cfg, admissible=lambda t, y: y[0] > 0.999999)


def test_ros2w_on_stiff_linear_system():
    lam = np.array([-1.0, -1e5])
    cfg = IntegratorConfig(T=10.0, rtol=1e-6, atol=1e-10, method="ros2w", checkpoints=5)
    res = solve_ode(lambda t, x: lam * x, np.ones(2), cfg)
    np.testing.assert_allclose(res.y, np.exp(lam * 10.0), atol=1e-6)
    explicit = solve_ode(lambda t, x: lam * x, np.ones(2), IntegratorConfig(T=10.0, checkpoints=5))
    assert res.stats.accepted < explicit.stats.accepted


def _scalar_barrier_spec(variant="barrier-mean"):
    model = LinearModel(np.eye(1), y=np.zeros(1), Gamma=np.eye(1), C0=np.eye(1))
    return FlowSpec(variant, model, 0.0, make_affine([[-1.0]], [1.0]),
                    InflationSchedule("constant", 0.5), PenaltySchedule("linear", 1.0))


@pytest.mark.parametrize("method", ["dopri5", "ros2w"])
def test_barrier_flow_stays_feasible(method):
    """min u^2/2 s.t. u >= 1: the unconstrained flow would cross the boundary."""
    spec = _scalar_barrier_spec()
    margins = []
    cfg = IntegratorConfig(T=1e3, checkpoints=30, method=method)
    out = integrate(Ensemble([[1.5], [3.0]]), spec, cfg,
                    observer=lambda t, e, s: margins.append(1.0 - e.mean[0]))
    assert len(margins) == 31
    assert max(margins) < 0
    assert out.ensemble.mean[0] == pytest.approx(1.0, abs=0.05)


def test_integrate_rejects_infeasible_start():
    with pytest.raises(InvalidInputError):
        integrate(Ensemble([[0.0], [1.5]]), _scalar_barrier_spec(), IntegratorConfig(T=1.0))


def test_integrate_deterministic():
    spec = _scalar_barrier_spec("barrier-per-particle")
    cfg = IntegratorConfig(T=50.0, checkpoints=10)
    a = integrate(Ensemble([[1.5], [2.5], [4.0]]), spec, cfg)
    b = integrate(Ensemble([[1.5], [2.5], [4.0]]), spec, cfg)
    for x, y in zip(a.snapshots, b.snapshots):
        np.testing.assert_array_equal(x, y)
    assert a.stats.as_dict() == b.stats.as_dict()


def test_pre_project_interior_unchanged():
    box = BoxBounds(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    ens = Ensemble([[0.2, -0.3], [0.5, 0.1]])
    np.testing.assert_array_equal(pre_project(ens, box, 0.0).particles, ens.particles)


def test_pre_project_hand_example():
    box = BoxBounds(np.array([0.0]), np.array([2.0]))
    out = pre_project(Ensemble([[3.0], [0.5]]), box, 0.25)
    # clamp 3 -> 2, then 2 + 0.25 (1 - 2); 0.5 + 0.25 (1 - 0.5)
    np.testing.assert_allclose(out.particles, [[1.75], [0.625]])


def test_pre_project_boundary_ensemble_becomes_interior():
    box = BoxBounds(np.zeros(2), np.ones(2))
    out = pre_project(Ensemble([[0.0, 1.0], [0.0, 0.0], [1.0, 1.0]]), box, 0.5)
    m = out.mean
    assert np.all(m > 0) and np.all(m < 1)


@pytest.mark.parametrize("shrink", [-0.1, 1.0])
def test_pre_project_bad_shrink(shrink):
    box = BoxBounds(np.zeros(1), np.ones(1))
    with pytest.raises(InvalidBoundsError):
        pre_project(Ensemble([[0.5], [0.2]]), box, shrink)


def test_pre_project_degenerate_box():
    with pytest.raises(InvalidBoundsError):
        pre_project(Ensemble([[0.5], [0.2]]), BoxBounds(np.ones(1), np.ones(1)), 0.5)
