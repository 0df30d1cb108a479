import math

import numpy as np
import pytest

from barrier_eki.constraints import ConstraintSet, make_affine, make_norm_ball
from barrier_eki.ensemble import AffineSubspace, Ensemble
from barrier_eki.errors import InvalidInputError, InvalidStartError
from barrier_eki.potentials import BarrierPotential, LinearModel, RegularizedPotential, phi_reg
from barrier_eki.reference_solver import (best_barrier_minimizer, default_subspace,
                                          duality_gap_bound, kkt_residual, solve_barrier,
                                          solve_constrained)


def half_square():
    """Phi = u^2 / 2 with the constraint h(u) = 1 - u."""
    pot = RegularizedPotential(LinearModel(np.eye(1), y=np.zeros(1), Gamma=np.eye(1)), 0.0)
    return pot, make_affine([[-1.0]], [1.0])


@pytest.mark.parametrize("method", ["newton", "gradient"])
def test_1d_barrier_closed_form(method):
    pot, cs = half_square()
    res = solve_barrier(BarrierPotential(pot, cs, 4.0), np.array([3.0]), method=method,
                        tol_grad=1e-10)
    assert res.converged
    assert res.minimizer[0] == pytest.approx((1 + math.sqrt(2)) / 2, abs=1e-6)


@pytest.mark.parametrize("tau", [0.5, 10.0, 1e3, 1e5])
def test_1d_barrier_tau_sweep(tau):
    pot, cs = half_square()
    res = solve_barrier(BarrierPotential(pot, cs, tau), np.array([2.0]), tol_grad=1e-10)
    assert res.minimizer[0] == pytest.approx((1 + math.sqrt(1 + 4 / tau)) / 2, rel=1e-9)


def test_unconstrained_quadratic():
    c = np.array([1.0, -2.0, 0.5])
    pot = RegularizedPotential(LinearModel(np.eye(3), y=c, Gamma=np.eye(3)), 0.0)
    res = solve_barrier(BarrierPotential(pot, ConstraintSet(), 1.0), np.zeros(3))
    np.testing.assert_allclose(res.minimizer, c, atol=1e-8)


def test_full_subspace_is_identity():
    pot, cs = half_square()
    bp = BarrierPotential(pot, cs, 4.0)
    sub = AffineSubspace.from_ensemble(Ensemble([[1.5], [2.5]]))
    a = solve_barrier(bp, np.array([3.0]), tol_grad=1e-12)
    b = solve_barrier(bp, np.array([3.0]), subspace=sub, tol_grad=1e-12)
    assert b.subspace
    assert b.minimizer[0] == pytest.approx(a.minimizer[0], abs=1e-10)


def test_subspace_iterates_stay_in_subspace(rng):
    A = rng.standard_normal((6, 6))
    pot = RegularizedPotential(LinearModel(A, y=rng.standard_normal(6), Gamma=np.eye(6),
                                           C0=np.eye(6)), 0.1)
    cs = make_norm_ball(np.eye(6), 8.0)
    ens = Ensemble(0.5 * rng.standard_normal((3, 6)))
    sub = default_subspace(ens)
    res = solve_barrier(BarrierPotential(pot, cs, 100.0), ens.mean, subspace=sub)
    assert np.linalg.norm(sub.project(res.minimizer) - res.minimizer) <= 1e-10
    assert default_subspace(Ensemble(rng.standard_normal((7, 6)))) is None


def test_infeasible_start():
    pot, cs = half_square()
    with pytest.raises(InvalidStartError):
        solve_barrier(BarrierPotential(pot, cs, 1.0), np.array([0.5]))
    with pytest.raises(InvalidStartError):
        best_barrier_minimizer(BarrierPotential(pot, cs, 1.0), [np.array([0.0]), np.array([1.0])])


def test_gradient_trace_monotone():
    pot, cs = half_square()
    res = solve_barrier(BarrierPotential(pot, cs, 10.0), np.array([5.0]), method="gradient",
                        trace=True)
    obj = [o for o, _ in res.trace]
    assert len(obj) > 1
    assert np.all(np.diff(obj) <= 1e-14 * np.abs(obj[:-1]))


def test_multistart_keeps_lowest_objective():
    pot, cs = half_square()
    bp = BarrierPotential(pot, cs, 4.0)
    out = best_barrier_minimizer(bp, [np.array([0.5]), np.array([2.0]), np.array([9.0])])
    assert [c[0] for c in out.candidates] == [1, 2]
    assert out.best.objective == min(c[1] for c in out.candidates)


def test_constrained_kkt_1d():
    pot, cs = half_square()
    rep = solve_constrained(pot, cs, np.array([2.0]))
    assert rep.point[0] == pytest.approx(1.0, abs=1e-4)
    assert rep.multipliers[0] == pytest.approx(1.0, abs=1e-4)
    assert rep.stationarity_norm <= 1e-4
    assert rep.complementarity <= 1e-4 and rep.multipliers_valid
    assert [s.tau for s in rep.stages] == [1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6]


def test_gap_ladder_within_bound():
    pot, cs = half_square()
    rep = solve_constrained(pot, cs, np.array([2.0]))
    for st in rep.stages:
        assert 0 <= st.phi_reg - 0.5 <= duality_gap_bound(cs, st.tau) + 1e-12


def test_inactive_constraint():
    pot = RegularizedPotential(LinearModel(np.eye(1), y=np.array([3.0]), Gamma=np.eye(1)), 0.0)
    cs = make_affine([[-1.0]], [1.0])
    rep = solve_constrained(pot, cs, np.array([2.0]))
    assert rep.point[0] == pytest.approx(3.0, abs=1e-5)
    assert rep.multipliers[0] < 1e-5


def test_kkt_residual_examples():
    pot, cs = half_square()
    rep = kkt_residual(pot, cs, np.array([1.0]), [1.0])
    assert rep.stationarity_norm == 0.0 and rep.complementarity == 0.0
    rep = kkt_residual(pot, cs, np.array([2.0]), [0.0])
    assert rep.stationarity_norm == pytest.approx(2.0) and rep.complementarity == 0.0
    rep = kkt_residual(pot, cs, np.array([1.0]), [-1.0])
    assert not rep.multipliers_valid
    assert rep.stationarity_norm == pytest.approx(2.0)
    with pytest.raises(InvalidInputError):
        kkt_residual(pot, cs, np.array([1.0]), [1.0, 2.0])


def test_ladder_validation():
    pot, cs = half_square()
    with pytest.raises(InvalidInputError):
        solve_constrained(pot, cs, np.array([2.0]), tau_ladder=(10.0, 1.0))


def test_norm_ball_projection_problem(rng):
    """Minimizing |u - c|^2/2 over a ball gives the radial projection of c."""
    c = np.array([3.0, 4.0])
    pot = RegularizedPotential(LinearModel(np.eye(2), y=c, Gamma=np.eye(2)), 0.0)
    cs = make_norm_ball(np.eye(2), 0.5 * 4.0)  # |u| <= 2
    rep = solve_constrained(pot, cs, np.zeros(2))
    np.testing.assert_allclose(rep.point, c / 5.0 * 2.0, atol=1e-4)
    assert phi_reg(pot, rep.point) == pytest.approx(4.5, abs=1e-4)
