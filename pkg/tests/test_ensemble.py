import numpy as np
import pytest
import scipy.optimize
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from barrier_eki.ensemble import (AffineSubspace, Ensemble, compute_stats, min_eigenvalue_on_span,
                                  spread, subspace_distance)
from barrier_eki.errors import DegenerateSpanError, InvalidInputError
from barrier_eki.experiments.acceptance import double_sum_stats

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_two_particles_symmetric():
    st_ = compute_stats(Ensemble([[-1.0], [1.0]]), [[-1.0], [1.0]])
    assert st_.mean == pytest.approx([0.0])
    np.testing.assert_allclose(st_.cov, [[1.0]])
    np.testing.assert_allclose(st_.cross_cov, [[1.0]])
    assert st_.spread == pytest.approx(0.5)


def test_identical_particles_zero_moments():
    ens = Ensemble(np.ones((4, 3)))
    s = compute_stats(ens, np.ones((4, 2)))
    assert not np.any(s.cov)
    assert not np.any(s.cross_cov)
    assert s.spread == 0.0


def test_linear_output_and_double_sum_oracle(rng):
    U = rng.standard_normal((4, 3))
    s = compute_stats(Ensemble(U), 2.0 * U)
    np.testing.assert_allclose(s.cross_cov, 2.0 * s.cov, rtol=0, atol=1e-12)
    mu, mg, cov, cross = double_sum_stats(U, 2.0 * U)
    for a, b in ((s.mean, mu), (s.mean_G, mg), (s.cov, cov), (s.cross_cov, cross)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_wrong_output_rows():
    with pytest.raises(InvalidInputError):
        compute_stats(Ensemble(np.zeros((3, 2))), np.zeros((2, 2)))


@pytest.mark.parametrize("shape", [(1, 3), (3,), (2, 0)])
def test_bad_ensemble_shapes(shape):
    with pytest.raises(InvalidInputError):
        Ensemble(np.zeros(shape))


@given(arrays(float, st.tuples(st.integers(2, 6), st.integers(1, 5)), elements=finite),
       st.randoms(use_true_random=False))
def test_stats_invariants(U, rnd):
    ens = Ensemble(U)
    G = np.column_stack([U.sum(axis=1), np.sin(U[:, 0])])
    s = compute_stats(ens, G)
    # 1/J normalization and V_e = tr(cov) / 2
    E = U - U.mean(axis=0)
    np.testing.assert_allclose(s.cov, E.T @ E / U.shape[0], rtol=1e-12, atol=1e-12)
    assert s.spread == pytest.approx(0.5 * np.trace(s.cov), rel=1e-12, abs=1e-12)
    assert spread(ens) == pytest.approx(s.spread, rel=1e-12, abs=1e-12)
    # permutation invariance
    perm = list(range(U.shape[0]))
    rnd.shuffle(perm)
    s2 = compute_stats(Ensemble(U[perm]), G[perm])
    np.testing.assert_allclose(s2.cov, s.cov, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(s2.cross_cov, s.cross_cov, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(s2.mean, s.mean, rtol=1e-12, atol=1e-12)


def test_min_eigenvalue_rank_one():
    ens = Ensemble([[1.0, 0.0], [-1.0, 0.0]])
    s = compute_stats(ens, ens.particles)
    assert min_eigenvalue_on_span(s, AffineSubspace.from_ensemble(ens)) == pytest.approx(1.0)


def test_min_eigenvalue_degenerate():
    ens = Ensemble(np.ones((3, 2)))
    s = compute_stats(ens, ens.particles)
    with pytest.raises(DegenerateSpanError):
        min_eigenvalue_on_span(s, AffineSubspace.from_ensemble(ens))


def test_min_eigenvalue_brute_force(rng):
    ens = Ensemble(rng.standard_normal((5, 3)))
    s = compute_stats(ens, ens.particles)
    sub = AffineSubspace.from_ensemble(ens)
    Z = rng.standard_normal((10_000, sub.r))
    Z /= np.linalg.norm(Z, axis=1)[:, None]
    V = Z @ sub.basis.T
    q = np.einsum("ij,jk,ik->i", V, s.cov, V)
    assert min_eigenvalue_on_span(s, sub) <= q.min() + 1e-12

    # random search resolves the minimum only to O(angle^2); polish the best direction
    def rayleigh(z):
        v = sub.basis @ z
        return float(v @ s.cov @ v) / float(v @ v)

    best = scipy.optimize.minimize(rayleigh, Z[np.argmin(q)], method="Nelder-Mead",
                                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20_000})
    assert min_eigenvalue_on_span(s, sub) == pytest.approx(best.fun, abs=1e-6)


def test_subspace_distance_cases(rng):
    U = rng.standard_normal((3, 5))
    sub = AffineSubspace.from_ensemble(Ensemble(U))
    assert sub.r == 2
    inside = sub.offset + sub.basis @ rng.standard_normal(2)
    n = rng.standard_normal(5)
    n -= sub.basis @ (sub.basis.T @ n)
    n /= np.linalg.norm(n)
    assert subspace_distance(Ensemble([sub.offset, sub.offset]), sub) == 0.0
    assert subspace_distance(Ensemble([inside, inside]), sub) < 1e-12
    assert subspace_distance(Ensemble([sub.offset + n, sub.offset]), sub) == pytest.approx(1.0,
                                                                                          abs=1e-12)


def test_subspace_project_and_coords(rng):
    sub = AffineSubspace.from_ensemble(Ensemble(rng.standard_normal((4, 6))))
    u = rng.standard_normal(6)
    p = sub.project(u)
    np.testing.assert_allclose(sub.project(p), p, atol=1e-12)
    np.testing.assert_allclose(sub.offset + sub.basis @ sub.to_coords(p), p, atol=1e-12)
    full = AffineSubspace.full(6)
    np.testing.assert_allclose(full.project(u), u)
