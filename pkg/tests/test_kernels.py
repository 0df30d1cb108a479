import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from barrier_eki import _kernels
from barrier_eki._kernels import _fallback, backends
from barrier_eki.forward_models import build_darcy2d

IMPLS = backends()
requires_core = pytest.mark.skipif("cython" not in IMPLS, reason="compiled kernels not built")


def test_backend_selected():
    assert _kernels.BACKEND in IMPLS
    assert IMPLS["python"] is _fallback


@requires_core
@given(st.integers(2, 12), st.integers(1, 30), st.integers(1, 20), st.integers(0, 2 ** 31))
def test_moments_agree(J, d, K, seed):
    rng = np.random.default_rng(seed)
    U, G = rng.standard_normal((J, d)), rng.standard_normal((J, K))
    for a, b in zip(IMPLS["cython"].ensemble_moments(U, G), _fallback.ensemble_moments(U, G)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


def test_moments_reference(rng):
    U, G = rng.standard_normal((5, 3)), rng.standard_normal((5, 2))
    for impl in IMPLS.values():
        mu, mg, Eu, Eg, cov, cross = impl.ensemble_moments(U, G)
        np.testing.assert_allclose(cov, np.cov(U.T, bias=True), atol=1e-14)
        np.testing.assert_allclose(cross, ((U - mu).T @ (G - mg)) / 5, atol=1e-14)


@requires_core
@pytest.mark.parametrize("n", [3, 6, 11])
def test_assembly_agrees(n, rng):
    model = build_darcy2d(n)
    kappa = np.exp(rng.standard_normal(model.tri.shape[0]))
    args = (kappa, model._tri_c, model._local_c, model.free_index, model.free.size)
    A = IMPLS["cython"].p1_assemble_dense(*args)
    B = _fallback.p1_assemble_dense(*args)
    np.testing.assert_allclose(A, B, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(A, A.T, atol=1e-12)


@requires_core
@given(st.integers(0, 50), st.floats(1e-12, 1e-3), st.floats(1e-10, 1e-2),
       st.integers(0, 2 ** 31))
def test_rms_norm_agrees(n, atol, rtol, seed):
    rng = np.random.default_rng(seed)
    e, y0, y1 = rng.standard_normal((3, n))
    a = IMPLS["cython"].rms_error_norm(e, y0, y1, atol, rtol)
    b = _fallback.rms_error_norm(e, y0, y1, atol, rtol)
    assert a == pytest.approx(b, rel=1e-12)
