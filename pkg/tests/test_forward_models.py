import numpy as np
import pytest

from barrier_eki.errors import InvalidBoundsError, InvalidInputError
from barrier_eki.forward_models import (KLPrior1D, KLPrior2D, build_darcy2d, build_heat1d,
                                        make_box_from_truth, sample_kl_1d, sample_kl_2d,
                                        solve_darcy, synthesize_data)
from barrier_eki.potentials import fd_gradient


@pytest.fixture(scope="module")
def darcy8():
    return build_darcy2d(8)


def test_heat1d_sine_eigenvector():
    dx, dt = 0.01, 0.05
    model = build_heat1d(dx, dt, 0.0)
    f = np.sin(np.pi * model.grid)
    mu = (2.0 / dx ** 2) * (1.0 - np.cos(np.pi * dx))
    expected = dt / (1.0 + dt * mu) * f
    np.testing.assert_allclose(model.A @ f, expected, rtol=1e-10, atol=1e-10 * np.abs(expected).max())


def test_heat1d_zero_source():
    model = build_heat1d(eps=0.1)
    assert model.d == 99
    np.testing.assert_array_equal(model.apply(np.zeros(99)), np.zeros(99))


def test_heat1d_bad_grid():
    with pytest.raises(InvalidInputError):
        build_heat1d(dx=0.3)


def test_darcy_center_pressure():
    model = build_darcy2d(32)
    p = model.pressure_at(np.zeros(model.d), np.array([[0.5, 0.5]]))
    assert p[0] == pytest.approx(0.07367, abs=2e-3)


def test_darcy_zero_forcing(darcy8):
    model = build_darcy2d(8, f=0.0)
    p, obs = solve_darcy(model, np.random.default_rng(0).standard_normal(model.d))
    assert not np.any(p) and not np.any(obs)


@pytest.mark.parametrize("c", [-1.0, 0.3, 2.0])
def test_darcy_constant_coefficient_scaling(darcy8, c):
    p0, _ = solve_darcy(darcy8, np.zeros(darcy8.d))
    pc, _ = solve_darcy(darcy8, np.full(darcy8.d, c))
    np.testing.assert_allclose(pc, np.exp(-c) * p0, rtol=1e-10, atol=1e-14)


def test_darcy_maximum_principle(darcy8, rng):
    p, _ = solve_darcy(darcy8, rng.standard_normal(darcy8.d))
    assert p.min() >= -1e-14 and p.max() > 0


def test_darcy_refinement_order():
    errs, hs = [], []
    ref = 0.0736713532814  # series value of the Poisson center pressure
    for n in (9, 17, 33):
        model = build_darcy2d(n)
        errs.append(abs(model.pressure_at(np.zeros(model.d), np.array([[0.5, 0.5]]))[0] - ref))
        hs.append(1.0 / (n - 1))
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert order == pytest.approx(2.0, abs=0.3)


def test_darcy_jacobian_fd(darcy8, rng):
    u = 0.5 * rng.standard_normal(darcy8.d)
    Jac = darcy8.jacobian(u)
    for k in rng.choice(darcy8.K, 4, replace=False):
        fd = fd_gradient(lambda v: darcy8.apply(v)[k], u)
        np.testing.assert_allclose(Jac[k], fd, rtol=1e-5, atol=1e-8 * np.abs(Jac[k]).max())


def test_pressure_at_validation(darcy8):
    with pytest.raises(InvalidInputError):
        darcy8.pressure_at(np.zeros(darcy8.d), np.array([[1.5, 0.5]]))


def test_kl1d_zero_and_determinism():
    prior = KLPrior1D(np.linspace(0.01, 0.99, 99))
    np.testing.assert_array_equal(sample_kl_1d(prior, 3, 0, xi=np.zeros((3, 12))), 0.0)
    np.testing.assert_array_equal(sample_kl_1d(prior, 5, 7), sample_kl_1d(prior, 5, 7))
    assert np.all(np.diff(prior.eigenvalues) <= 0)


def test_kl1d_sample_covariance():
    prior = KLPrior1D(np.linspace(0.05, 0.95, 19), r=10)
    S = sample_kl_1d(prior, 40_000, 3)
    np.testing.assert_allclose(S.mean(axis=0), 0.0, atol=0.1)
    C = S.T @ S / S.shape[0]
    target = prior.truncated_covariance()
    assert np.abs(C - target).max() <= 0.05 * np.abs(target).max()


def test_kl1d_truncation_bounds():
    with pytest.raises(InvalidInputError):
        KLPrior1D(np.linspace(0, 1, 5), r=6)


def test_kl2d_single_mode():
    pts = np.random.default_rng(0).random((30, 2))
    prior = KLPrior2D(pts, tau_prior=0.01, alpha=2.0, s=1)
    u = sample_kl_2d(prior, 1, 0, xi=np.ones((1, 1)))[0]
    lam = (2 * np.pi ** 2 + 1e-4) ** -2.0
    # the field carries the square root of the eigenvalue
    expected = np.sqrt(lam) * np.cos(np.pi * pts[:, 0]) * np.cos(np.pi * pts[:, 1])
    np.testing.assert_allclose(u, expected, rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(sample_kl_2d(prior, 2, 0, xi=np.zeros((2, 1))), 0.0)


def test_kl2d_mode_order():
    prior = KLPrior2D(np.zeros((1, 2)), s=5)
    assert [tuple(m) for m in prior.modes] == [(1, 1), (1, 2), (2, 1), (2, 2), (1, 3)]


@pytest.mark.parametrize("truth, slack, bounds", [
    ([-2.0, 0.0, 3.0], 0.3, (-1.4, 2.1)),
    ([-2.0, 0.0, 3.0], 0.0, (-2.0, 3.0)),
])
def test_make_box_from_truth(truth, slack, bounds):
    box = make_box_from_truth(np.array(truth), slack)
    np.testing.assert_allclose(box.lower, bounds[0])
    np.testing.assert_allclose(box.upper, bounds[1])


def test_make_box_degenerate():
    with pytest.raises(InvalidBoundsError):
        make_box_from_truth(np.full(4, 1.5))


def test_synthesize_data_seeded(darcy8):
    truth = np.zeros(darcy8.d)
    a = synthesize_data(darcy8, truth, 0.01, 5)
    b = synthesize_data(darcy8, truth, 0.01, 5)
    np.testing.assert_array_equal(a.y, b.y)
    assert np.std(a.y - a.clean) == pytest.approx(0.01, rel=0.5)
