"""Forward-model contract and the objectives built on it.

Weighted norms follow ``||x||^2_S = <x, S^{-1} x>``, so

    phi_reg(u) = 0.5 ||G(u) - y||^2_Gamma + 0.5 * lam * ||u||^2_C0

is the usual Tikhonov functional.
"""

import copy
from dataclasses import dataclass

import numpy as np

from .constraints import barrier_drift, barrier_value
from .errors import InvalidInputError, InvalidModelError, UnsupportedOperationError
from .linalg import as_spd


class ForwardModel:
    """Forward map ``G: R^d -> R^K`` bundled with data, noise and prior covariances.

    Subclasses implement :meth:`apply` and, when they can, :meth:`jacobian`.
    ``y``, ``Gamma`` and ``C0`` may be attached after construction with
    :meth:`with_data`; ``Gamma`` and ``C0`` are stored as
    :class:`~barrier_eki.linalg.SPDMatrix`.
    """

    has_jacobian = False

    def __init__(self, d, K, y=None, Gamma=None, C0=None):
        self.d = int(d)
        self.K = int(K)
        self.y = None
        self.Gamma = None
        self.C0 = None
        self._set_data(y, Gamma, C0)

    def _set_data(self, y, Gamma, C0):
        if y is not None:
            y = np.asarray(y, dtype=float)
            if y.shape != (self.K,):
                raise InvalidModelError(f"data must have shape ({self.K},), got {y.shape}")
            self.y = y
        try:
            if Gamma is not None:
                self.Gamma = as_spd(Gamma)
            if C0 is not None:
                self.C0 = as_spd(C0)
        except InvalidInputError as exc:
            raise InvalidModelError(str(exc)) from exc
        if self.Gamma is not None and self.Gamma.n != self.K:
            raise InvalidModelError("Gamma must be K x K")
        if self.C0 is not None and self.C0.n != self.d:
            raise InvalidModelError("C0 must be d x d")

    def with_data(self, y=None, Gamma=None, C0=None):
        """Shallow copy with the given data attached."""
        new = copy.copy(self)
        new._set_data(y, Gamma, C0)
        return new

    def apply(self, u):
        raise NotImplementedError

    def apply_batch(self, U):
        """Outputs for each row of ``U``, shape ``(J, K)``."""
        U = np.asarray(U, dtype=float)
        return np.array([self.apply(u) for u in U]).reshape(U.shape[0], self.K)

    def jacobian(self, u):
        raise UnsupportedOperationError(f"{type(self).__name__} has no Jacobian")

    def _require_data(self):
        if self.y is None or self.Gamma is None:
            raise InvalidModelError("forward model has no data/noise covariance attached")


class LinearModel(ForwardModel):
    """``G(u) = A u``."""

    has_jacobian = True

    def __init__(self, A, **data):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        self.A = A
        super().__init__(A.shape[1], A.shape[0], **data)

    def apply(self, u):
        return self.A @ np.asarray(u, dtype=float)

    def apply_batch(self, U):
        return np.asarray(U, dtype=float) @ self.A.T

    def jacobian(self, u):
        return self.A.copy()


class PseudolinearModel(ForwardModel):
    """``G(u) = A u + eps * sin(u)`` with square ``A``."""

    has_jacobian = True

    def __init__(self, A, eps, **data):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise InvalidInputError("pseudolinear model needs a square matrix")
        if eps < 0:
            raise InvalidInputError("eps must be nonnegative")
        self.A = A
        self.eps = float(eps)
        super().__init__(A.shape[1], A.shape[0], **data)

    def apply(self, u):
        u = np.asarray(u, dtype=float)
        return self.A @ u + self.eps * np.sin(u)

    def apply_batch(self, U):
        U = np.asarray(U, dtype=float)
        return U @ self.A.T + self.eps * np.sin(U)

    def jacobian(self, u):
        return self.A + self.eps * np.diag(np.cos(np.asarray(u, dtype=float)))


class CallableModel(ForwardModel):
    """Wraps plain functions ``fun(u) -> (K,)`` and optional ``jac(u) -> (K, d)``."""

    def __init__(self, fun, d, K, jac=None, **data):
        self._fun = fun
        self._jac = jac
        self.has_jacobian = jac is not None
        super().__init__(d, K, **data)

    def apply(self, u):
        return np.atleast_1d(np.asarray(self._fun(np.asarray(u, dtype=float)), dtype=float))

    def jacobian(self, u):
        if self._jac is None:
            return super().jacobian(u)
        return np.atleast_2d(np.asarray(self._jac(np.asarray(u, dtype=float)), dtype=float))


@dataclass(frozen=True)
class RegularizedPotential:
    """Tikhonov-regularized misfit with strength ``lam``."""

    model: ForwardModel
    lam: float

    def __post_init__(self):
        if not self.lam >= 0:
            raise InvalidInputError(f"lambda must be nonnegative, got {self.lam}")
        if self.lam > 0 and self.model.C0 is None:
            raise InvalidModelError("regularization needs C0 on the model")

    def value(self, u):
        return phi_reg(self, u)

    def gradient(self, u):
        return grad_phi_reg(self, u)


@dataclass(frozen=True)
class BarrierPotential:
    """``phi_reg`` plus the log-barrier of ``cs`` with penalty ``tau``."""

    base: RegularizedPotential
    cs: object
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidInputError(f"tau must be positive, got {self.tau}")

    def value(self, u):
        return phi_barrier(self, u)

    def gradient(self, u):
        return grad_phi_barrier(self, u)


def phi_misfit(model, u):
    """``0.5 <G(u) - y, Gamma^{-1} (G(u) - y)>``."""
    model._require_data()
    u = np.asarray(u, dtype=float)
    if u.shape != (model.d,):
        raise InvalidInputError(f"u must have shape ({model.d},)")
    r = model.apply(u) - model.y
    return 0.5 * model.Gamma.quad(r)


def phi_reg(pot, u):
    val = phi_misfit(pot.model, u)
    if pot.lam > 0:
        val += 0.5 * pot.lam * pot.model.C0.quad(u)
    return val


def grad_phi_reg(pot, u):
    """``DG(u)^T Gamma^{-1} (G(u) - y) + lam C0^{-1} u``.

    Raises
    ------
    UnsupportedOperationError
        If the model has no Jacobian.
    """
    model = pot.model
    model._require_data()
    if not model.has_jacobian:
        raise UnsupportedOperationError("gradient needs a forward-model Jacobian")
    u = np.asarray(u, dtype=float)
    r = model.apply(u) - model.y
    g = model.jacobian(u).T @ model.Gamma.solve(r)
    if pot.lam > 0:
        g = g + pot.lam * model.C0.solve(u)
    return g


def phi_barrier(bp, u):
    """``phi_reg + barrier``; ``+inf`` outside the strict interior."""
    b = barrier_value(bp.cs, u, bp.tau)
    if not np.isfinite(b):
        return np.inf
    return phi_reg(bp.base, u) + b


def grad_phi_barrier(bp, u):
    return grad_phi_reg(bp.base, u) - barrier_drift(bp.cs, u, bp.tau)


def fd_gradient(f, u, rel_step=1e-6):
    """Central finite differences with step ``rel_step * (1 + |u_i|)``."""
    u = np.asarray(u, dtype=float)
    g = np.empty(u.size)
    for i in range(u.size):
        h = rel_step * (1.0 + abs(u[i]))
        e = np.zeros(u.size)
        e[i] = h
        g[i] = (f(u + e) - f(u - e)) / (2.0 * h)
    return g


# -- strong convexity of the pseudolinear objective ---------------------------------


@dataclass(frozen=True)
class StrongConvexityReport:
    threshold: float
    satisfied: bool
    sampled_min_hessian_eig: float
    lam: float
    A_max: float
    y_max: float


def pseudolinear_hessian(A, eps, lam, y, x):
    """Entrywise Hessian of ``0.5||Ax + eps sin x - y||^2 + 0.5 lam ||x||^2``.

    Diagonal:  sum_j A_ji^2 - eps sin x_i (A_i x + eps sin x_i - y_i)
               + 2 A_ii eps cos x_i + eps^2 cos^2 x_i + lam
    Off-diag:  sum_j A_ji A_jl + A_li eps cos x_l + A_il eps cos x_i
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c = eps * np.cos(x)
    s = eps * np.sin(x)
    resid = A @ x + s - y
    H = A.T @ A + A.T * c[None, :] + A * c[:, None]
    H[np.diag_indices_from(H)] += -s * resid + c * c + lam
    return H


def check_strong_convexity_pseudolinear(A, eps, lam, y, B, n_sample=100, seed=0):
    """Sufficient strong-convexity condition for the pseudolinear objective.

    The condition is ``lam > ((4 + B) * A_max + y_max) * eps + eps^2``, where
    ``B`` bounds the norm of feasible points. The minimum Hessian eigenvalue is
    also sampled at ``n_sample`` seeded points drawn uniformly from the ball of
    radius ``B``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    A_max = float(np.max(np.abs(A)))
    y_max = float(np.max(np.abs(y)))
    threshold = ((4.0 + B) * A_max + y_max) * eps + eps ** 2
    rng = np.random.default_rng(seed)
    n = A.shape[1]
    min_eig = np.inf
    for _ in range(n_sample):
        x = _uniform_ball(rng, n, B)
        H = pseudolinear_hessian(A, eps, lam, y, x)
        min_eig = min(min_eig, float(np.linalg.eigvalsh(0.5 * (H + H.T))[0]))
    return StrongConvexityReport(threshold, bool(lam > threshold), min_eig, lam, A_max, y_max)


def _uniform_ball(rng, n, radius):
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    return radius * rng.uniform() ** (1.0 / n) * v
