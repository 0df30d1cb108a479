"""Convex inequality constraints ``h_i(u) <= 0``, log-barriers and box projection."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import FeasibilityMarginError, InvalidBoundsError, InvalidInputError
from .linalg import as_spd

#: relative strict-feasibility margin; barrier drifts refuse points closer than this
FEAS_RTOL = 1e-10


@dataclass(frozen=True)
class ConvexConstraint:
    """A single convex constraint ``h(u) <= 0`` with its gradient.

    ``scale`` is a typical magnitude of ``h`` and sets the feasibility margin
    ``FEAS_RTOL * (1 + scale)``. ``hess_apply(u, V)``, when given, returns the
    Hessian of ``h`` at ``u`` applied to the columns of ``V``.
    """

    evaluate: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    kind: str = "custom"
    scale: float = 1.0
    hess_apply: Optional[Callable] = None


@dataclass(frozen=True)
class BoxBounds:
    """Bounds ``lower[k] <= u[indices[k]] <= upper[k]``.

    ``indices`` defaults to ``0 .. len(lower)-1``.
    """

    lower: np.ndarray
    upper: np.ndarray
    indices: Optional[np.ndarray] = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InvalidBoundsError("lower and upper must be 1-D arrays of equal length")
        idx = np.arange(lo.size) if self.indices is None else np.asarray(self.indices, dtype=int)
        if idx.shape != lo.shape:
            raise InvalidBoundsError("indices must match the number of bounds")
        if np.unique(idx).size != idx.size:
            raise InvalidBoundsError("constrained indices must be distinct")
        if not np.all(lo < hi):
            bad = int(np.argmin(hi - lo))
            raise InvalidBoundsError(
                f"lower bound {lo[bad]} >= upper bound {hi[bad]} at index {idx[bad]}"
            )
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "indices", idx)

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @classmethod
    def uniform(cls, a, b, d):
        return cls(np.full(d, float(a)), np.full(d, float(b)))


class ConstraintSet:
    """An immutable collection of m convex constraints.

    Factories for structured constraints install vectorized evaluators; a set
    built from arbitrary :class:`ConvexConstraint` objects loops over them.

    Parameters
    ----------
    constraints : sequence of ConvexConstraint
    witness : array_like, optional
        A strictly interior point, when one is known.
    """

    def __init__(self, constraints=(), witness=None, *, box=None, _values=None, _wsum=None,
                 _grads=None):
        self.constraints = tuple(constraints)
        self._grads = _grads
        self.witness = None if witness is None else np.asarray(witness, dtype=float)
        self.box = box
        self._values = _values
        self._wsum = _wsum
        self.eps = FEAS_RTOL * (1.0 + np.abs([c.scale for c in self.constraints]))

    @property
    def m(self):
        return len(self.constraints)

    def __len__(self):
        return self.m

    def values(self, u):
        """All ``h_i(u)`` as an ``(m,)`` array."""
        if self._values is not None:
            return self._values(u)
        return np.array([c.evaluate(u) for c in self.constraints], dtype=float)

    def gradients(self, u):
        """``(m, d)`` array of gradients."""
        u = np.asarray(u, dtype=float)
        if self.m == 0:
            return np.zeros((0, u.size))
        if self._grads is not None:
            return self._grads(u)
        return np.array([c.gradient(u) for c in self.constraints], dtype=float)

    def weighted_gradient_sum(self, u, w):
        """``sum_i w_i grad h_i(u)``."""
        if self._wsum is not None:
            return self._wsum(u, w)
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.size)
        for wi, c in zip(w, self.constraints):
            out += wi * c.gradient(u)
        return out

    def weighted_hessian_apply(self, u, w, V, fd_step=1e-6):
        """``sum_i w_i H_i(u) V`` for a ``(d, r)`` matrix ``V``.

        Constraints without ``hess_apply`` use central differences of their
        gradient along the columns of ``V``.
        """
        u = np.asarray(u, dtype=float)
        V = np.asarray(V, dtype=float)
        out = np.zeros_like(V)
        if all(c.kind == "affine" for c in self.constraints):
            return out
        for wi, c in zip(w, self.constraints):
            if c.kind == "affine" or wi == 0:
                continue
            if c.hess_apply is not None:
                out += wi * c.hess_apply(u, V)
                continue
            for k in range(V.shape[1]):
                h = fd_step * (1.0 + np.linalg.norm(u))
                out[:, k] += wi * (c.gradient(u + h * V[:, k]) - c.gradient(u - h * V[:, k])) / (2 * h)
        return out

    def __repr__(self):
        kinds = sorted({c.kind for c in self.constraints})
        return f"ConstraintSet(m={self.m}, kinds={kinds})"


def make_box(bounds):
    """Affine constraints ``a_i - u_i <= 0`` (first m) and ``u_i - b_i <= 0`` (last m)."""
    lo, hi, idx = bounds.lower, bounds.upper, bounds.indices
    cons = []
    for a, i in zip(lo, idx):
        cons.append(ConvexConstraint(
            lambda u, a=a, i=i: a - u[i], _unit_grad(i, -1.0), "affine", abs(a), _zero_hess))
    for b, i in zip(hi, idx):
        cons.append(ConvexConstraint(
            lambda u, b=b, i=i: u[i] - b, _unit_grad(i, 1.0), "affine", abs(b), _zero_hess))

    def values(u):
        ui = np.asarray(u, dtype=float)[idx]
        return np.concatenate([lo - ui, ui - hi])

    def wsum(u, w):
        w = np.asarray(w, dtype=float)
        out = np.zeros(np.asarray(u).size)
        m = idx.size
        np.add.at(out, idx, w[m:] - w[:m])
        return out

    def grads(u):
        d = np.asarray(u).size
        m = idx.size
        G = np.zeros((2 * m, d))
        G[np.arange(m), idx] = -1.0
        G[m + np.arange(m), idx] = 1.0
        return G

    return ConstraintSet(cons, witness=None, box=bounds, _values=values, _wsum=wsum,
                         _grads=grads)


def _zero_hess(u, V):
    return np.zeros_like(np.asarray(V, dtype=float))


def _unit_grad(i, sign):
    def grad(u):
        g = np.zeros(np.asarray(u).size)
        g[i] = sign
        return g
    return grad


def make_affine(C, delta):
    """Constraints ``<c_j, u> + delta_j <= 0`` for rows ``c_j`` of ``C``."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    if C.shape[0] != delta.size:
        raise InvalidInputError("C must have one row per offset in delta")
    cons = [
        ConvexConstraint(lambda u, c=c, dl=dl: float(c @ u) + dl, lambda u, c=c: c.copy(),
                         "affine", abs(dl), _zero_hess)
        for c, dl in zip(C, delta)
    ]
    return ConstraintSet(cons, _values=lambda u: C @ u + delta, _wsum=lambda u, w: C.T @ w,
                         _grads=lambda u: C.copy())


def make_norm_ball(C0, radius_sq_half):
    """The single constraint ``0.5 <u, C0^{-1} u> - r <= 0``.

    Raises
    ------
    FactorizationError
        If ``C0`` is not symmetric positive definite.
    """
    C0 = as_spd(C0)
    r = float(radius_sq_half)
    if not r > 0:
        raise InvalidInputError(f"radius parameter must be positive, got {r}")

    def h(u):
        return 0.5 * C0.quad(u) - r

    def grad(u):
        return C0.solve(np.asarray(u, dtype=float))

    con = ConvexConstraint(h, grad, "norm-ball", r, lambda u, V: C0.solve(V))

    def wsum(u, w):
        return w[0] * grad(u)

    return ConstraintSet([con], witness=np.zeros(C0.n),
                         _values=lambda u: np.array([h(u)]), _wsum=wsum)


def feasibility_margin(cs, u):
    """``max_i h_i(u)``; negative iff ``u`` is strictly interior, ``-inf`` if ``m = 0``."""
    if cs.m == 0:
        return -np.inf
    return float(np.max(cs.values(u)))


def barrier_value(cs, u, tau):
    """``-(1/tau) sum_i log(-h_i(u))``, or ``+inf`` unless every ``h_i(u) < 0``."""
    if cs.m == 0:
        return 0.0
    h = cs.values(u)
    if not np.all(h < 0):
        return np.inf
    return -float(np.sum(np.log(-h))) / tau


def barrier_drift(cs, u, tau):
    """``(1/tau) sum_i grad h_i(u) / h_i(u)``, which equals ``-grad barrier_value``.

    Raises
    ------
    FeasibilityMarginError
        If some ``h_i(u) >= -eps_i``.
    """
    u = np.asarray(u, dtype=float)
    if cs.m == 0:
        return np.zeros(u.size)
    h = cs.values(u)
    if not np.all(h < -cs.eps):
        margin = float(np.max(h))
        raise FeasibilityMarginError(
            f"point within feasibility margin (max h = {margin:.3e})", margin=margin)
    return cs.weighted_gradient_sum(u, 1.0 / h) / tau


def project_box(bounds, u):
    """Clamp the constrained components of ``u`` (a point or rows of points) into the box."""
    out = np.array(u, dtype=float, copy=True)
    idx = bounds.indices
    out[..., idx] = np.clip(out[..., idx], bounds.lower, bounds.upper)
    return out
