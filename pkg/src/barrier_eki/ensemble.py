"""Particle ensembles and their empirical statistics.

Covariances are normalized by ``1/J`` (never ``1/(J-1)``); the collapse bounds
used by the diagnostics depend on that convention.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateSpanError, InvalidInputError

#: relative singular-value cutoff for the span basis
SPAN_RCOND = 1e-12


@dataclass(frozen=True)
class Ensemble:
    """J particles in R^d, stored row-wise as a ``(J, d)`` array."""

    particles: np.ndarray

    def __post_init__(self):
        p = np.array(self.particles, dtype=float)
        if p.ndim != 2:
            raise InvalidInputError(f"particles must be a (J, d) array, got shape {p.shape}")
        if p.shape[0] < 2:
            raise InvalidInputError(f"need J >= 2 particles, got {p.shape[0]}")
        if p.shape[1] < 1:
            raise InvalidInputError("particle dimension must be >= 1")
        p.setflags(write=False)
        object.__setattr__(self, "particles", p)

    @property
    def J(self):
        return self.particles.shape[0]

    @property
    def d(self):
        return self.particles.shape[1]

    @property
    def mean(self):
        return self.particles.mean(axis=0)

    def is_finite(self):
        return bool(np.all(np.isfinite(self.particles)))

    def flat(self):
        return self.particles.ravel().copy()

    @classmethod
    def from_flat(cls, y, J, d):
        return cls(np.asarray(y, dtype=float).reshape(J, d))


@dataclass(frozen=True)
class EnsembleStats:
    """Empirical moments of an ensemble and its forward-model outputs.

    Attributes
    ----------
    mean : (d,) ensemble mean.
    centered : (d, J) columns ``u_j - mean``.
    cov : (d, d) covariance.
    cross_cov : (d, K) cross-covariance with the outputs.
    mean_G : (K,) mean output.
    g_centered : (K, J) columns ``G(u_j) - mean_G``.
    spread : float, ``(1/J) sum_j 0.5 ||u_j - mean||^2``.
    """

    mean: np.ndarray
    centered: np.ndarray
    cov: np.ndarray
    cross_cov: np.ndarray
    mean_G: np.ndarray
    g_centered: np.ndarray
    spread: float

    @property
    def J(self):
        return self.centered.shape[1]


def compute_stats(ens, g_values):
    """Empirical statistics of ``ens`` with outputs ``g_values`` (one row per particle).

    Raises
    ------
    InvalidInputError
        If ``g_values`` does not have exactly J rows.
    """
    U = np.ascontiguousarray(ens.particles, dtype=float)
    G = np.asarray(g_values, dtype=float)
    if G.ndim == 1 and ens.J == G.shape[0]:
        G = G[:, None]
    if G.ndim != 2 or G.shape[0] != ens.J:
        raise InvalidInputError(
            f"g_values must hold one output per particle ({ens.J}), got shape {G.shape}"
        )
    G = np.ascontiguousarray(G)
    mean_u, mean_g, Eu, Eg, cov, cross = _kernels.ensemble_moments(U, G)
    spread = 0.5 * float(np.sum(Eu * Eu)) / ens.J
    return EnsembleStats(mean_u, Eu, cov, cross, mean_g, Eg, spread)


def spread(ens):
    """Ensemble spread ``V_e`` without forward-model outputs."""
    e = ens.particles - ens.mean
    return 0.5 * float(np.sum(e * e)) / ens.J


@dataclass(frozen=True)
class AffineSubspace:
    """``offset + span(basis)`` with an orthonormal ``(d, r)`` basis."""

    offset: np.ndarray
    basis: np.ndarray

    @property
    def r(self):
        return self.basis.shape[1]

    @property
    def d(self):
        return self.basis.shape[0]

    @classmethod
    def from_ensemble(cls, ens, rcond=SPAN_RCOND):
        """Affine hull of the initial ensemble.

        The basis comes from a thin SVD of the centered particles, keeping
        singular values above ``rcond`` times the largest. The offset is the
        component of the mean orthogonal to the span.
        """
        mean = ens.mean
        E = (ens.particles - mean).T
        if not np.any(E):
            basis = np.zeros((ens.d, 0))
        else:
            Q, s, _ = np.linalg.svd(E, full_matrices=False)
            basis = Q[:, s > rcond * s[0]]
        offset = mean - basis @ (basis.T @ mean)
        return cls(offset, basis)

    @classmethod
    def full(cls, d):
        return cls(np.zeros(d), np.eye(d))

    def project(self, u):
        """Orthogonal projection of point(s) ``u`` onto the affine set."""
        u = np.asarray(u, dtype=float)
        v = u - self.offset
        return self.offset + (v @ self.basis) @ self.basis.T

    def to_coords(self, u, origin=None):
        """Coordinates ``z`` with ``u = origin + basis z`` (origin defaults to offset)."""
        origin = self.offset if origin is None else origin
        return self.basis.T @ (np.asarray(u, dtype=float) - origin)


def min_eigenvalue_on_span(stats, subspace):
    """Smallest Rayleigh quotient of ``stats.cov`` over unit vectors of the span.

    Raises
    ------
    DegenerateSpanError
        If the subspace has rank zero.
    """
    if subspace.r == 0:
        raise DegenerateSpanError("ensemble span has rank 0")
    B = subspace.basis
    if B.shape[0] != stats.cov.shape[0]:
        raise InvalidInputError("subspace and statistics dimensions differ")
    P = B.T @ stats.cov @ B
    lam = np.linalg.eigvalsh(0.5 * (P + P.T))[0]
    return max(float(lam), 0.0)


def subspace_distance(ens, subspace):
    """Largest Euclidean distance of a particle from the affine subspace."""
    if ens.d != subspace.d:
        raise InvalidInputError("ensemble and subspace dimensions differ")
    V = ens.particles - subspace.offset
    R = V - (V @ subspace.basis) @ subspace.basis.T
    return float(np.max(np.linalg.norm(R, axis=1)))
