"""Cached factorizations of symmetric positive definite matrices."""

import numpy as np
import scipy.linalg

from .errors import FactorizationError


class SPDMatrix:
    """A symmetric positive definite matrix held with its Cholesky factor.

    Only solves are exposed; the inverse is never formed. The weighted
    squared norm follows ``||x||^2_S = <x, S^{-1} x>``.

    Parameters
    ----------
    matrix : array_like, shape (n, n)
        Must be symmetric to round-off and positive definite.
    """

    def __init__(self, matrix):
        a = np.array(matrix, dtype=float, copy=True)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise FactorizationError(f"expected a square matrix, got shape {a.shape}")
        scale = max(np.max(np.abs(a)), 1.0)
        if not np.all(np.isfinite(a)) or np.max(np.abs(a - a.T)) > 1e-10 * scale:
            raise FactorizationError("matrix is not symmetric and finite")
        a = 0.5 * (a + a.T)
        try:
            self._cho = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(f"matrix is not positive definite: {exc}") from exc
        self.matrix = a
        self.n = a.shape[0]
        self._diag = np.all(a == np.diag(np.diag(a)))
        self._eig = None

    @classmethod
    def identity(cls, n, scale=1.0):
        return cls(scale * np.eye(n))

    def solve(self, b):
        """Return ``S^{-1} b`` for a vector or a matrix of column vectors."""
        b = np.asarray(b, dtype=float)
        if self._diag:
            d = np.diag(self.matrix)
            return b / d if b.ndim == 1 else b / d[:, None]
        return scipy.linalg.cho_solve(self._cho, b, check_finite=False)

    def quad(self, x):
        """``<x, S^{-1} x>``."""
        x = np.asarray(x, dtype=float)
        return float(x @ self.solve(x))

    def eigenvalues(self):
        """Ascending eigenvalues of the matrix (cached)."""
        if self._eig is None:
            self._eig = scipy.linalg.eigvalsh(self.matrix)
        return self._eig

    @property
    def min_eig(self):
        return float(self.eigenvalues()[0])

    @property
    def max_eig(self):
        return float(self.eigenvalues()[-1])

    def __repr__(self):
        return f"SPDMatrix(n={self.n})"


def as_spd(matrix):
    """Wrap ``matrix`` unless it already is an :class:`SPDMatrix`."""
    return matrix if isinstance(matrix, SPDMatrix) else SPDMatrix(matrix)
