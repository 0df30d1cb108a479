"""Built-in inverse problems and their Gaussian priors.

* :class:`Heat1DModel` -- one implicit-Euler step of the 1-D heat equation with a
  sinusoidal perturbation, ``G(u) = A u + eps * sin(u)``.
* :class:`Darcy2DModel` -- P1 finite elements for ``-div(exp(u) grad p) = f`` on
  the unit square with ``p = 0`` on the boundary, observed at scattered points.
* :class:`KLPrior1D`, :class:`KLPrior2D` -- truncated Karhunen-Loeve samplers.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from . import _kernels
from .constraints import BoxBounds
from .errors import InvalidBoundsError, InvalidInputError, SolverFailureError
from .potentials import ForwardModel, PseudolinearModel

# dense factorization is faster than sparse LU below this many unknowns
_DENSE_LIMIT = 1600


# -- 1-D heat source problem --------------------------------------------------------


def second_difference(n, dx):
    """Three-point Laplacian on ``n`` interior nodes with Dirichlet rows removed."""
    D = np.diag(np.full(n, -2.0)) + np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
    return D / dx ** 2


class Heat1DModel(PseudolinearModel):
    """Pseudolinear heat-source model; every interior node is observed (``K = d``)."""

    def __init__(self, dx, dt, eps, **data):
        n = int(round(1.0 / dx))
        if n < 2 or abs(n * dx - 1.0) > 1e-12:
            raise InvalidInputError(f"dx={dx} must divide 1 into at least 2 cells")
        if not dt > 0:
            raise InvalidInputError("dt must be positive")
        self.n_interior = n - 1
        self.dx = float(dx)
        self.dt = float(dt)
        self.grid = dx * np.arange(1, n)
        M = np.eye(n - 1) - dt * second_difference(n - 1, dx)
        A = dt * np.linalg.solve(M, np.eye(n - 1))
        super().__init__(0.5 * (A + A.T), eps, **data)


def build_heat1d(dx=0.01, dt=0.05, eps=0.1, **data):
    return Heat1DModel(dx, dt, eps, **data)


# -- Karhunen-Loeve priors ------------------------------------------------------------


class KLPrior1D:
    """Squared-exponential field ``sigma2 * exp(-|s - t|^2 / L_sc)`` on a grid.

    Eigenpairs are those of the kernel matrix on the grid, sorted by decreasing
    eigenvalue, with Euclidean-orthonormal eigenvectors.
    """

    def __init__(self, grid, sigma2=10.0, L_sc=0.1, r=12):
        self.grid = np.asarray(grid, dtype=float)
        d = self.grid.size
        if not 1 <= r <= d:
            raise InvalidInputError(f"truncation r={r} must lie in [1, {d}]")
        self.sigma2 = float(sigma2)
        self.L_sc = float(L_sc)
        self.r = int(r)
        diff = self.grid[:, None] - self.grid[None, :]
        self.kernel = self.sigma2 * np.exp(-diff ** 2 / self.L_sc)
        lam, vec = scipy.linalg.eigh(self.kernel)
        lam, vec = lam[::-1], vec[:, ::-1]
        if np.any(lam[:r] <= 0):
            warnings.warn("kernel matrix has nonpositive leading eigenvalues; clamping at 0",
                          RuntimeWarning, stacklevel=2)
        self.eigenvalues = np.clip(lam, 0.0, None)
        self.eigenvectors = vec

    @property
    def d(self):
        return self.grid.size

    def covariance(self, nugget=1e-9):
        """Kernel matrix plus ``nugget * lambda_max`` on the diagonal (for a usable C0)."""
        return self.kernel + nugget * self.eigenvalues[0] * np.eye(self.d)

    def truncated_covariance(self):
        E = self.eigenvectors[:, :self.r]
        return (E * self.eigenvalues[:self.r]) @ E.T


def sample_kl_1d(prior, count, seed, xi=None):
    """``count`` draws ``sum_{i<=r} sqrt(lambda_i) e_i xi_i`` as rows of a ``(count, d)`` array.

    ``xi`` (shape ``(count, r)``) overrides the seeded standard normals.
    """
    if xi is None:
        xi = np.random.default_rng(seed).standard_normal((count, prior.r))
    xi = np.asarray(xi, dtype=float).reshape(count, prior.r)
    scaled = prior.eigenvectors[:, :prior.r] * np.sqrt(prior.eigenvalues[:prior.r])
    return xi @ scaled.T


def kl2d_modes(s):
    """First ``s`` pairs of ``{1..s}^2`` ordered by ``k^2 + l^2``, ties by ``(k, l)``."""
    pairs = [(k, l) for k in range(1, s + 1) for l in range(1, s + 1)]
    pairs.sort(key=lambda kl: (kl[0] ** 2 + kl[1] ** 2, kl[0], kl[1]))
    return np.array(pairs[:s], dtype=int)


class KLPrior2D:
    """Cosine-series field ``sum_j sqrt(lambda_j) cos(pi k_j x1) cos(pi l_j x2) xi_j``.

    ``lambda_j = (pi^2 (k_j^2 + l_j^2) + tau_prior^2)^(-alpha)``, evaluated at
    the nodes ``points`` (shape ``(d, 2)``).
    """

    def __init__(self, points, tau_prior=0.01, alpha=2.0, s=25):
        self.points = np.asarray(points, dtype=float)
        self.tau_prior = float(tau_prior)
        self.alpha = float(alpha)
        self.s = int(s)
        self.modes = kl2d_modes(self.s)
        k, l = self.modes[:, 0], self.modes[:, 1]
        self.eigenvalues = (np.pi ** 2 * (k ** 2 + l ** 2) + self.tau_prior ** 2) ** (-self.alpha)
        x1, x2 = self.points[:, 0:1], self.points[:, 1:2]
        self.basis = np.cos(np.pi * x1 * k) * np.cos(np.pi * x2 * l)  # (d, s)

    @property
    def d(self):
        return self.points.shape[0]

    def covariance(self, nugget=1e-9):
        """``E diag(lambda) E^T`` plus ``nugget`` times its largest eigenvalue on the diagonal."""
        C = (self.basis * self.eigenvalues) @ self.basis.T
        top = scipy.linalg.eigvalsh(C, subset_by_index=[self.d - 1, self.d - 1])[0]
        return C + nugget * top * np.eye(self.d)


def sample_kl_2d(prior, count, seed, xi=None):
    """``count`` draws of the 2-D field as rows of a ``(count, d)`` array."""
    if xi is None:
        xi = np.random.default_rng(seed).standard_normal((count, prior.s))
    xi = np.asarray(xi, dtype=float).reshape(count, prior.s)
    return xi @ (prior.basis * np.sqrt(prior.eigenvalues)).T


# -- 2-D Darcy flow ------------------------------------------------------------------


def _unit_square_mesh(n):
    """Nodes of an ``n x n`` grid (node ``i + n*j`` at ``(i, j)/(n-1)``) and triangles."""
    h = 1.0 / (n - 1)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    points = np.column_stack([i.ravel() * h, j.ravel() * h])
    ci, cj = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="xy")
    n00 = (ci + n * cj).ravel()
    n10, n01, n11 = n00 + 1, n00 + n, n00 + n + 1
    tri = np.concatenate([np.column_stack([n00, n10, n11]), np.column_stack([n00, n11, n01])])
    return points, tri


def _p1_local_stiffness(points, tri):
    """``(n_tri, 3, 3)`` stiffness matrices for unit coefficient, and triangle areas."""
    P = points[tri]  # (n_tri, 3, 2)
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    area = 0.5 * np.abs(det)
    # barycentric gradients: rows of inv([e1 e2]^T) give grads of phi_1, phi_2
    inv = np.empty((len(tri), 2, 2))
    inv[:, 0, 0] = e2[:, 1] / det
    inv[:, 0, 1] = -e2[:, 0] / det
    inv[:, 1, 0] = -e1[:, 1] / det
    inv[:, 1, 1] = e1[:, 0] / det
    grads = np.empty((len(tri), 3, 2))
    grads[:, 1] = inv[:, 0]
    grads[:, 2] = inv[:, 1]
    grads[:, 0] = -grads[:, 1] - grads[:, 2]
    local = area[:, None, None] * np.einsum("tik,tjk->tij", grads, grads)
    return local, area


class Darcy2DModel(ForwardModel):
    """P1 finite-element Darcy model with log-coefficient ``u`` at every node.

    The coefficient on a triangle is ``exp`` of the mean of its three nodal
    values. Observations are P1 interpolants of the pressure at ``k_obs``
    points drawn uniformly from ``(0.1, 0.9)^2`` with ``obs_seed``.
    """

    has_jacobian = True

    def __init__(self, n, f=1.0, k_obs=50, obs_seed=0, obs_points=None, **data):
        if n < 3:
            raise InvalidInputError("need n >= 3 nodes per side")
        self.n = int(n)
        self.f = float(f)
        self.points, self.tri = _unit_square_mesh(self.n)
        self.local, self.area = _p1_local_stiffness(self.points, self.tri)
        gi, gj = np.divmod(np.arange(n * n), n)[::-1]
        interior = (gi > 0) & (gi < n - 1) & (gj > 0) & (gj < n - 1)
        self.free = np.flatnonzero(interior)
        self.free_index = np.full(n * n, -1, dtype=np.intp)
        self.free_index[self.free] = np.arange(self.free.size)
        load = np.zeros(n * n)
        np.add.at(load, self.tri, np.repeat(self.area[:, None] / 3.0, 3, axis=1))
        self.load_unit = load[self.free]
        if obs_points is None:
            obs_points = np.random.default_rng(obs_seed).uniform(0.1, 0.9, size=(k_obs, 2))
        self.obs_points = np.asarray(obs_points, dtype=float).reshape(-1, 2)
        self.obs_seed = obs_seed
        self.O = self._observation_matrix(self.obs_points)
        self.O_free = self.O[:, self.free]
        self._tri_c = np.ascontiguousarray(self.tri, dtype=np.intp)
        self._local_c = np.ascontiguousarray(self.local)
        super().__init__(n * n, self.obs_points.shape[0], **data)

    def _observation_matrix(self, pts):
        n = self.n
        h = 1.0 / (n - 1)
        O = np.zeros((pts.shape[0], n * n))
        for r, (x, y) in enumerate(pts):
            i = min(int(x / h), n - 2)
            j = min(int(y / h), n - 2)
            xi, eta = x / h - i, y / h - j
            k00 = i + n * j
            if xi >= eta:
                O[r, [k00, k00 + 1, k00 + n + 1]] = [1 - xi, xi - eta, eta]
            else:
                O[r, [k00, k00 + n + 1, k00 + n]] = [1 - eta, xi, eta - xi]
        return O

    def coefficients(self, u):
        return np.exp(np.asarray(u, dtype=float)[self.tri].mean(axis=1))

    def stiffness(self, kappa):
        """Reduced stiffness matrix over the interior nodes (dense or CSC sparse)."""
        m = self.free.size
        if m <= _DENSE_LIMIT:
            return _kernels.p1_assemble_dense(np.ascontiguousarray(kappa), self._tri_c,
                                              self._local_c, self.free_index, m)
        rows = self.free_index[self.tri]
        ii = np.broadcast_to(rows[:, :, None], self.local.shape)
        jj = np.broadcast_to(rows[:, None, :], self.local.shape)
        keep = (ii >= 0) & (jj >= 0)
        vals = (kappa[:, None, None] * self.local)[keep]
        return scipy.sparse.csc_matrix((vals, (ii[keep], jj[keep])), shape=(m, m))

    def _factor(self, kappa):
        K = self.stiffness(kappa)
        try:
            if scipy.sparse.issparse(K):
                lu = scipy.sparse.linalg.splu(K)
                return lu.solve
            cho = scipy.linalg.cho_factor(K, lower=True, check_finite=False)
            return lambda b: scipy.linalg.cho_solve(cho, b, check_finite=False)
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            raise SolverFailureError(f"stiffness matrix is singular: {exc}") from exc

    def pressure(self, u, _solver=None):
        """Full nodal pressure (boundary entries zero)."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.d,) or not np.all(np.isfinite(u)):
            raise InvalidInputError("u must be a finite nodal vector of length n*n")
        solve = _solver or self._factor(self.coefficients(u))
        p = np.zeros(self.d)
        p[self.free] = solve(self.f * self.load_unit)
        return p

    def pressure_at(self, u, points):
        """P1 interpolant of the pressure at ``(k, 2)`` points of the unit square."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != 2 or np.any(pts < 0) or np.any(pts > 1):
            raise InvalidInputError("points must be an (k, 2) array inside the unit square")
        return self._observation_matrix(pts) @ self.pressure(u)

    def apply(self, u):
        return self.O @ self.pressure(u)

    def jacobian(self, u):
        """``dG/du`` by one adjoint solve per observation."""
        u = np.asarray(u, dtype=float)
        kappa = self.coefficients(u)
        solve = self._factor(kappa)
        p = self.pressure(u, solve)
        # column k of B is sum over triangles T containing k of (kappa_T/3) K_T p_T
        v = np.einsum("tij,tj->ti", self.local, p[self.tri]) * (kappa / 3.0)[:, None]
        rows = self.free_index[self.tri]  # (n_tri, 3)
        B = np.zeros((self.free.size, self.d))
        for a in range(3):  # node of T receiving the test function
            ok = rows[:, a] >= 0
            for b in range(3):  # node of T whose parameter is perturbed
                np.add.at(B, (rows[ok, a], self.tri[ok, b]), v[ok, a])
        W = solve(self.O_free.T)
        return -W.T @ B


def solve_darcy(model, u):
    """Pressure field and observations ``(p, O p)`` at log-coefficient ``u``."""
    p = model.pressure(u)
    return p, model.O @ p


def build_darcy2d(n=32, f=1.0, k_obs=50, obs_seed=0, **data):
    return Darcy2DModel(n, f=f, k_obs=k_obs, obs_seed=obs_seed, **data)


# -- helpers ------------------------------------------------------------------------


def make_box_from_truth(u_truth, slack=0.3):
    """Uniform box ``[min + slack|min|, max - slack|max|]`` on every component.

    Raises
    ------
    InvalidBoundsError
        If the resulting interval is empty.
    """
    u = np.asarray(u_truth, dtype=float)
    lo, hi = float(u.min()), float(u.max())
    a = lo + slack * abs(lo)
    b = hi - slack * abs(hi)
    if not a < b:
        raise InvalidBoundsError(f"degenerate box from truth range: a={a} >= b={b}")
    return BoxBounds.uniform(a, b, u.size)


@dataclass(frozen=True)
class SyntheticData:
    truth: np.ndarray
    clean: np.ndarray
    y: np.ndarray
    noise_std: float


def synthesize_data(model, truth, noise_std, seed):
    """``y = G(truth) + noise_std * N(0, I)`` with a seeded generator."""
    clean = model.apply(truth)
    y = clean + noise_std * np.random.default_rng(seed).standard_normal(clean.size)
    return SyntheticData(np.asarray(truth, dtype=float), clean, y, float(noise_std))
