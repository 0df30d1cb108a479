"""Theory overlays evaluated on trajectory records.

The collapse bound, the eigenvalue lower bound and the gradient-flow
approximation error are computed here and compared with recorded runs.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InvalidInputError, UndefinedRateError

SLACK = 0.05


@dataclass(frozen=True)
class TheoryConstants:
    """Problem constants feeding the collapse and eigenvalue bounds.

    ``sigma_min`` and ``sigma_max`` are the extreme eigenvalues of ``C0``,
    ``lambda_max`` the largest eigenvalue of ``Gamma^{-1}``. ``a``, ``c``,
    ``w`` and ``k1`` parametrize the eigenvalue lower bound
    ``w / ((c + w max(k1, 0)) (t + b))`` valid from ``t_circ`` on; ``a`` needs
    a Lipschitz estimate ``c_lip`` and is ``nan`` without one. ``mu`` and
    ``L`` are strong-convexity and smoothness estimates when available.
    """

    sigma_min: float
    sigma_max: float
    lambda_max: float
    J: int
    V0: float
    lam: float = 0.0
    beta: float = 0.0
    c_lip: float = math.nan
    rho_circ: float = 0.0
    eta_circ: float = math.nan
    t_circ: float = 0.0
    mu: float = math.nan
    L: float = math.nan

    def __post_init__(self):
        if not self.sigma_min > 0:
            raise InvalidInputError("sigma_min must be positive")
        if self.J < 2 or not self.V0 > 0:
            raise InvalidInputError("need J >= 2 and V0 > 0")

    @property
    def b(self):
        return self.J / (self.V0 * 2.0 * self.sigma_min)

    @property
    def c(self):
        return 2.0 * self.sigma_max

    @property
    def a(self):
        return (1.0 - self.rho_circ) * self.c_lip ** 2 * self.lambda_max * self.J / self.sigma_min

    @property
    def w(self):
        return 1.0 - self.a

    @property
    def k1(self):
        a, b, c = self.a, self.b, self.c
        return ((1 - a) - self.eta_circ * c * b) / ((1 - a) * b ** a * self.eta_circ)

    @property
    def sigma_provable(self):
        """Collapse rate constant ``lam (1 - beta) / sigma_max`` for the regularized flows.

        The regularization part of the spread dynamics alone gives
        ``dV/dt <= -8 lam (1 - beta) V^2 / ((J - 1) sigma_max)``, so the
        collapse bound holds with this value in place of ``sigma_min``.
        """
        return self.lam * (1.0 - self.beta) / self.sigma_max

    def as_dict(self):
        d = asdict(self)
        for k in ("a", "b", "c", "w", "k1", "sigma_provable"):
            d[k] = getattr(self, k)
        return d


def theory_constants(model, ens0, lam=0.0, beta=0.0, **kw):
    """Constants of ``model`` and the initial ensemble."""
    C0 = model.C0
    ev = C0.eigenvalues()
    gamma_ev = model.Gamma.eigenvalues()
    e = ens0.particles - ens0.mean
    V0 = 0.5 * float(np.sum(e * e)) / ens0.J
    return TheoryConstants(float(ev[0]), float(ev[-1]), float(1.0 / gamma_ev[0]), ens0.J, V0,
                           lam, beta, **kw)


def collapse_bound(t, constants, sigma=None):
    """``1 / ((2 sigma / J) t + 1 / V0)``; ``sigma`` defaults to ``sigma_min``."""
    s = constants.sigma_min if sigma is None else sigma
    t = np.asarray(t, dtype=float)
    return 1.0 / ((2.0 * s / constants.J) * t + 1.0 / constants.V0)


@dataclass(frozen=True)
class BoundOverlay:
    t: np.ndarray
    value: np.ndarray
    bound: np.ndarray
    violations: int
    max_ratio: float


def collapse_bound_overlay(record, constants, sigma=None, slack=SLACK):
    """Evaluate the collapse bound at every checkpoint of ``record``.

    A checkpoint violates the bound when ``V_e > (1 + slack) * bound``.

    Raises
    ------
    InvalidInputError
        If the record is empty.
    """
    if len(record) == 0:
        raise InvalidInputError("record is empty")
    t = record.array("t")
    v = record.array("V_e")
    bound = collapse_bound(t, constants, sigma)
    viol = int(np.sum(v > (1.0 + slack) * bound))
    return BoundOverlay(t, v, bound, viol, float(np.max(v / bound)))


def eigen_lower_bound(t, constants):
    """``w / ((c + w max(k1, 0)) (t + b))``; meaningful for ``t >= t_circ``."""
    c = constants
    return c.w / ((c.c + c.w * max(c.k1, 0.0)) * (np.asarray(t, dtype=float) + c.b))


def _window(n, window):
    if not 0 < window <= 1:
        raise InvalidInputError("window must lie in (0, 1]")
    return max(int(math.ceil(window * n)), 1)


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``.

    Raises
    ------
    UndefinedRateError
        With fewer than 10 points or any nonpositive value.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 10:
        raise UndefinedRateError(f"need at least 10 points, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise UndefinedRateError("log-log fit needs positive finite values")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def rate_estimate(record, field="V_e", window=0.3):
    """Log-log slope of ``field`` against ``t`` over the last ``window`` of checkpoints.

    ``field="error"`` selects the parameter error column.
    """
    name = "err_param" if field == "error" else field
    t = record.array("t")
    y = record.array(name)
    keep = t > 0
    t, y = t[keep], y[keep]
    k = _window(t.size, window)
    return loglog_slope(t[-k:], y[-k:])


def grad_flow_error(ens, model):
    """``||C_uG Gamma^{-1} (mean G - y) - C DG(mean)^T Gamma^{-1} (G(mean) - y)||``.

    The first term is what the flow uses, the second the preconditioned
    gradient of the misfit at the mean. They agree for linear models.
    """
    U = ens.particles
    J = U.shape[0]
    G = model.apply_batch(U)
    mean_u = U.mean(axis=0)
    Eu = U - mean_u
    Eg = G - G.mean(axis=0)
    cross = Eu.T @ Eg / J
    cov = Eu.T @ Eu / J
    flow = cross @ model.Gamma.solve(G.mean(axis=0) - model.y)
    grad = model.jacobian(mean_u).T @ model.Gamma.solve(model.apply(mean_u) - model.y)
    return float(np.linalg.norm(flow - cov @ grad))


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    max_ratio: float
    n_points: int


def grad_flow_error_scaling(err, V_e, phi, window=0.3):
    """Fit ``log err`` against ``log V_e`` over the late ``window`` of the run.

    Also reports ``max err / (sqrt(phi) V_e^{3/2})`` over all points with
    positive spread.
    """
    err = np.asarray(err, dtype=float)
    V = np.asarray(V_e, dtype=float)
    phi = np.asarray(phi, dtype=float)
    k = _window(err.size, window)
    exponent = loglog_slope(V[-k:], err[-k:])
    pos = (V > 0) & (phi > 0)
    ratio = err[pos] / (np.sqrt(phi[pos]) * V[pos] ** 1.5)
    return ScalingFit(exponent, float(np.max(ratio)) if ratio.size else 0.0, k)
