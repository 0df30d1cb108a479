"""Pure NumPy versions of the compiled kernels in ``_core.pyx``."""

import numpy as np


def ensemble_moments(U, G):
    J = U.shape[0]
    mean_u = U.mean(axis=0)
    mean_g = G.mean(axis=0)
    Eu = np.ascontiguousarray((U - mean_u).T)
    Eg = np.ascontiguousarray((G - mean_g).T)
    cov = (Eu @ Eu.T) / J
    cross = (Eu @ Eg.T) / J
    return mean_u, mean_g, Eu, Eg, cov, cross


def p1_assemble_dense(kappa, tri, local, free_index, n_free):
    rows = free_index[tri]  # (n_tri, 3)
    ii = np.broadcast_to(rows[:, :, None], local.shape)
    jj = np.broadcast_to(rows[:, None, :], local.shape)
    vals = kappa[:, None, None] * local
    keep = (ii >= 0) & (jj >= 0)
    flat = ii[keep] * n_free + jj[keep]
    A = np.bincount(flat, weights=vals[keep], minlength=n_free * n_free)
    return A.reshape(n_free, n_free)


def rms_error_norm(err, y0, y1, atol, rtol):
    if err.size == 0:
        return 0.0
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))
