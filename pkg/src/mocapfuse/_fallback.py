"""Numpy implementations of the hot kernels.

Always available; the compiled module in ``_kernels`` mirrors these
signatures exactly and is preferred when it was built.
"""

import numpy as np

DIST_EPS = 1e-12


def ssm_scan(a_bar, b_bar, c, x):
    """Run diagonal linear recurrences over a sequence.

    a_bar, b_bar, c: (H, N) per-channel state parameters.
    x: (L, H) input. Returns y: (L, H) with h_t = a_bar*h_{t-1} + b_bar*x_t and
    y_t = sum_n c*h_t.
    """
    a_bar = np.asarray(a_bar, dtype=np.float64)
    b_bar = np.asarray(b_bar, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    L = x.shape[0]
    h = np.zeros(a_bar.shape)
    y = np.empty(x.shape)
    for t in range(L):
        h = a_bar * h + b_bar * x[t][:, None]
        y[t] = np.sum(c * h, axis=1)
    return y


def distance_residual(pos1, pos2, obs, mask):
    """Masked squared error between sensor-pair distances and observations.

    pos1: (L, S, 3), pos2: (L, M, 3), obs and mask: (L, S, M).
    Returns (value, g1, g2) where g1, g2 are (L, 3) gradients of the value
    with respect to a rigid per-frame translation of each sensor set.
    """
    pos1 = np.asarray(pos1, dtype=np.float64)
    pos2 = np.asarray(pos2, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    diff = pos1[:, :, None, :] - pos2[:, None, :, :]
    dist = np.sqrt(np.einsum("lsmk,lsmk->lsm", diff, diff))
    r = (dist - obs) * m
    value = float(np.sum(r * r))
    w = 2.0 * r / np.maximum(dist, DIST_EPS)
    w[dist < DIST_EPS] = 0.0
    g1 = np.einsum("lsm,lsmk->lk", w, diff)
    return value, g1, -g1
