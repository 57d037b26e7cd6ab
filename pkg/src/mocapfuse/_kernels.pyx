# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

cdef double DIST_EPS = 1e-12


def ssm_scan(a_bar, b_bar, c, x):
    cdef double[:, ::1] A = np.ascontiguousarray(a_bar, dtype=np.float64)
    cdef double[:, ::1] B = np.ascontiguousarray(b_bar, dtype=np.float64)
    cdef double[:, ::1] C = np.ascontiguousarray(c, dtype=np.float64)
    cdef double[:, ::1] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t L = X.shape[0], H = A.shape[0], N = A.shape[1]
    if X.shape[1] != H or B.shape[0] != H or C.shape[0] != H or B.shape[1] != N or C.shape[1] != N:
        raise ValueError("ssm_scan: inconsistent shapes")
    out = np.empty((L, H))
    cdef double[:, ::1] Y = out
    state = np.zeros((H, N))
    cdef double[:, ::1] S = state
    cdef Py_ssize_t t, h, n
    cdef double acc, xt
    with nogil:
        for t in range(L):
            for h in range(H):
                xt = X[t, h]
                acc = 0.0
                for n in range(N):
                    S[h, n] = A[h, n] * S[h, n] + B[h, n] * xt
                    acc = acc + C[h, n] * S[h, n]
                Y[t, h] = acc
    return out


def distance_residual(pos1, pos2, obs, mask):
    cdef double[:, :, ::1] P1 = np.ascontiguousarray(pos1, dtype=np.float64)
    cdef double[:, :, ::1] P2 = np.ascontiguousarray(pos2, dtype=np.float64)
    cdef double[:, :, ::1] D = np.ascontiguousarray(obs, dtype=np.float64)
    cdef double[:, :, ::1] W = np.ascontiguousarray(mask, dtype=np.float64)
    cdef Py_ssize_t L = P1.shape[0], S = P1.shape[1], M = P2.shape[1]
    if P2.shape[0] != L or D.shape[0] != L or D.shape[1] != S or D.shape[2] != M \
            or W.shape[0] != L or W.shape[1] != S or W.shape[2] != M:
        raise ValueError("distance_residual: inconsistent shapes")
    g1 = np.zeros((L, 3))
    cdef double[:, ::1] G = g1
    cdef Py_ssize_t t, j, k
    cdef double dx, dy, dz, dist, r, w, value = 0.0
    with nogil:
        for t in range(L):
            for j in range(S):
                for k in range(M):
                    dx = P1[t, j, 0] - P2[t, k, 0]
                    dy = P1[t, j, 1] - P2[t, k, 1]
                    dz = P1[t, j, 2] - P2[t, k, 2]
                    dist = sqrt(dx * dx + dy * dy + dz * dz)
                    r = (dist - D[t, j, k]) * W[t, j, k]
                    value = value + r * r
                    if dist >= DIST_EPS:
                        w = 2.0 * r / dist
                        G[t, 0] = G[t, 0] + w * dx
                        G[t, 1] = G[t, 1] + w * dy
                        G[t, 2] = G[t, 2] + w * dz
    return value, g1, -g1
