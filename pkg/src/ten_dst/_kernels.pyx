# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled GRU-sequence and belief-chain kernels.

Same signatures and gate layout as ``_kernels_py``; see that module for the
equations. All arrays are C-contiguous float64.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    return 0.5 * (1.0 + tanh(0.5 * x))


def gru_forward(const double[:, ::1] X, const double[::1] h0,
                const double[:, ::1] Wx, const double[:, ::1] Wh,
                const double[::1] bx, const double[::1] bh):
    cdef Py_ssize_t n = X.shape[0], D = X.shape[1], H = h0.shape[0]
    cdef Py_ssize_t t, i, k
    cdef double acc_r, acc_z, acc_n, hr, hz, hn, r, z, c, hp

    Hs_a = np.empty((n, H))
    R_a = np.empty((n, H))
    Z_a = np.empty((n, H))
    N_a = np.empty((n, H))
    HN_a = np.empty((n, H))
    cdef double[:, ::1] Hs = Hs_a, R = R_a, Z = Z_a, N = N_a, HN = HN_a

    with nogil:
        for t in range(n):
            for i in range(H):
                acc_r = bx[i]
                acc_z = bx[H + i]
                acc_n = bx[2 * H + i]
                for k in range(D):
                    acc_r = acc_r + Wx[i, k] * X[t, k]
                    acc_z = acc_z + Wx[H + i, k] * X[t, k]
                    acc_n = acc_n + Wx[2 * H + i, k] * X[t, k]
                hr = bh[i]
                hz = bh[H + i]
                hn = bh[2 * H + i]
                if t == 0:
                    for k in range(H):
                        hp = h0[k]
                        hr = hr + Wh[i, k] * hp
                        hz = hz + Wh[H + i, k] * hp
                        hn = hn + Wh[2 * H + i, k] * hp
                    hp = h0[i]
                else:
                    for k in range(H):
                        hp = Hs[t - 1, k]
                        hr = hr + Wh[i, k] * hp
                        hz = hz + Wh[H + i, k] * hp
                        hn = hn + Wh[2 * H + i, k] * hp
                    hp = Hs[t - 1, i]
                r = _sigmoid(acc_r + hr)
                z = _sigmoid(acc_z + hz)
                c = tanh(acc_n + r * hn)
                R[t, i] = r
                Z[t, i] = z
                N[t, i] = c
                HN[t, i] = hn
                Hs[t, i] = (1.0 - z) * c + z * hp
    return Hs_a, R_a, Z_a, N_a, HN_a


def gru_backward(const double[:, ::1] dHs, const double[:, ::1] X,
                 const double[::1] h0, const double[:, ::1] Wx,
                 const double[:, ::1] Wh, const double[:, ::1] Hs,
                 const double[:, ::1] R, const double[:, ::1] Z,
                 const double[:, ::1] N, const double[:, ::1] HN):
    cdef Py_ssize_t n = X.shape[0], D = X.shape[1], H = h0.shape[0]
    cdef Py_ssize_t t, i, k, j
    cdef double g, r, z, c, dn, dz, dr

    dX_a = np.zeros((n, D))
    dh0_a = np.zeros(H)
    dWx_a = np.zeros((3 * H, D))
    dWh_a = np.zeros((3 * H, H))
    dbx_a = np.zeros(3 * H)
    dbh_a = np.zeros(3 * H)
    cdef double[:, ::1] dX = dX_a, dWx = dWx_a, dWh = dWh_a
    cdef double[::1] dbx = dbx_a, dbh = dbh_a, dh0 = dh0_a
    cdef double[::1] dh = np.zeros(H)
    cdef double[::1] dh_next = np.zeros(H)
    cdef double[::1] ax = np.zeros(3 * H)
    cdef double[::1] ah = np.zeros(3 * H)
    cdef double[::1] hprev = np.zeros(H)

    with nogil:
        for t in range(n - 1, -1, -1):
            for i in range(H):
                if t > 0:
                    hprev[i] = Hs[t - 1, i]
                else:
                    hprev[i] = h0[i]
            for i in range(H):
                g = dHs[t, i] + dh[i]
                r = R[t, i]
                z = Z[t, i]
                c = N[t, i]
                dn = g * (1.0 - z) * (1.0 - c * c)
                dz = g * (hprev[i] - c) * z * (1.0 - z)
                dr = dn * HN[t, i] * r * (1.0 - r)
                ax[i] = dr
                ax[H + i] = dz
                ax[2 * H + i] = dn
                ah[i] = dr
                ah[H + i] = dz
                ah[2 * H + i] = dn * r
                dh_next[i] = g * z
            for j in range(3 * H):
                dbx[j] += ax[j]
                dbh[j] += ah[j]
                for k in range(D):
                    dWx[j, k] += ax[j] * X[t, k]
                    dX[t, k] += Wx[j, k] * ax[j]
                for k in range(H):
                    dWh[j, k] += ah[j] * hprev[k]
                    dh_next[k] += Wh[j, k] * ah[j]
            for i in range(H):
                dh[i] = dh_next[i]
        for i in range(H):
            dh0[i] = dh[i]
    return dX_a, dh0_a, dWx_a, dWh_a, dbx_a, dbh_a


def bp_chain_forward(const double[:, ::1] alphas):
    cdef Py_ssize_t T = alphas.shape[0], V = alphas.shape[1], t, v
    cdef double b0
    Q_a = np.empty((T, V))
    cdef double[:, ::1] Q = Q_a
    with nogil:
        for t in range(T):
            b0 = alphas[t, 0]
            if t == 0:
                Q[t, 0] = b0
                for v in range(1, V):
                    Q[t, v] = alphas[t, v]
            else:
                Q[t, 0] = Q[t - 1, 0] * b0
                for v in range(1, V):
                    Q[t, v] = alphas[t, v] + Q[t - 1, v] * b0
    return Q_a


def bp_chain_backward(const double[:, ::1] dQ, const double[:, ::1] alphas,
                      const double[:, ::1] Q):
    cdef Py_ssize_t T = alphas.shape[0], V = alphas.shape[1], t, v
    cdef double acc, g
    dA_a = np.empty((T, V))
    cdef double[:, ::1] dA = dA_a
    cdef double[::1] carry = np.zeros(V)
    with nogil:
        for t in range(T - 1, -1, -1):
            acc = 0.0
            for v in range(V):
                g = dQ[t, v] + carry[v]
                dA[t, v] = g
                if t > 0:
                    acc = acc + g * Q[t - 1, v]
                elif v == 0:
                    acc = g
                carry[v] = g * alphas[t, 0]
            dA[t, 0] = acc
    return dA_a
