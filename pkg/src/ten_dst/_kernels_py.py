"""Pure numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` one for one and are used when the compiled
extension is unavailable (or ``TEN_DST_PURE_PYTHON=1`` is set).

GRU layout: gates stacked row-wise in the order reset, update, candidate, so
``Wx`` is ``(3H, D)``, ``Wh`` is ``(3H, H)`` and both biases are ``(3H,)``::

    r  = sigmoid(Wx_r x + bx_r + Wh_r h + bh_r)
    z  = sigmoid(Wx_z x + bx_z + Wh_z h + bh_z)
    hn = Wh_n h + bh_n
    n  = tanh(Wx_n x + bx_n + r * hn)
    h' = (1 - z) * n + z * h
"""

import numpy as np


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(X, h0, Wx, Wh, bx, bh):
    """Run a GRU over ``X`` of shape ``(n, D)``.

    Returns ``(Hs, R, Z, N, HN)``, each ``(n, H)``; the last four are the
    cached gate activations needed by :func:`gru_backward`.
    """
    n = X.shape[0]
    H = h0.shape[0]
    Hs = np.empty((n, H))
    R = np.empty((n, H))
    Z = np.empty((n, H))
    N = np.empty((n, H))
    HN = np.empty((n, H))
    ax = X @ Wx.T + bx
    h = h0
    for t in range(n):
        ah = Wh @ h + bh
        r = _sigmoid(ax[t, :H] + ah[:H])
        z = _sigmoid(ax[t, H:2 * H] + ah[H:2 * H])
        hn = ah[2 * H:]
        cand = np.tanh(ax[t, 2 * H:] + r * hn)
        h = (1.0 - z) * cand + z * h
        Hs[t] = h
        R[t] = r
        Z[t] = z
        N[t] = cand
        HN[t] = hn
    return Hs, R, Z, N, HN


def gru_backward(dHs, X, h0, Wx, Wh, Hs, R, Z, N, HN):
    """Backpropagate ``dHs`` (gradient w.r.t. every output state).

    Returns ``(dX, dh0, dWx, dWh, dbx, dbh)``.
    """
    n = X.shape[0]
    H = h0.shape[0]
    DAx = np.empty((n, 3 * H))
    DAh = np.empty((n, 3 * H))
    dh = np.zeros(H)
    for t in range(n - 1, -1, -1):
        h_prev = Hs[t - 1] if t > 0 else h0
        r, z, cand, hn = R[t], Z[t], N[t], HN[t]
        g = dHs[t] + dh
        dn_pre = g * (1.0 - z) * (1.0 - cand * cand)
        dz_pre = g * (h_prev - cand) * z * (1.0 - z)
        dr_pre = dn_pre * hn * r * (1.0 - r)
        DAx[t, :H] = dr_pre
        DAx[t, H:2 * H] = dz_pre
        DAx[t, 2 * H:] = dn_pre
        DAh[t, :H] = dr_pre
        DAh[t, H:2 * H] = dz_pre
        DAh[t, 2 * H:] = dn_pre * r
        dh = g * z + Wh.T @ DAh[t]
    Hprev = np.vstack([h0[None, :], Hs[:-1]])
    dX = DAx @ Wx
    dWx = DAx.T @ X
    dWh = DAh.T @ Hprev
    dbx = DAx.sum(axis=0)
    dbh = DAh.sum(axis=0)
    return dX, dh, dWx, dWh, dbx, dbh


def bp_chain_forward(alphas):
    """Sum-product pass along the aggregation chain.

    ``alphas`` is ``(T, V)`` with column 0 the ``unknown`` value. Row ``t`` of
    the result is the state marginal after turn ``t``.
    """
    T, V = alphas.shape
    Q = np.empty((T, V))
    gamma = np.zeros(V)
    gamma[0] = 1.0
    for t in range(T):
        beta = alphas[t]
        mu = gamma * beta[0]
        mu[1:] += beta[1:]
        Q[t] = mu
        gamma = mu
    return Q


def bp_chain_backward(dQ, alphas, Q):
    """Gradient of the chain w.r.t. ``alphas`` given ``dQ``."""
    T, V = alphas.shape
    dA = np.empty((T, V))
    carry = np.zeros(V)
    for t in range(T - 1, -1, -1):
        if t > 0:
            gamma = Q[t - 1]
        else:
            gamma = np.zeros(V)
            gamma[0] = 1.0
        g = dQ[t] + carry
        dA[t] = g
        dA[t, 0] = g @ gamma
        carry = g * alphas[t, 0]
    return dA
