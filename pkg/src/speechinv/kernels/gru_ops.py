"""Sequence-level GRU kernels, written so the same source runs plain or jitted.

The input projections (W x_t for all t) are hoisted out of the recurrence into
single matrix products; only the hidden-to-hidden work stays inside the time
loop. ``gru_forward`` returns the hidden trajectory plus the gate activations
the backward pass needs.

Gate equations, with h_0 = 0:
    z_t = sigmoid(Wz x_t + Uz h_{t-1} + bz)
    r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)
    c_t = tanh(Wh x_t + Uh (r_t * h_{t-1}) + bh)
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t
"""

import numpy as np


def gru_forward(x, wz, wr, wh, uz, ur, uh, bz, br, bh):
    """Run a GRU over a (L, d_in) sequence; returns (h, z, r, c), each (L, h)."""
    length = x.shape[0]
    n_hidden = bz.shape[0]
    pz = np.dot(x, wz.T.copy()) + bz
    pr = np.dot(x, wr.T.copy()) + br
    pc = np.dot(x, wh.T.copy()) + bh
    hs = np.empty((length, n_hidden))
    zs = np.empty((length, n_hidden))
    rs = np.empty((length, n_hidden))
    cs = np.empty((length, n_hidden))
    hprev = np.zeros(n_hidden)
    for t in range(length):
        # tanh form of the logistic function: bounded, no overflow
        z = 0.5 * (np.tanh(0.5 * (pz[t] + np.dot(uz, hprev))) + 1.0)
        r = 0.5 * (np.tanh(0.5 * (pr[t] + np.dot(ur, hprev))) + 1.0)
        c = np.tanh(pc[t] + np.dot(uh, r * hprev))
        hnew = (1.0 - z) * hprev + z * c
        zs[t] = z
        rs[t] = r
        cs[t] = c
        hs[t] = hnew
        hprev = hnew
    return hs, zs, rs, cs


def gru_backward(dh, x, hs, zs, rs, cs, wz, wr, wh, uz, ur, uh):
    """Backpropagate through gru_forward.

    dh is dLoss/dh_t for every step. Returns dLoss/dx plus gradients for the
    nine parameter tensors in declaration order.
    """
    length, n_hidden = hs.shape
    uzT = uz.T.copy()
    urT = ur.T.copy()
    uhT = uh.T.copy()
    daz = np.empty((length, n_hidden))
    dar = np.empty((length, n_hidden))
    dac = np.empty((length, n_hidden))
    hprevs = np.empty((length, n_hidden))
    hprevs[0] = 0.0
    hprevs[1:] = hs[: length - 1]
    gh = np.zeros(n_hidden)
    for t in range(length - 1, -1, -1):
        g = gh + dh[t]
        hprev = hprevs[t]
        z = zs[t]
        r = rs[t]
        c = cs[t]
        dc_t = g * z * (1.0 - c * c)
        dz_t = g * (c - hprev) * z * (1.0 - z)
        drh = np.dot(uhT, dc_t)
        dr_t = drh * hprev * r * (1.0 - r)
        dac[t] = dc_t
        daz[t] = dz_t
        dar[t] = dr_t
        gh = (
            g * (1.0 - z)
            + drh * r
            + np.dot(uzT, dz_t)
            + np.dot(urT, dr_t)
        )
    xc = np.ascontiguousarray(x)
    dazT = daz.T.copy()
    darT = dar.T.copy()
    dacT = dac.T.copy()
    dwz = np.dot(dazT, xc)
    dwr = np.dot(darT, xc)
    dwh = np.dot(dacT, xc)
    duz = np.dot(dazT, hprevs)
    dur = np.dot(darT, hprevs)
    duh = np.dot(dacT, rs * hprevs)
    dbz = daz.sum(axis=0)
    dbr = dar.sum(axis=0)
    dbh = dac.sum(axis=0)
    dx = np.dot(daz, wz) + np.dot(dar, wr) + np.dot(dac, wh)
    return dx, dwz, dwr, dwh, duz, dur, duh, dbz, dbr, dbh
