"""Pure-numpy fallback for the fused cell kernels.

Mathematically identical to the compiled version; it just allocates a
handful of temporaries per call where the extension runs one fused loop.
"""

import numpy as np


def gru_cell_forward(xp, hp, h_prev):
    h = xp.shape[1] // 3
    r = _sigmoid(xp[:, :h] + hp[:, :h])
    z = _sigmoid(xp[:, h : 2 * h] + hp[:, h : 2 * h])
    n = np.tanh(xp[:, 2 * h :] + r * hp[:, 2 * h :])
    h_new = (1.0 - z) * n + z * h_prev
    return h_new, r, z, n


def gru_cell_backward(dh, hp, h_prev, r, z, n):
    h = hp.shape[1] // 3
    hp_n = hp[:, 2 * h :]

    dn = dh * (1.0 - z)
    dz = dh * (h_prev - n)
    dh_prev = dh * z

    da_n = dn * (1.0 - n * n)
    dr = da_n * hp_n
    da_r = dr * r * (1.0 - r)
    da_z = dz * z * (1.0 - z)

    dxp = np.concatenate([da_r, da_z, da_n], axis=1)
    dhp = np.concatenate([da_r, da_z, da_n * r], axis=1)
    return dxp, dhp, dh_prev


def _sigmoid(x):
    # Split by sign to avoid overflow in exp.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out
