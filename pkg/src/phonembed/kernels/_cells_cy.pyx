# cython: boundscheck=False, wraparound=False, cdivision=True
"""Fused cell kernels, compiled.

One pass over the batch per call; no temporaries beyond the outputs.
Keeps the exact expressions of ``_cells_py`` so the backends agree to
within vectorized-vs-scalar libm rounding (~1e-15).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def gru_cell_forward(double[:, ::1] xp, double[:, ::1] hp, double[:, ::1] h_prev):
    cdef Py_ssize_t b_n = xp.shape[0]
    cdef Py_ssize_t h_n = xp.shape[1] // 3
    cdef cnp.ndarray[double, ndim=2] h_arr = np.empty((b_n, h_n))
    cdef cnp.ndarray[double, ndim=2] r_arr = np.empty((b_n, h_n))
    cdef cnp.ndarray[double, ndim=2] z_arr = np.empty((b_n, h_n))
    cdef cnp.ndarray[double, ndim=2] n_arr = np.empty((b_n, h_n))
    cdef double[:, ::1] h = h_arr
    cdef double[:, ::1] r = r_arr
    cdef double[:, ::1] z = z_arr
    cdef double[:, ::1] n = n_arr
    cdef Py_ssize_t b, j
    cdef double rv, zv, nv

    with nogil:
        for b in range(b_n):
            for j in range(h_n):
                rv = _sigmoid(xp[b, j] + hp[b, j])
                zv = _sigmoid(xp[b, h_n + j] + hp[b, h_n + j])
                nv = tanh(xp[b, 2 * h_n + j] + rv * hp[b, 2 * h_n + j])
                r[b, j] = rv
                z[b, j] = zv
                n[b, j] = nv
                h[b, j] = (1.0 - zv) * nv + zv * h_prev[b, j]
    return h_arr, r_arr, z_arr, n_arr


def gru_cell_backward(double[:, ::1] dh, double[:, ::1] hp, double[:, ::1] h_prev,
                      double[:, ::1] r, double[:, ::1] z, double[:, ::1] n):
    cdef Py_ssize_t b_n = dh.shape[0]
    cdef Py_ssize_t h_n = dh.shape[1]
    cdef cnp.ndarray[double, ndim=2] dxp_arr = np.empty((b_n, 3 * h_n))
    cdef cnp.ndarray[double, ndim=2] dhp_arr = np.empty((b_n, 3 * h_n))
    cdef cnp.ndarray[double, ndim=2] dhb_arr = np.empty((b_n, h_n))
    cdef double[:, ::1] dxp = dxp_arr
    cdef double[:, ::1] dhp = dhp_arr
    cdef double[:, ::1] dhb = dhb_arr
    cdef Py_ssize_t b, j
    cdef double dnv, dzv, da_n, drv, da_r, da_z

    with nogil:
        for b in range(b_n):
            for j in range(h_n):
                dnv = dh[b, j] * (1.0 - z[b, j])
                dzv = dh[b, j] * (h_prev[b, j] - n[b, j])
                dhb[b, j] = dh[b, j] * z[b, j]

                da_n = dnv * (1.0 - n[b, j] * n[b, j])
                drv = da_n * hp[b, 2 * h_n + j]
                da_r = drv * r[b, j] * (1.0 - r[b, j])
                da_z = dzv * z[b, j] * (1.0 - z[b, j])

                dxp[b, j] = da_r
                dxp[b, h_n + j] = da_z
                dxp[b, 2 * h_n + j] = da_n
                dhp[b, j] = da_r
                dhp[b, h_n + j] = da_z
                dhp[b, 2 * h_n + j] = da_n * r[b, j]
    return dxp_arr, dhp_arr, dhb_arr
