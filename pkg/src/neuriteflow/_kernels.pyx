# Compiled twin of _kernels_py.advance.  Keep the arithmetic and its
# evaluation order in sync with the pure-python version: the two backends
# are required to produce bit-identical states.

import numpy as np

cimport numpy as cnp
from libc.math cimport isfinite

BACKEND_NAME = "compiled"


def advance(ops, double[::1] c0, double[::1] cp, int n_sub, double dt_sub,
            double D, double k_att, double k_det,
            long[::1] inlet, double inlet_c0, double inlet_cp,
            long[::1] outlet, long[::1] outlet_pred, double clamp_eps):
    cdef int[::1] lap_indptr = ops.lap_indptr
    cdef int[::1] lap_indices = ops.lap_indices
    cdef double[::1] lap_data = ops.lap_data
    cdef int[::1] up_indptr = ops.up_indptr
    cdef int[::1] up_indices = ops.up_indices
    cdef double[::1] up_data = ops.up_data

    cdef Py_ssize_t n = c0.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf0 = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf1 = np.empty(n)
    cdef double[::1] lap0 = buf0
    cdef double[::1] adv = buf1

    cdef Py_ssize_t i, jj, it
    cdef double s, a, b, r0, r1, v
    cdef Py_ssize_t n_inlet = inlet.shape[0]
    cdef Py_ssize_t n_outlet = outlet.shape[0]

    for it in range(n_sub):
        for i in range(n):
            s = 0.0
            for jj in range(lap_indptr[i], lap_indptr[i + 1]):
                s = s + lap_data[jj] * c0[lap_indices[jj]]
            lap0[i] = s
        for i in range(n):
            s = 0.0
            for jj in range(up_indptr[i], up_indptr[i + 1]):
                s = s + up_data[jj] * cp[up_indices[jj]]
            adv[i] = s
        for i in range(n):
            a = c0[i]
            b = cp[i]
            r0 = (D * lap0[i] - k_att * a) + k_det * b
            r1 = (k_att * a - k_det * b) - adv[i]
            c0[i] = a + dt_sub * r0
            cp[i] = b + dt_sub * r1
        for i in range(n_inlet):
            c0[inlet[i]] = inlet_c0
            cp[inlet[i]] = inlet_cp
        for i in range(n_outlet):
            c0[outlet[i]] = c0[outlet_pred[i]]
            cp[outlet[i]] = cp[outlet_pred[i]]
        for i in range(n):
            v = c0[i]
            if not isfinite(v):
                return 1
            if v < 0.0:
                if v < -clamp_eps:
                    return 1
                c0[i] = 0.0
        for i in range(n):
            v = cp[i]
            if not isfinite(v):
                return 1
            if v < 0.0:
                if v < -clamp_eps:
                    return 1
                cp[i] = 0.0
    return 0
