# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled mirrors of the numpy kernels in ``scalar_closure._kernels_py``.

Call signatures, field codes and per-particle arithmetic match the numpy
module; see its docstring for the splitting scheme.  Differences between
the two backends are limited to libm-vs-SIMD rounding of exp/sin/cos.
"""

from libc.math cimport exp, sin, cos

import numpy as np

BACKEND_NAME = "compiled"

FIELD_CONSTANT = 0
FIELD_LINEAR_SHEAR = 1
FIELD_STRAIN_2D = 2
FIELD_STRAIN_1D = 3
FIELD_CELLULAR = 4
FIELD_FOURIER_SHEAR = 5

AFFINE_CODES = (FIELD_CONSTANT, FIELD_LINEAR_SHEAR, FIELD_STRAIN_2D, FIELD_STRAIN_1D)

cdef enum:
    C_CONSTANT = 0
    C_LINEAR_SHEAR = 1
    C_STRAIN_2D = 2
    C_STRAIN_1D = 3
    C_CELLULAR = 4
    C_FOURIER_SHEAR = 5



cdef inline double _fourier_shear_u(const double* fp, double y) noexcept nogil:
    cdef double k0 = fp[0]
    cdef int n_cos = <int> fp[2]
    cdef int n_sin = <int> fp[3]
    cdef double u = fp[1]
    cdef int j
    for j in range(1, n_cos + 1):
        u += fp[3 + j] * cos(j * k0 * y)
    for j in range(1, n_sin + 1):
        u += fp[3 + n_cos + j] * sin(j * k0 * y)
    return u


cdef inline void _advect_one(int code, const double* fp, double* x, int d, double b) noexcept nogil:
    cdef double e, amp, k
    cdef double k1x, k1y, k2x, k2y, k3x, k3y, k4x, k4y, px, py
    cdef int j
    if code == C_CONSTANT:
        for j in range(d):
            x[j] += b * fp[j]
    elif code == C_LINEAR_SHEAR:
        x[0] += b * x[1]
    elif code == C_STRAIN_2D:
        e = exp(b)
        x[0] *= e
        x[1] /= e
    elif code == C_STRAIN_1D:
        x[0] *= exp(b)
    elif code == C_FOURIER_SHEAR:
        x[0] += b * _fourier_shear_u(fp, x[1])
    elif code == C_CELLULAR:
        amp = fp[0]
        k = fp[1]
        k1x = amp * sin(k * x[0]) * cos(k * x[1])
        k1y = -amp * cos(k * x[0]) * sin(k * x[1])
        px = x[0] + 0.5 * b * k1x
        py = x[1] + 0.5 * b * k1y
        k2x = amp * sin(k * px) * cos(k * py)
        k2y = -amp * cos(k * px) * sin(k * py)
        px = x[0] + 0.5 * b * k2x
        py = x[1] + 0.5 * b * k2y
        k3x = amp * sin(k * px) * cos(k * py)
        k3y = -amp * cos(k * px) * sin(k * py)
        px = x[0] + b * k3x
        py = x[1] + b * k3y
        k4x = amp * sin(k * px) * cos(k * py)
        k4y = -amp * cos(k * px) * sin(k * py)
        x[0] += b * (k1x + 2.0 * k2x + 2.0 * k3x + k4x) / 6.0
        x[1] += b * (k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0


def transport_chunk(int field_code, double[::1] fp, double[:, ::1] x,
                    double[::1] b, double[:, :, ::1] kicks):
    """See ``_kernels_py.transport_chunk``."""
    cdef Py_ssize_t n = x.shape[0]
    cdef int d = <int> x.shape[1]
    cdef Py_ssize_t n_steps = b.shape[0]
    cdef Py_ssize_t i, k
    cdef int j
    cdef const double* fpp = &fp[0] if fp.shape[0] > 0 else NULL
    with nogil:
        for i in range(n):
            for j in range(d):
                x[i, j] += kicks[i, 0, j]
            for k in range(n_steps):
                _advect_one(field_code, fpp, &x[i, 0], d, b[k])
                for j in range(d):
                    x[i, j] += kicks[i, k + 1, j]


def transport_snapshots_chunk(int field_code, double[::1] fp, double[:, ::1] x,
                              double[:, ::1] b, double[:, :, ::1] kicks,
                              snap_idx):
    """See ``_kernels_py.transport_snapshots_chunk``."""
    cdef long[::1] snaps = np.ascontiguousarray(snap_idx, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0]
    cdef int d = <int> x.shape[1]
    cdef Py_ssize_t n_steps = b.shape[1]
    cdef Py_ssize_t n_snap = snaps.shape[0]
    out_arr = np.empty((n_snap, n, d))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, k, w
    cdef int j
    cdef const double* fpp = &fp[0] if fp.shape[0] > 0 else NULL
    with nogil:
        for i in range(n):
            w = 0
            for j in range(d):
                x[i, j] += kicks[i, 0, j]
            for k in range(n_steps):
                _advect_one(field_code, fpp, &x[i, 0], d, b[i, k])
                for j in range(d):
                    x[i, j] += kicks[i, k + 1, j]
                if w < n_snap and snaps[w] == k + 1:
                    for j in range(d):
                        out[w, i, j] = x[i, j]
                    w += 1
    return out_arr


def affine_ensemble_chunk(int field_code, double[::1] fp, double[:, ::1] b,
                          double[:, :, :, ::1] kicks, double[:, ::1] probes,
                          double[::1] ic_center, double[::1] ic_width):
    """See ``_kernels_py.affine_ensemble_chunk``."""
    if field_code not in AFFINE_CODES:
        raise ValueError(f"field code {field_code} is not affine")
    cdef Py_ssize_t n_real = b.shape[0]
    cdef Py_ssize_t n_steps = b.shape[1]
    cdef Py_ssize_t n_part = kicks.shape[1]
    cdef Py_ssize_t n_probe = probes.shape[0]
    cdef int d = <int> probes.shape[1]
    est_arr = np.empty((n_real, n_probe))
    cdef double[:, ::1] est = est_arr
    z_arr = np.empty((n_part, d))
    cdef double[:, ::1] z = z_arr
    cdef Py_ssize_t r, p, k, q
    cdef int j
    cdef double bk, e, m01, scale, btot, acc, dev, quad, mxj
    cdef double norm = 1.0
    for j in range(d):
        norm /= (2.0 * np.pi * ic_width[j] * ic_width[j]) ** 0.5
    cdef const double* fpp = &fp[0] if fp.shape[0] > 0 else NULL
    with nogil:
        for r in range(n_real):
            for p in range(n_part):
                for j in range(d):
                    z[p, j] = kicks[r, p, 0, j]
            m01 = 0.0
            scale = 1.0
            btot = 0.0
            for k in range(n_steps):
                bk = b[r, k]
                if field_code == C_LINEAR_SHEAR:
                    for p in range(n_part):
                        z[p, 0] += bk * z[p, 1]
                    m01 += bk
                elif field_code == C_STRAIN_2D:
                    e = exp(bk)
                    for p in range(n_part):
                        z[p, 0] *= e
                        z[p, 1] /= e
                    scale *= e
                elif field_code == C_STRAIN_1D:
                    e = exp(bk)
                    for p in range(n_part):
                        z[p, 0] *= e
                    scale *= e
                else:
                    # translation commutes with the kicks; applied once via btot
                    btot += bk
                for p in range(n_part):
                    for j in range(d):
                        z[p, j] += kicks[r, p, k + 1, j]
            for q in range(n_probe):
                acc = 0.0
                for p in range(n_part):
                    quad = 0.0
                    for j in range(d):
                        if field_code == C_LINEAR_SHEAR:
                            mxj = probes[q, 0] + m01 * probes[q, 1] if j == 0 else probes[q, 1]
                        elif field_code == C_STRAIN_2D:
                            mxj = scale * probes[q, 0] if j == 0 else probes[q, 1] / scale
                        elif field_code == C_STRAIN_1D:
                            mxj = scale * probes[q, 0]
                        else:
                            mxj = probes[q, j] + btot * fpp[j]
                        dev = (mxj + z[p, j] - ic_center[j]) / ic_width[j]
                        quad += dev * dev
                    acc += exp(-0.5 * quad)
                est[r, q] = norm * acc / n_part
    return est_arr


def gbm_chunk(double[:, ::1] incr, double[::1] dts, double a, double m, snap_idx):
    """See ``_kernels_py.gbm_chunk``."""
    cdef long[::1] snaps = np.ascontiguousarray(snap_idx, dtype=np.int64)
    cdef Py_ssize_t n_paths = incr.shape[0]
    cdef Py_ssize_t n_steps = incr.shape[1]
    cdef Py_ssize_t n_snap = snaps.shape[0]
    a_arr = np.empty((n_snap, n_paths))
    b_arr = np.empty((n_snap, n_paths))
    cdef double[:, ::1] a_out = a_arr
    cdef double[:, ::1] b_out = b_arr
    cdef Py_ssize_t i, k, w
    cdef double bval, acc, e_prev, e_new, s
    with nogil:
        for i in range(n_paths):
            bval = 0.0
            acc = 0.0
            e_prev = 1.0
            s = 0.0
            w = 0
            for k in range(n_steps):
                bval += incr[i, k]
                s += dts[k]
                e_new = exp(a * bval + m * s)
                acc += (0.5 * dts[k]) * (e_prev + e_new)
                e_prev = e_new
                if w < n_snap and snaps[w] == k + 1:
                    a_out[w, i] = acc
                    b_out[w, i] = bval
                    w += 1
    return a_arr, b_arr
