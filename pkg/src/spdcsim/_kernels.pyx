# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Mirrors ``_kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, floor

cnp.import_array()

BACKEND = "cython"


cdef inline Py_ssize_t _bin_of(long long d, const long long[:] edges, double scale,
                               long long origin, Py_ssize_t nb) noexcept nogil:
    # float guess, then exact correction against the integer edges
    cdef Py_ssize_t k = <Py_ssize_t>floor((d - origin) * scale)
    if k < 0:
        k = 0
    elif k >= nb:
        k = nb - 1
    while k > 0 and d < edges[k]:
        k -= 1
    while k + 1 < nb and d >= edges[k + 1]:
        k += 1
    return k


def windowed_histogram(a, b, edges, bint exclude_self):
    cdef const long long[:] av = np.ascontiguousarray(a, dtype=np.int64)
    cdef const long long[:] bv = np.ascontiguousarray(b, dtype=np.int64)
    cdef const long long[:] ev = np.ascontiguousarray(edges, dtype=np.int64)
    cdef Py_ssize_t nb = ev.shape[0] - 1
    counts_arr = np.zeros(max(nb, 0), dtype=np.int64)
    cdef long long[:] counts = counts_arr
    cdef Py_ssize_t na = av.shape[0], nbb = bv.shape[0]
    if na == 0 or nbb == 0 or nb <= 0:
        return counts_arr
    cdef long long lo = ev[0], hi = ev[nb]
    cdef double scale = nb / <double>(hi - lo) if hi > lo else 0.0
    cdef Py_ssize_t i, j, first = 0
    cdef long long t, d
    with nogil:
        for i in range(na):
            t = av[i]
            while first < nbb and bv[first] < t + lo:
                first += 1
            j = first
            while j < nbb and bv[j] < t + hi:
                if not (exclude_self and j == i):
                    d = bv[j] - t
                    counts[_bin_of(d, ev, scale, lo, nb)] += 1
                j += 1
    return counts_arr


def dead_time_mask(ticks, double dead):
    cdef const long long[:] tv = np.ascontiguousarray(ticks, dtype=np.int64)
    cdef Py_ssize_t n = tv.shape[0], i
    keep_arr = np.zeros(n, dtype=bool)
    cdef cnp.npy_bool[:] keep = keep_arr
    if n == 0:
        return keep_arr
    cdef long long last = tv[0]
    keep[0] = 1
    with nogil:
        for i in range(1, n):
            if <double>(tv[i] - last) > dead:
                keep[i] = 1
                last = tv[i]
    return keep_arr


def ou_intensity(times, double theta, xi_re, xi_im, double t0, double a0_re, double a0_im):
    cdef const double[:] tv = np.ascontiguousarray(times, dtype=np.float64)
    cdef const double[:] xr = np.ascontiguousarray(xi_re, dtype=np.float64)
    cdef const double[:] xi = np.ascontiguousarray(xi_im, dtype=np.float64)
    cdef Py_ssize_t n = tv.shape[0], k
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[:] out = out_arr
    cdef double re = a0_re, im = a0_im, c, s, prev = t0
    with nogil:
        for k in range(n):
            c = exp(-theta * (tv[k] - prev))
            s = sqrt((1.0 - c * c) * 0.5) if c < 1.0 else 0.0
            re = c * re + s * xr[k]
            im = c * im + s * xi[k]
            out[k] = re * re + im * im
            prev = tv[k]
    return out_arr, re, im
