# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled OWL-QN inner kernels.

Mirrors ``fedcs._owlqn_py`` function for function; see that module for the
contracts. Loops are fused and branch-local, which is where the compiled
backend gains over NumPy on the short chunk vectors these run on.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

BACKEND = "native"


def pseudo_gradient(double[::1] s, double[::1] g, double lam,
                    double[::1] out):
    cdef Py_ssize_t i, n = s.shape[0]
    cdef double lo, hi
    for i in range(n):
        if s[i] > 0.0:
            out[i] = g[i] + lam
        elif s[i] < 0.0:
            out[i] = g[i] - lam
        else:
            hi = g[i] + lam
            lo = g[i] - lam
            if hi < 0.0:
                out[i] = hi
            elif lo > 0.0:
                out[i] = lo
            else:
                out[i] = 0.0


def choose_orthant(double[::1] s, double[::1] pg, double[::1] out):
    cdef Py_ssize_t i, n = s.shape[0]
    for i in range(n):
        if s[i] > 0.0:
            out[i] = 1.0
        elif s[i] < 0.0:
            out[i] = -1.0
        elif pg[i] > 0.0:
            out[i] = -1.0
        elif pg[i] < 0.0:
            out[i] = 1.0
        else:
            out[i] = 0.0


def align_direction(double[::1] d, double[::1] pg):
    cdef Py_ssize_t i, n = d.shape[0]
    for i in range(n):
        if d[i] * pg[i] >= 0.0:
            d[i] = 0.0


def project_step(double[::1] s, double[::1] d, double alpha,
                 double[::1] xi, double[::1] out):
    cdef Py_ssize_t i, n = s.shape[0]
    cdef double v, l1 = 0.0
    for i in range(n):
        v = s[i] + alpha * d[i]
        if v * xi[i] <= 0.0:
            out[i] = 0.0
        else:
            out[i] = v
            l1 += fabs(v)
    return l1


def two_loop(double[::1] pg, double[:, ::1] mem_s, double[:, ::1] mem_y,
             double[::1] rho, long long[::1] order, double gamma,
             double[::1] out, double[::1] alpha_buf):
    cdef Py_ssize_t idx, j, i, n = pg.shape[0], m = order.shape[0]
    cdef double acc, a, beta
    for j in range(n):
        out[j] = pg[j]
    for idx in range(m - 1, -1, -1):
        i = <Py_ssize_t> order[idx]
        acc = 0.0
        for j in range(n):
            acc += mem_s[i, j] * out[j]
        a = rho[i] * acc
        alpha_buf[i] = a
        for j in range(n):
            out[j] -= a * mem_y[i, j]
    for j in range(n):
        out[j] *= gamma
    for idx in range(m):
        i = <Py_ssize_t> order[idx]
        acc = 0.0
        for j in range(n):
            acc += mem_y[i, j] * out[j]
        beta = alpha_buf[i] - rho[i] * acc
        for j in range(n):
            out[j] += beta * mem_s[i, j]
    for j in range(n):
        out[j] = -out[j]
