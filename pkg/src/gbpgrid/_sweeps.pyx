# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled message-passing kernels.

Arithmetic mirrors _sweeps_py expression by expression (same operation
order, no FMA contraction) so the two backends agree bit for bit.
"""

import numpy as np

cimport numpy as cnp

BACKEND_NAME = "compiled"

ctypedef cnp.float64_t f64
ctypedef cnp.int32_t i32
ctypedef cnp.int64_t i64


def serial_sweep(f64[::1] eta_msg, f64[::1] lam_msg,
                 f64[::1] eta_bel, f64[::1] lam_bel,
                 i32[::1] src, i32[::1] dst, i32[::1] rev,
                 f64[::1] w_pair, f64[::1] r_pair, f64[::1] beta,
                 f64[::1] eta_u, f64[::1] lam_u,
                 i32[::1] in_edge, i64[::1] in_ptr,
                 dp, double eps):
    cdef i64[::1] lep = dp.line_edge_ptr
    cdef i32[::1] line_pix = dp.line_pix
    cdef i64[::1] lpp = dp.line_pix_ptr
    cdef Py_ssize_t n_lines = lep.shape[0] - 1
    cdef Py_ssize_t l, e, k, q, p, j, i, re
    cdef double c_eta, c_lam, f_eta, f_lam, mu, b, es, ls
    with nogil:
        for l in range(n_lines):
            for e in range(lep[l], lep[l + 1]):
                j = src[e]
                i = dst[e]
                re = rev[e]
                c_eta = eta_bel[j] - eta_msg[re]
                c_lam = lam_bel[j] - lam_msg[re]
                if c_lam <= eps:
                    f_eta = 0.0
                    f_lam = 0.0
                else:
                    f_lam = 1.0 / (1.0 / c_lam + 1.0 / w_pair[e])
                    mu = c_eta / c_lam + r_pair[e]
                    f_eta = mu * f_lam
                b = beta[i]
                eta_msg[e] = b * eta_msg[e] + (1.0 - b) * f_eta
                lam_msg[e] = b * lam_msg[e] + (1.0 - b) * f_lam
            for k in range(lpp[l], lpp[l + 1]):
                p = line_pix[k]
                es = 0.0
                ls = 0.0
                for q in range(in_ptr[p], in_ptr[p + 1]):
                    e = in_edge[q]
                    es += eta_msg[e]
                    ls += lam_msg[e]
                eta_bel[p] = eta_u[p] + es
                lam_bel[p] = lam_u[p] + ls


def nonlocal_step(f64[::1] eta_msg, f64[::1] lam_msg,
                  f64[::1] eta_bel, f64[::1] lam_bel,
                  i32[::1] src, i32[::1] dst, i32[::1] rev,
                  f64[::1] w_pair, f64[::1] r_pair, f64[::1] beta,
                  f64[::1] eta_u, f64[::1] lam_u,
                  i32[::1] in_edge, i64[::1] in_ptr, i64[::1] all_owner,
                  Py_ssize_t lo, Py_ssize_t hi, double eps):
    old = np.empty((2, hi - lo), dtype=np.float64)
    cdef f64[:, ::1] snap = old
    cdef Py_ssize_t e, p, q, j, i, re, n
    cdef double c_eta, c_lam, f_eta, f_lam, mu, b, es, ls
    n = eta_bel.shape[0]
    with nogil:
        for e in range(lo, hi):
            snap[0, e - lo] = eta_msg[e]
            snap[1, e - lo] = lam_msg[e]
        for e in range(lo, hi):
            j = src[e]
            i = dst[e]
            re = rev[e] - lo
            c_eta = eta_bel[j] - snap[0, re]
            c_lam = lam_bel[j] - snap[1, re]
            if c_lam <= eps:
                f_eta = 0.0
                f_lam = 0.0
            else:
                f_lam = 1.0 / (1.0 / c_lam + 1.0 / w_pair[e])
                mu = c_eta / c_lam + r_pair[e]
                f_eta = mu * f_lam
            b = beta[i]
            eta_msg[e] = b * snap[0, e - lo] + (1.0 - b) * f_eta
            lam_msg[e] = b * snap[1, e - lo] + (1.0 - b) * f_lam
        for p in range(n):
            es = 0.0
            ls = 0.0
            for q in range(in_ptr[p], in_ptr[p + 1]):
                e = in_edge[q]
                es += eta_msg[e]
                ls += lam_msg[e]
            eta_bel[p] = eta_u[p] + es
            lam_bel[p] = lam_u[p] + ls
