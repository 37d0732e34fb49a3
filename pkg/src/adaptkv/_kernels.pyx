# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Mirrors ``_kernels_py`` loop for loop."""

import numpy as np
from libc.math cimport sqrt, fabs, exp, INFINITY


def householder_qr(a):
    a = np.array(a, dtype=np.float64, order="C")
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1]
    r_arr = a.copy()
    vs_arr = np.zeros((n, m))
    q_arr = np.eye(m, n)
    cdef double[:, ::1] r = r_arr
    cdef double[:, ::1] vs = vs_arr
    cdef double[:, ::1] q = q_arr
    cdef Py_ssize_t i, j, k
    cdef double normx, alpha, vnorm, dot, min_pivot = INFINITY
    for j in range(n):
        normx = 0.0
        for i in range(j, m):
            normx += r[i, j] * r[i, j]
        normx = sqrt(normx)
        if normx < min_pivot:
            min_pivot = normx
        if normx == 0.0:
            continue
        alpha = -normx if r[j, j] >= 0.0 else normx
        for i in range(j, m):
            vs[j, i] = r[i, j]
        vs[j, j] -= alpha
        vnorm = 0.0
        for i in range(j, m):
            vnorm += vs[j, i] * vs[j, i]
        vnorm = sqrt(vnorm)
        if vnorm == 0.0:
            for i in range(j, m):
                vs[j, i] = 0.0
            continue
        for i in range(j, m):
            vs[j, i] /= vnorm
        for k in range(j, n):
            dot = 0.0
            for i in range(j, m):
                dot += vs[j, i] * r[i, k]
            for i in range(j, m):
                r[i, k] -= 2.0 * vs[j, i] * dot
    for j in range(n - 1, -1, -1):
        for k in range(n):
            dot = 0.0
            for i in range(j, m):
                dot += vs[j, i] * q[i, k]
            for i in range(j, m):
                q[i, k] -= 2.0 * vs[j, i] * dot
    r_out = np.triu(r_arr[:n, :])
    neg = np.diag(r_out) < 0.0
    r_out[neg, :] *= -1.0
    q_arr[:, neg] *= -1.0
    return q_arr, r_out, float(min_pivot) if n else np.inf


def jacobi_svd_square(a, int max_sweeps, double tol):
    wt_arr = np.array(a, dtype=np.float64).T.copy()
    cdef Py_ssize_t n = wt_arr.shape[0], m = wt_arr.shape[1]
    vt_arr = np.eye(n)
    cdef double[:, ::1] wt = wt_arr
    cdef double[:, ::1] vt = vt_arr
    cdef Py_ssize_t p, q, i
    cdef int sweep
    cdef bint rotated
    cdef double alpha, beta, gamma, zeta, t, c, s, x, y
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    alpha += wt[p, i] * wt[p, i]
                    beta += wt[q, i] * wt[q, i]
                    gamma += wt[p, i] * wt[q, i]
                if gamma == 0.0 or fabs(gamma) <= tol * sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    x = wt[p, i]
                    y = wt[q, i]
                    wt[p, i] = c * x - s * y
                    wt[q, i] = s * x + c * y
                for i in range(n):
                    x = vt[p, i]
                    y = vt[q, i]
                    vt[p, i] = c * x - s * y
                    vt[q, i] = s * x + c * y
        if not rotated:
            return wt_arr.T.copy(), vt_arr.T.copy(), sweep + 1
    return wt_arr.T.copy(), vt_arr.T.copy(), -1


def masked_softmax_rows(logits, double scale, causal_offset):
    x_arr = np.array(logits, dtype=np.float64, order="C")
    cdef Py_ssize_t m = x_arr.shape[0], n = x_arr.shape[1]
    out_arr = np.zeros((m, n))
    cdef double[:, ::1] x = x_arr
    cdef double[:, ::1] out = out_arr
    cdef bint masked = causal_offset is not None
    cdef Py_ssize_t offset = causal_offset if masked else 0
    cdef Py_ssize_t i, j, visible
    cdef double mx, total, e
    for i in range(m):
        visible = offset + i + 1 if masked else n
        if visible > n:
            visible = n
        if visible <= 0:
            return None, int(i)
        mx = -INFINITY
        for j in range(visible):
            if x[i, j] * scale > mx:
                mx = x[i, j] * scale
        total = 0.0
        for j in range(visible):
            e = exp(x[i, j] * scale - mx)
            out[i, j] = e
            total += e
        for j in range(visible):
            out[i, j] /= total
    return out_arr, -1


def project_rows(x, u):
    x_arr = np.array(x, dtype=np.float64, order="C")
    u_arr = np.array(u, dtype=np.float64, order="C")
    cdef Py_ssize_t n = x_arr.shape[0], d = x_arr.shape[1], r = u_arr.shape[1]
    out_arr = np.zeros((n, r))
    cdef double[:, ::1] xv = x_arr
    cdef double[:, ::1] uv = u_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(n):
        for k in range(r):
            acc = 0.0
            for j in range(d):
                acc += xv[i, j] * uv[j, k]
            out[i, k] = acc
    return out_arr
