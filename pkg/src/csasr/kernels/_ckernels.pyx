# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Must stay output-identical to ``_reference``."""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs, INFINITY

cnp.import_array()

cdef double NEG_INF = -INFINITY
cdef double LOG_FLOOR = 1e-12


cdef inline double _logaddexp(double a, double b) nogil:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def edit_ops(ref, hyp):
    cdef cnp.int64_t[::1] r = np.ascontiguousarray(ref, dtype=np.int64)
    cdef cnp.int64_t[::1] h = np.ascontiguousarray(hyp, dtype=np.int64)
    cdef Py_ssize_t n = r.shape[0], m = h.shape[0], i, j
    cdef long K = min(n, m) + 1
    cdef cnp.int64_t[::1] prev = np.empty(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] prev_s = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] cur = np.empty(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] cur_s = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] tmp
    cdef long best, bs, cand, rv
    for j in range(m + 1):
        prev[j] = j * K
    for i in range(1, n + 1):
        cur[0] = i * K
        cur_s[0] = 0
        rv = r[i - 1]
        for j in range(1, m + 1):
            if rv == h[j - 1]:
                best = prev[j - 1]
                bs = prev_s[j - 1]
            else:
                best = prev[j - 1] + K - 1
                bs = prev_s[j - 1] + 1
            cand = prev[j] + K
            if cand < best:
                best = cand
                bs = prev_s[j]
            cand = cur[j - 1] + K
            if cand < best:
                best = cand
                bs = cur_s[j - 1]
            cur[j] = best
            cur_s[j] = bs
        tmp = prev
        prev = cur
        cur = tmp
        tmp = prev_s
        prev_s = cur_s
        cur_s = tmp
    cdef long subs = prev_s[m]
    cdef long cost = (prev[m] + subs) // K
    cdef long diff = m - n
    return int(subs), int((cost - subs + diff) // 2), int((cost - subs - diff) // 2)


def rnnt_loglik_grad(lp_blank, lp_emit, t_lens, u_lens):
    cdef double[:, :, ::1] pb = np.ascontiguousarray(lp_blank, dtype=np.float64)
    cdef double[:, :, ::1] pe = np.ascontiguousarray(lp_emit, dtype=np.float64)
    cdef cnp.int64_t[::1] tl = np.ascontiguousarray(t_lens, dtype=np.int64)
    cdef cnp.int64_t[::1] ul = np.ascontiguousarray(u_lens, dtype=np.int64)
    cdef Py_ssize_t B = pb.shape[0], Tm = pb.shape[1], U1 = pb.shape[2]
    out_ll = np.zeros(B)
    gb_arr = np.zeros((B, Tm, U1))
    ge_arr = np.zeros((B, Tm, max(U1 - 1, 0)))
    cdef double[::1] ll_v = out_ll
    cdef double[:, :, ::1] gb = gb_arr
    cdef double[:, :, ::1] ge = ge_arr
    cdef double[:, ::1] alpha = np.empty((Tm, U1))
    cdef double[:, ::1] beta = np.empty((Tm, U1))
    cdef Py_ssize_t b, t, u, T, U
    cdef double a, v, ll
    for b in range(B):
        T = tl[b]
        U = ul[b]
        for t in range(T):
            for u in range(U + 1):
                if t == 0 and u == 0:
                    alpha[0, 0] = 0.0
                    continue
                a = NEG_INF
                if t > 0:
                    a = alpha[t - 1, u] + pb[b, t - 1, u]
                if u > 0:
                    a = _logaddexp(a, alpha[t, u - 1] + pe[b, t, u - 1])
                alpha[t, u] = a
        beta[T - 1, U] = pb[b, T - 1, U]
        for t in range(T - 1, -1, -1):
            for u in range(U, -1, -1):
                if t == T - 1 and u == U:
                    continue
                v = NEG_INF
                if t < T - 1:
                    v = beta[t + 1, u] + pb[b, t, u]
                if u < U:
                    v = _logaddexp(v, beta[t, u + 1] + pe[b, t, u])
                beta[t, u] = v
        ll = alpha[T - 1, U] + pb[b, T - 1, U]
        ll_v[b] = ll
        for t in range(T):
            for u in range(U + 1):
                if t < T - 1:
                    gb[b, t, u] = exp(alpha[t, u] + pb[b, t, u] + beta[t + 1, u] - ll)
                elif u == U:
                    gb[b, t, u] = exp(alpha[t, u] + pb[b, t, u] - ll)
                if u < U:
                    ge[b, t, u] = exp(alpha[t, u] + pe[b, t, u] + beta[t, u + 1] - ll)
    return out_ll, gb_arr, ge_arr


def ibm2_estep(src_ids, src_off, tgt_ids, tgt_off, table, double tension, double null_prob):
    cdef cnp.int64_t[::1] s_ids = np.ascontiguousarray(src_ids, dtype=np.int64)
    cdef cnp.int64_t[::1] s_off = np.ascontiguousarray(src_off, dtype=np.int64)
    cdef cnp.int64_t[::1] t_ids = np.ascontiguousarray(tgt_ids, dtype=np.int64)
    cdef cnp.int64_t[::1] t_off = np.ascontiguousarray(tgt_off, dtype=np.int64)
    cdef double[:, ::1] tab = np.ascontiguousarray(table, dtype=np.float64)
    counts_arr = np.zeros((tab.shape[0], tab.shape[1]))
    cdef double[:, ::1] counts = counts_arr
    cdef Py_ssize_t n_pairs = s_off.shape[0] - 1
    cdef Py_ssize_t max_n = 1, k, i, j, n, m, s0, t0
    for k in range(n_pairs):
        if s_off[k + 1] - s_off[k] > max_n:
            max_n = s_off[k + 1] - s_off[k]
    cdef double[::1] post = np.zeros(max_n)
    cdef double loglik = 0.0, rel, z, w, p_null, denom
    cdef long f
    for k in range(n_pairs):
        s0 = s_off[k]
        t0 = t_off[k]
        n = s_off[k + 1] - s0
        m = t_off[k + 1] - t0
        for j in range(m):
            f = t_ids[t0 + j]
            rel = (j + 1) / <double>m
            z = 0.0
            for i in range(n):
                w = exp(-tension * fabs((i + 1) / <double>n - rel))
                post[i] = w
                z += w
            p_null = null_prob * tab[0, f]
            denom = p_null
            for i in range(n):
                post[i] = (1.0 - null_prob) * post[i] / z * tab[s_ids[s0 + i], f]
                denom += post[i]
            loglik += log(denom if denom > LOG_FLOOR else LOG_FLOOR)
            if denom <= 0.0:
                continue
            counts[0, f] += p_null / denom
            for i in range(n):
                counts[s_ids[s0 + i], f] += post[i] / denom
    return counts_arr, loglik
