# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled split-search backend.

Mirrors ``fallback.py`` operation-for-operation (same stable sort, same
float accumulation order, same tie rules) so both backends grow
bit-identical trees. Keep the two files in sync.
"""

import numpy as np

from libc.math cimport INFINITY


def backend_name():
    return "compiled"


cdef inline double _threshold(double lo, double hi) noexcept nogil:
    cdef double thr = 0.5 * (lo + hi)
    if thr == hi:
        thr = lo
    return thr


def best_split_classification(double[:, ::1] X, long[:] idx, long[:] feats,
                              long[:] y, int k):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t m = feats.shape[0]
    if n < 2 or m == 0:
        return -1, 0.0, INFINITY

    vals_arr = np.empty(n, dtype=np.float64)
    sv_arr = np.empty(n, dtype=np.float64)
    sy_arr = np.empty(n, dtype=np.int64)
    yn_arr = np.empty(n, dtype=np.int64)
    cntl_arr = np.empty(k, dtype=np.int64)
    tot_arr = np.empty(k, dtype=np.int64)
    cdef double[:] vals = vals_arr
    cdef double[:] sv = sv_arr
    cdef long[:] sy = sy_arr
    cdef long[:] yn = yn_arr
    cdef long[:] cntl = cntl_arr
    cdef long[:] tot = tot_arr
    cdef long[:] order

    cdef Py_ssize_t i, j, c
    cdef long f, nl, nr
    cdef long best_feat = -1
    cdef double best_thr = 0.0
    cdef double best_metric = INFINITY
    cdef double nf = <double> n
    cdef double nlf, nrf, ssl, ssr, p, gl, gr, metric

    for i in range(n):
        yn[i] = y[idx[i]]

    for j in range(m):
        f = feats[j]
        for i in range(n):
            vals[i] = X[idx[i], f]
        order = np.argsort(vals_arr, kind="stable")
        with nogil:
            for c in range(k):
                tot[c] = 0
                cntl[c] = 0
            for i in range(n):
                sv[i] = vals[order[i]]
                sy[i] = yn[order[i]]
                tot[sy[i]] += 1
            for i in range(1, n):
                cntl[sy[i - 1]] += 1
                if sv[i] == sv[i - 1]:
                    continue
                nl = i
                nr = n - i
                nlf = <double> nl
                nrf = <double> nr
                ssl = 0.0
                ssr = 0.0
                for c in range(k):
                    p = cntl[c] / nlf
                    ssl = ssl + p * p
                    p = (tot[c] - cntl[c]) / nrf
                    ssr = ssr + p * p
                gl = 1.0 - ssl
                gr = 1.0 - ssr
                metric = (nlf / nf) * gl + (nrf / nf) * gr
                if metric < best_metric:
                    best_metric = metric
                    best_feat = f
                    best_thr = _threshold(sv[i - 1], sv[i])
    return best_feat, best_thr, best_metric


def best_split_rawlsian(double[:, ::1] X, long[:] idx, long[:] feats,
                        long[:] y, int k, long[:] groups, int n_groups,
                        double lam, double mm_w, double avg_w, long mgs):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t m = feats.shape[0]
    if n < 2 or m == 0:
        return -1, 0.0, INFINITY

    vals_arr = np.empty(n, dtype=np.float64)
    sv_arr = np.empty(n, dtype=np.float64)
    sy_arr = np.empty(n, dtype=np.int64)
    sg_arr = np.empty(n, dtype=np.int64)
    yn_arr = np.empty(n, dtype=np.int64)
    gn_arr = np.empty(n, dtype=np.int64)
    cntl_arr = np.empty(k, dtype=np.int64)
    tot_arr = np.empty(k, dtype=np.int64)
    cntl_gc_arr = np.empty(n_groups * k, dtype=np.int64)
    tot_gc_arr = np.empty(n_groups * k, dtype=np.int64)
    ngl_arr = np.empty(n_groups, dtype=np.int64)
    ngt_arr = np.empty(n_groups, dtype=np.int64)
    cdef double[:] vals = vals_arr
    cdef double[:] sv = sv_arr
    cdef long[:] sy = sy_arr
    cdef long[:] sg = sg_arr
    cdef long[:] yn = yn_arr
    cdef long[:] gn = gn_arr
    cdef long[:] cntl = cntl_arr
    cdef long[:] tot = tot_arr
    cdef long[:] cntl_gc = cntl_gc_arr
    cdef long[:] tot_gc = tot_gc_arr
    cdef long[:] ngl = ngl_arr
    cdef long[:] ngt = ngt_arr
    cdef long[:] order

    cdef Py_ssize_t i, j, c, g
    cdef long f, nl, nr, ngs, cnt_q
    cdef long best_feat = -1
    cdef double best_thr = 0.0
    cdef double best_metric = INFINITY
    cdef double nf = <double> n
    cdef double nlf, nrf, ssl, ssr, p, gl, gr, metric
    cdef double ngf, ss, gg, mx, sm, mn, il, ir

    for i in range(n):
        yn[i] = y[idx[i]]
        gn[i] = groups[idx[i]]

    for j in range(m):
        f = feats[j]
        for i in range(n):
            vals[i] = X[idx[i], f]
        order = np.argsort(vals_arr, kind="stable")
        with nogil:
            for c in range(k):
                tot[c] = 0
                cntl[c] = 0
            for g in range(n_groups):
                ngl[g] = 0
                ngt[g] = 0
                for c in range(k):
                    tot_gc[g * k + c] = 0
                    cntl_gc[g * k + c] = 0
            for i in range(n):
                sv[i] = vals[order[i]]
                sy[i] = yn[order[i]]
                sg[i] = gn[order[i]]
                tot[sy[i]] += 1
                tot_gc[sg[i] * k + sy[i]] += 1
                ngt[sg[i]] += 1
            for i in range(1, n):
                cntl[sy[i - 1]] += 1
                cntl_gc[sg[i - 1] * k + sy[i - 1]] += 1
                ngl[sg[i - 1]] += 1
                if sv[i] == sv[i - 1]:
                    continue
                nl = i
                nr = n - i
                nlf = <double> nl
                nrf = <double> nr
                ssl = 0.0
                ssr = 0.0
                for c in range(k):
                    p = cntl[c] / nlf
                    ssl = ssl + p * p
                    p = (tot[c] - cntl[c]) / nrf
                    ssr = ssr + p * p
                gl = 1.0 - ssl
                gr = 1.0 - ssr

                # left side group blend
                mx = -INFINITY
                sm = 0.0
                cnt_q = 0
                for g in range(n_groups):
                    ngs = ngl[g]
                    if ngs < mgs:
                        continue
                    ngf = <double> ngs
                    ss = 0.0
                    for c in range(k):
                        p = cntl_gc[g * k + c] / ngf
                        ss = ss + p * p
                    gg = 1.0 - ss
                    if gg > mx:
                        mx = gg
                    sm = sm + gg
                    cnt_q += 1
                if cnt_q > 0:
                    mn = sm / (<double> cnt_q)
                    il = (1.0 - lam) * gl + lam * (mm_w * mx + avg_w * mn)
                else:
                    il = gl

                # right side group blend
                mx = -INFINITY
                sm = 0.0
                cnt_q = 0
                for g in range(n_groups):
                    ngs = ngt[g] - ngl[g]
                    if ngs < mgs:
                        continue
                    ngf = <double> ngs
                    ss = 0.0
                    for c in range(k):
                        p = (tot_gc[g * k + c] - cntl_gc[g * k + c]) / ngf
                        ss = ss + p * p
                    gg = 1.0 - ss
                    if gg > mx:
                        mx = gg
                    sm = sm + gg
                    cnt_q += 1
                if cnt_q > 0:
                    mn = sm / (<double> cnt_q)
                    ir = (1.0 - lam) * gr + lam * (mm_w * mx + avg_w * mn)
                else:
                    ir = gr

                metric = (nlf / nf) * il + (nrf / nf) * ir
                if metric < best_metric:
                    best_metric = metric
                    best_feat = f
                    best_thr = _threshold(sv[i - 1], sv[i])
    return best_feat, best_thr, best_metric


def best_split_regression(double[:, ::1] X, long[:] idx, long[:] feats,
                          double[:] y):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t m = feats.shape[0]
    if n < 2 or m == 0:
        return -1, 0.0, INFINITY

    vals_arr = np.empty(n, dtype=np.float64)
    sv_arr = np.empty(n, dtype=np.float64)
    sy_arr = np.empty(n, dtype=np.float64)
    yn_arr = np.empty(n, dtype=np.float64)
    cdef double[:] vals = vals_arr
    cdef double[:] sv = sv_arr
    cdef double[:] sy = sy_arr
    cdef double[:] yn = yn_arr
    cdef long[:] order

    cdef Py_ssize_t i, j
    cdef long f, nl, nr
    cdef long best_feat = -1
    cdef double best_thr = 0.0
    cdef double best_metric = INFINITY
    cdef double nf = <double> n
    cdef double nlf, nrf, metric
    cdef double toty, toty2, ry, ry2, ml, vl, mr, vr

    for i in range(n):
        yn[i] = y[idx[i]]

    for j in range(m):
        f = feats[j]
        for i in range(n):
            vals[i] = X[idx[i], f]
        order = np.argsort(vals_arr, kind="stable")
        with nogil:
            toty = 0.0
            toty2 = 0.0
            for i in range(n):
                sv[i] = vals[order[i]]
                sy[i] = yn[order[i]]
                toty = toty + sy[i]
                toty2 = toty2 + sy[i] * sy[i]
            ry = 0.0
            ry2 = 0.0
            for i in range(1, n):
                ry = ry + sy[i - 1]
                ry2 = ry2 + sy[i - 1] * sy[i - 1]
                if sv[i] == sv[i - 1]:
                    continue
                nl = i
                nr = n - i
                nlf = <double> nl
                nrf = <double> nr
                ml = ry / nlf
                vl = ry2 / nlf - ml * ml
                mr = (toty - ry) / nrf
                vr = (toty2 - ry2) / nrf - mr * mr
                metric = (nlf / nf) * vl + (nrf / nf) * vr
                if metric < best_metric:
                    best_metric = metric
                    best_feat = f
                    best_thr = _threshold(sv[i - 1], sv[i])
    return best_feat, best_thr, best_metric
