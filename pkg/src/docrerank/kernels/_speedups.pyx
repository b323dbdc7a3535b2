# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel twin.

Mirrors _pyref.py operation for operation with the SAME float operation
order (the build disables FP contraction), so both backends produce
bit-identical results. Keep any change here in lockstep with _pyref.py.
"""

from libc.math cimport log

import numpy as np

BACKEND_NAME = "compiled"

cdef double LN10 = log(10.0)

DEF MAX_CTX = 64


cdef inline Py_ssize_t _bsearch(const int[::1] tok, Py_ssize_t lo, Py_ssize_t hi, int t) nogil:
    cdef Py_ssize_t mid
    cdef int v
    while lo < hi:
        mid = (lo + hi) // 2
        v = tok[mid]
        if v < t:
            lo = mid + 1
        elif v > t:
            hi = mid
        else:
            return mid
    return -1


cdef inline Py_ssize_t _find_ctx_w(const int[::1] tok, const int[::1] lo_arr,
                                   const int[::1] hi_arr, Py_ssize_t root_lo,
                                   Py_ssize_t root_hi, int* buf,
                                   Py_ssize_t start, Py_ssize_t m, int w) nogil:
    cdef Py_ssize_t lo = root_lo, hi = root_hi, e, i
    for i in range(start, m):
        e = _bsearch(tok, lo, hi, buf[i])
        if e < 0:
            return -1
        lo = lo_arr[e]
        hi = hi_arr[e]
    return _bsearch(tok, lo, hi, w)


cdef inline Py_ssize_t _find_ctx(const int[::1] tok, const int[::1] lo_arr,
                                 const int[::1] hi_arr, Py_ssize_t root_lo,
                                 Py_ssize_t root_hi, int* buf,
                                 Py_ssize_t start, Py_ssize_t m) nogil:
    cdef Py_ssize_t lo = root_lo, hi = root_hi, e = -1, i
    for i in range(start, m):
        e = _bsearch(tok, lo, hi, buf[i])
        if e < 0:
            return -1
        lo = lo_arr[e]
        hi = hi_arr[e]
    return e


cdef double _event_lp10(const int[::1] tok, const double[::1] lp, const double[::1] bo,
                        const int[::1] lo_arr, const int[::1] hi_arr,
                        Py_ssize_t root_lo, Py_ssize_t root_hi,
                        int* buf, Py_ssize_t m, int w, bint* ok) nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t start, e, ce
    for start in range(m + 1):
        e = _find_ctx_w(tok, lo_arr, hi_arr, root_lo, root_hi, buf, start, m, w)
        if e >= 0:
            ok[0] = True
            return acc + lp[e]
        ce = _find_ctx(tok, lo_arr, hi_arr, root_lo, root_hi, buf, start, m)
        if ce >= 0:
            acc += bo[ce]
    ok[0] = False
    return 0.0


def lm_event_lp10(const int[::1] tok, const double[::1] lp, const double[::1] bo,
                  const int[::1] lo_arr, const int[::1] hi_arr,
                  root_lo, root_hi, ctx, w):
    cdef int buf[MAX_CTX]
    cdef Py_ssize_t m = len(ctx)
    if m > MAX_CTX:
        raise ValueError("context too long")
    cdef Py_ssize_t i
    for i in range(m):
        buf[i] = ctx[i]
    cdef bint ok = False
    cdef double out = _event_lp10(tok, lp, bo, lo_arr, hi_arr,
                                  <Py_ssize_t>root_lo, <Py_ssize_t>root_hi,
                                  buf, m, <int>w, &ok)
    if not ok:
        raise ValueError(f"token id {w} not in the model vocabulary")
    return out


def lm_score_run(const int[::1] tok, const double[::1] lp, const double[::1] bo,
                 const int[::1] lo_arr, const int[::1] hi_arr,
                 root_lo, root_hi, order, ctx, ids, double ln_floor):
    cdef Py_ssize_t rlo = <Py_ssize_t>root_lo, rhi = <Py_ssize_t>root_hi
    cdef Py_ssize_t keep = <Py_ssize_t>order - 1
    if keep >= MAX_CTX:
        raise ValueError("order too large")
    cdef int buf[MAX_CTX]
    cdef Py_ssize_t m = len(ctx)
    cdef Py_ssize_t i
    for i in range(m):
        buf[i] = ctx[i]
    cdef double total = 0.0, lp10, ev
    cdef bint ok = False
    cdef int w
    for w_obj in ids:
        w = <int>w_obj
        lp10 = _event_lp10(tok, lp, bo, lo_arr, hi_arr, rlo, rhi, buf, m, w, &ok)
        if not ok:
            raise ValueError(f"token id {w} not in the model vocabulary")
        ev = lp10 * LN10
        if ev < ln_floor:
            ev = ln_floor
        total += ev
        if keep > 0:
            if m == keep:
                for i in range(keep - 1):
                    buf[i] = buf[i + 1]
                buf[keep - 1] = w
            else:
                buf[m] = w
                m += 1
    return total, tuple(int(buf[i]) for i in range(m))


cdef inline Py_ssize_t _row_find(const long long[::1] row_off, const int[::1] row_src,
                                 Py_ssize_t t, int s) nogil:
    return _bsearch(row_src, <Py_ssize_t>row_off[t], <Py_ssize_t>row_off[t + 1], s)


def ibm1_score(const long long[::1] row_off, const int[::1] row_src,
               const double[::1] probs, const int[::1] x_ids, const int[::1] y_ids,
               double floor):
    cdef Py_ssize_t n = y_ids.shape[0]
    cdef double log_norm = log(n + 1.0)
    cdef double total = 0.0, inner
    cdef Py_ssize_t si, k, j
    cdef int s, t
    for si in range(x_ids.shape[0]):
        s = x_ids[si]
        inner = 0.0
        if s >= 0:
            j = _row_find(row_off, row_src, 0, s)
            if j >= 0:
                inner += probs[j]
            for k in range(n):
                t = y_ids[k]
                if t >= 0:
                    j = _row_find(row_off, row_src, <Py_ssize_t>t, s)
                    if j >= 0:
                        inner += probs[j]
        if inner < floor:
            inner = floor
        total += log(inner) - log_norm
    return total


def ibm1_em_step(const int[::1] src_flat, const long long[::1] src_off,
                 const int[::1] tgt_flat, const long long[::1] tgt_off,
                 const long long[::1] row_off, const int[::1] row_src,
                 const double[::1] probs, long long[::1] work):
    counts_arr = np.zeros(probs.shape[0], dtype=np.float64)
    cdef double[::1] counts = counts_arr
    new_arr = np.empty(probs.shape[0], dtype=np.float64)
    cdef double[::1] new = new_arr
    cdef double ll = 0.0, denom, inv, tot, log_norm
    cdef Py_ssize_t npairs = src_off.shape[0] - 1
    cdef Py_ssize_t p, s_lo, s_hi, t_lo, t_hi, n, si, k, j, t_row, lo, hi
    cdef int s, t
    for p in range(npairs):
        s_lo = <Py_ssize_t>src_off[p]
        s_hi = <Py_ssize_t>src_off[p + 1]
        t_lo = <Py_ssize_t>tgt_off[p]
        t_hi = <Py_ssize_t>tgt_off[p + 1]
        n = t_hi - t_lo
        log_norm = log(n + 1.0)
        for si in range(s_lo, s_hi):
            s = src_flat[si]
            j = _row_find(row_off, row_src, 0, s)
            work[0] = j
            denom = probs[j]
            for k in range(n):
                t = tgt_flat[t_lo + k]
                j = _row_find(row_off, row_src, <Py_ssize_t>t, s)
                work[k + 1] = j
                denom += probs[j]
            ll += log(denom) - log_norm
            inv = 1.0 / denom
            for k in range(n + 1):
                j = <Py_ssize_t>work[k]
                counts[j] += probs[j] * inv
    cdef Py_ssize_t nrows = row_off.shape[0] - 1
    for t_row in range(nrows):
        lo = <Py_ssize_t>row_off[t_row]
        hi = <Py_ssize_t>row_off[t_row + 1]
        tot = 0.0
        for j in range(lo, hi):
            tot += counts[j]
        if tot > 0.0:
            for j in range(lo, hi):
                new[j] = counts[j] / tot
        else:
            for j in range(lo, hi):
                new[j] = probs[j]
    return new_arr, ll
