"""Pure-Python kernel twin.

Mirrors the compiled extension operation for operation with the SAME float
operation order, so both backends produce bit-identical results. Keep any
change here in lockstep with _speedups.pyx.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND_NAME = "python"

LN10 = math.log(10.0)


def _bsearch(tok, lo: int, hi: int, t: int) -> int:
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


def _find(tok, lo_arr, hi_arr, root_lo: int, root_hi: int, gram) -> int:
    """Walk the flattened trie; return entry index of `gram` or -1."""
    lo, hi = root_lo, root_hi
    e = -1
    for t in gram:
        e = _bsearch(tok, lo, hi, t)
        if e < 0:
            return -1
        lo, hi = lo_arr[e], hi_arr[e]
    return e


def lm_event_lp10(tok, lp, bo, lo_arr, hi_arr, root_lo, root_hi, ctx, w) -> float:
    """log10 p(w | ctx) via backoff over the stored n-gram trie.

    ctx is a sequence of token ids (most recent last, length < order). All
    unigrams are stored, so the walk always terminates at the unigram level.
    """
    acc = 0.0
    m = len(ctx)
    for start in range(m + 1):
        gram = tuple(ctx[start:]) + (w,)
        e = _find(tok, lo_arr, hi_arr, root_lo, root_hi, gram)
        if e >= 0:
            return acc + lp[e]
        ce = _find(tok, lo_arr, hi_arr, root_lo, root_hi, ctx[start:])
        if ce >= 0:
            acc += bo[ce]
    raise ValueError(f"token id {w} not in the model vocabulary")


def lm_score_run(tok, lp, bo, lo_arr, hi_arr, root_lo, root_hi, order, ctx, ids, ln_floor):
    """Score a token-id run left to right in natural log.

    Returns (total, new_ctx). Each event is floored at ln_floor. The context
    window keeps the last order-1 ids.
    """
    window = list(ctx)
    total = 0.0
    keep = order - 1
    for w in ids:
        lp10 = lm_event_lp10(tok, lp, bo, lo_arr, hi_arr, root_lo, root_hi, window, w)
        ev = lp10 * LN10
        if ev < ln_floor:
            ev = ln_floor
        total += ev
        window.append(w)
        if len(window) > keep:
            del window[0]
    return total, tuple(window)


def _row_find(row_off, row_src, t: int, s: int) -> int:
    return _bsearch(row_src, int(row_off[t]), int(row_off[t + 1]), s)


def ibm1_score(row_off, row_src, probs, x_ids, y_ids, floor) -> float:
    """Channel score: sum over source tokens of the log mean translation
    probability under NULL (row 0) plus every target token. OOV ids are -1:
    an OOV target contributes nothing, an OOV source hits the floor."""
    n = len(y_ids)
    log_norm = math.log(n + 1.0)
    total = 0.0
    for s in x_ids:
        inner = 0.0
        if s >= 0:
            j = _row_find(row_off, row_src, 0, s)
            if j >= 0:
                inner += probs[j]
            for t in y_ids:
                if t >= 0:
                    j = _row_find(row_off, row_src, int(t), s)
                    if j >= 0:
                        inner += probs[j]
        if inner < floor:
            inner = floor
        total += math.log(inner) - log_norm
    return total


def ibm1_em_step(src_flat, src_off, tgt_flat, tgt_off, row_off, row_src, probs, work):
    """One EM iteration. Returns (new_probs, log_likelihood).

    Pair p aligns src_flat[src_off[p]:src_off[p+1]] with
    tgt_flat[tgt_off[p]:tgt_off[p+1]]; every (target, source) pair that
    co-occurs is present in the CSR table, so lookups cannot miss during
    training. work is an int64 scratch array of length >= max target len + 1.
    """
    counts = np.zeros_like(probs)
    ll = 0.0
    npairs = len(src_off) - 1
    for p in range(npairs):
        s_lo, s_hi = int(src_off[p]), int(src_off[p + 1])
        t_lo, t_hi = int(tgt_off[p]), int(tgt_off[p + 1])
        n = t_hi - t_lo
        log_norm = math.log(n + 1.0)
        for si in range(s_lo, s_hi):
            s = int(src_flat[si])
            j = _row_find(row_off, row_src, 0, s)
            work[0] = j
            denom = probs[j]
            for k in range(n):
                t = int(tgt_flat[t_lo + k])
                j = _row_find(row_off, row_src, t, s)
                work[k + 1] = j
                denom += probs[j]
            ll += math.log(denom) - log_norm
            inv = 1.0 / denom
            for k in range(n + 1):
                j = int(work[k])
                counts[j] += probs[j] * inv
    new = np.empty_like(probs)
    nrows = len(row_off) - 1
    for t in range(nrows):
        lo, hi = int(row_off[t]), int(row_off[t + 1])
        tot = 0.0
        for j in range(lo, hi):
            tot += counts[j]
        if tot > 0.0:
            for j in range(lo, hi):
                new[j] = counts[j] / tot
        else:
            for j in range(lo, hi):
                new[j] = probs[j]
    return new, ll
