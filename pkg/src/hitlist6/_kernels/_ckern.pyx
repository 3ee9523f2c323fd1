# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend: per-element C loops over the hot paths.

Same contract as pyback; selected by hitlist6._kernels when importable.
All loops release the GIL so callers can chunk work across threads.
"""

import numpy as np

cimport cython
from libc.stdint cimport int32_t, int64_t, uint8_t, uint64_t

NAME = "c"


cdef inline uint64_t _popcount(uint64_t v) nogil:
    v = v - ((v >> 1) & 0x5555555555555555UL)
    v = (v & 0x3333333333333333UL) + ((v >> 2) & 0x3333333333333333UL)
    v = (v + (v >> 4)) & 0x0F0F0F0F0F0F0F0FUL
    return (v * 0x0101010101010101UL) >> 56


def popcount64(vals):
    cdef uint64_t[::1] v = np.ascontiguousarray(vals, dtype=np.uint64)
    cdef Py_ssize_t i, n = v.shape[0]
    out = np.empty(n, dtype=np.uint8)
    cdef uint8_t[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = <uint8_t> _popcount(v[i])
    return out


def classify_iids(iids, int low_threshold, int band_lo, int band_hi):
    cdef uint64_t[::1] v = np.ascontiguousarray(iids, dtype=np.uint64)
    cdef Py_ssize_t i, n = v.shape[0]
    out = np.empty(n, dtype=np.uint8)
    cdef uint8_t[::1] o = out
    cdef uint64_t iid, w
    cdef uint64_t low_limit = 0
    cdef bint all_low = low_threshold >= 64
    if not all_low:
        low_limit = (<uint64_t> 1) << low_threshold
    cdef uint64_t ul_bit = (<uint64_t> 1) << 57
    with nogil:
        for i in range(n):
            iid = v[i]
            if ((iid >> 24) & 0xFFFFUL) == 0xFFFEUL:
                o[i] = 1
            elif all_low or iid < low_limit:
                o[i] = 2
            else:
                w = _popcount(iid)
                if (iid & ul_bit) == 0 and w >= <uint64_t> band_lo and w <= <uint64_t> band_hi:
                    o[i] = 3
                else:
                    o[i] = 0
    return out


def trie_lookup(child0, child1, leaf, hi, lo):
    cdef int32_t[::1] c0 = np.ascontiguousarray(child0, dtype=np.int32)
    cdef int32_t[::1] c1 = np.ascontiguousarray(child1, dtype=np.int32)
    cdef int32_t[::1] lf = np.ascontiguousarray(leaf, dtype=np.int32)
    cdef uint64_t[::1] h = np.ascontiguousarray(hi, dtype=np.uint64)
    cdef uint64_t[::1] l = np.ascontiguousarray(lo, dtype=np.uint64)
    cdef Py_ssize_t i, n = h.shape[0]
    out = np.empty(n, dtype=np.int32)
    cdef int32_t[::1] o = out
    cdef int32_t cur, nxt, best
    cdef int depth
    cdef uint64_t bit
    with nogil:
        for i in range(n):
            cur = 0
            best = lf[0]
            for depth in range(128):
                if depth < 64:
                    bit = (h[i] >> (63 - depth)) & 1
                else:
                    bit = (l[i] >> (127 - depth)) & 1
                nxt = c1[cur] if bit else c0[cur]
                if nxt < 0:
                    break
                cur = nxt
                if lf[cur] >= 0:
                    best = lf[cur]
            o[i] = best
    return out
