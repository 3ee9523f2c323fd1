"""Portable kernel backend: vectorized numpy, no compiled extension.

Function-for-function equivalent of the Cython backend (_ckern); the test
suite asserts both produce identical outputs. Selected automatically when
the extension is not built, or when HITLIST6_PURE=1.
"""

from __future__ import annotations

import numpy as np

NAME = "py"

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)

_EUI64_MARKER = np.uint64(0xFFFE)
_UL_BIT = np.uint64(1) << np.uint64(57)


def popcount64(vals: np.ndarray) -> np.ndarray:
    """Per-element population count of a uint64 array (SWAR)."""
    x = np.ascontiguousarray(vals, dtype=np.uint64).copy()
    x -= (x >> np.uint64(1)) & _M1
    x = (x & _M2) + ((x >> np.uint64(2)) & _M2)
    x = (x + (x >> np.uint64(4))) & _M4
    return ((x * _H01) >> np.uint64(56)).astype(np.uint8)


def classify_iids(iids: np.ndarray, low_threshold: int, band_lo: int, band_hi: int) -> np.ndarray:
    """Classify interface identifiers; returns uint8 codes.

    Codes: 0 other, 1 eui64, 2 low, 3 privacy-random. Precedence
    eui64 > low > privacy, same as the scalar classifier.
    """
    v = np.ascontiguousarray(iids, dtype=np.uint64)
    out = np.zeros(v.shape[0], dtype=np.uint8)

    weights = popcount64(v)
    privacy = ((v & _UL_BIT) == 0) & (weights >= band_lo) & (weights <= band_hi)
    out[privacy] = 3

    if low_threshold >= 64:
        out[:] = 2
    else:
        out[v < (np.uint64(1) << np.uint64(low_threshold))] = 2

    eui64 = ((v >> np.uint64(24)) & np.uint64(0xFFFF)) == _EUI64_MARKER
    out[eui64] = 1
    return out


def trie_lookup(child0, child1, leaf, hi, lo) -> np.ndarray:
    """Batch longest-prefix-match over the flattened trie.

    Level-synchronous walk: all still-alive queries descend one bit per
    iteration; lanes drop out when they fall off the trie.
    """
    n = hi.shape[0]
    best = np.full(n, leaf[0], dtype=np.int32)
    if n == 0 or child0.shape[0] == 1 and child0[0] < 0 and child1[0] < 0:
        return best
    idx = np.arange(n, dtype=np.int64)
    cur = np.zeros(n, dtype=np.int32)
    hi_w = np.ascontiguousarray(hi, dtype=np.uint64)
    lo_w = np.ascontiguousarray(lo, dtype=np.uint64)
    for depth in range(128):
        if idx.size == 0:
            break
        if depth < 64:
            bits = (hi_w >> np.uint64(63 - depth)) & np.uint64(1)
        else:
            bits = (lo_w >> np.uint64(127 - depth)) & np.uint64(1)
        nxt = np.where(bits.astype(bool), child1[cur], child0[cur])
        alive = nxt >= 0
        if not alive.all():
            idx = idx[alive]
            cur = nxt[alive]
            hi_w = hi_w[alive]
            lo_w = lo_w[alive]
        else:
            cur = nxt
        payload = leaf[cur]
        has = payload >= 0
        if has.any():
            best[idx[has]] = payload[has]
    return best
