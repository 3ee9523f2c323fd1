"""Flattened binary trie over 128-bit keys, shared by both kernel backends.

The trie is stored as three parallel int32 arrays (child0, child1, leaf).
Node 0 is the root; a child slot of -1 means "no edge"; leaf holds the
payload index attached at that node, or -1. Lookups walk address bits from
the most significant end and keep the deepest node with a payload, which is
exactly longest-prefix-match semantics.
"""

from __future__ import annotations

import numpy as np

TOP_BIT = 1 << 127


class TrieArrays:
    __slots__ = ("child0", "child1", "leaf", "n_nodes")

    def __init__(self, child0: np.ndarray, child1: np.ndarray, leaf: np.ndarray):
        self.child0 = child0
        self.child1 = child1
        self.leaf = leaf
        self.n_nodes = child0.shape[0]


def build_trie(prefixes) -> TrieArrays:
    """Build the flattened trie from (value128, length, payload) triples.

    Duplicate (value, length) pairs overwrite the payload; callers merge
    duplicates beforehand if union semantics are wanted. Build cost is
    O(sum of prefix lengths), which is fine for routing-table scale input.
    """
    child0 = [-1]
    child1 = [-1]
    leaf = [-1]
    for value, length, payload in prefixes:
        cur = 0
        bit_probe = TOP_BIT
        for _ in range(length):
            side = child1 if value & bit_probe else child0
            nxt = side[cur]
            if nxt < 0:
                nxt = len(child0)
                child0.append(-1)
                child1.append(-1)
                leaf.append(-1)
                side[cur] = nxt
            cur = nxt
            bit_probe >>= 1
        leaf[cur] = payload
    return TrieArrays(
        np.asarray(child0, dtype=np.int32),
        np.asarray(child1, dtype=np.int32),
        np.asarray(leaf, dtype=np.int32),
    )


def lookup_one(trie: TrieArrays, hi: int, lo: int) -> int:
    """Scalar longest-prefix-match; returns payload index or -1."""
    child0 = trie.child0
    child1 = trie.child1
    leaf = trie.leaf
    cur = 0
    best = int(leaf[0])
    key = (hi << 64) | lo
    bit_probe = TOP_BIT
    for _ in range(128):
        nxt = child1[cur] if key & bit_probe else child0[cur]
        if nxt < 0:
            break
        cur = nxt
        payload = leaf[cur]
        if payload >= 0:
            best = payload
        bit_probe >>= 1
    return int(best)
