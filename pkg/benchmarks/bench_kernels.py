#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the numpy fallback.

Times the three hot kernels (popcount, IID classification, LPM trie walk)
plus the full filter cascade, on both backends where available.

    python benchmarks/bench_kernels.py [--n 1000000] [--prefixes 5000]
"""

from __future__ import annotations

import argparse
import random
import time

import numpy as np

from hitlist6._kernels import available_backends, build_trie, load_backend
from hitlist6.addr import MAX128, Prefix
from hitlist6.filtering import FilterConfig, PrefixSet, RoutingTable, apply_cascade
from hitlist6.ingest import Observation, SourceTag, merge


def timeit(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def make_inputs(n, n_prefixes, seed=1):
    rng = random.Random(seed)
    vals = np.random.default_rng(seed).integers(0, 1 << 64, size=n, dtype=np.uint64)
    prefixes = {}
    while len(prefixes) < n_prefixes:
        p = Prefix.make(rng.getrandbits(128), rng.randint(16, 64))
        prefixes[p] = len(prefixes)
    trie = build_trie((p.value, p.length, i) for p, i in prefixes.items())
    plist = list(prefixes)
    addrs = []
    for j in range(n):
        if j % 2 == 0:
            p = plist[rng.randrange(len(plist))]
            addrs.append(p.value | (rng.getrandbits(128) & ~p.mask() & MAX128))
        else:
            addrs.append(rng.getrandbits(128))
    hi = np.fromiter((a >> 64 for a in addrs), dtype=np.uint64, count=n)
    lo = np.fromiter((a & ((1 << 64) - 1) for a in addrs), dtype=np.uint64, count=n)
    return vals, trie, hi, lo, prefixes


def bench_cascade(n, seed=2):
    rng = random.Random(seed)
    addrs = [(0x2A05 << 112) | (rng.randrange(10) << 96) | rng.getrandbits(64) for _ in range(n)]
    tag = SourceTag("CaidaDnsNames", "bench")
    targets = merge([[Observation(a, 0, "unknown", None, tag) for a in addrs]])
    rows = {Prefix.make((0x2A05 << 112) | (k << 96), 32): frozenset({64500 + k}) for k in range(10)}
    cfg = FilterConfig(
        fullbogons=PrefixSet([Prefix.make(0x100 << 64, 64)]),
        iana_special=PrefixSet([Prefix.make(0xFE80 << 112, 10), Prefix.make(0xFC00 << 112, 7)]),
        routing=RoutingTable(rows),
        blacklist=PrefixSet([Prefix.make((0x2A05 << 112) | (3 << 96) | (0xB1AC << 80), 48)]),
    )
    return timeit(lambda: apply_cascade(targets, cfg), repeats=2)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=1_000_000, help="elements per kernel call")
    parser.add_argument("--prefixes", type=int, default=5_000, help="routing table size")
    args = parser.parse_args()

    vals, trie, hi, lo, prefixes = make_inputs(args.n, args.prefixes)
    backends = available_backends()
    print(f"backends available: {', '.join(backends)}")
    print(f"n = {args.n:,} elements, {len(prefixes):,} prefixes\n")
    print(f"{'kernel':<18}" + "".join(f"{name + ' (s)':>12}" for name in backends) + f"{'speedup':>10}")

    rows = [
        ("popcount64", lambda m: m.popcount64(vals)),
        ("classify_iids", lambda m: m.classify_iids(vals, 16, 20, 44)),
        ("trie_lookup", lambda m: m.trie_lookup(trie.child0, trie.child1, trie.leaf, hi, lo)),
    ]
    for name, call in rows:
        times = []
        results = []
        for backend in backends:
            mod = load_backend(backend)
            results.append(call(mod))
            times.append(timeit(lambda m=mod: call(m)))
        if len(results) == 2:
            assert (results[0] == results[1]).all(), f"{name}: backends disagree"
        speedup = f"{times[-1] / times[0]:.1f}x" if len(times) == 2 else "-"
        print(f"{name:<18}" + "".join(f"{t:>12.4f}" for t in times) + f"{speedup:>10}")

    cascade_seconds = bench_cascade(min(args.n, 1_000_000))
    print(f"\nfull cascade over {min(args.n, 1_000_000):,} targets "
          f"(selected backend): {cascade_seconds:.2f}s")


if __name__ == "__main__":
    main()
