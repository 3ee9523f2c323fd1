"""The filter cascade: CIDR sets, pfx2as longest-prefix-match, stage counts.

Stage order is fixed (dedup, fullbogons, iana_special, own_networks,
pfx2as_whitelist, announced_whitelist, blacklist): drop stages remove
members, whitelist stages remove non-members. Membership and LPM run on
the kernel backend over packed address columns.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .addr import MAX128, Prefix, parse_prefix
from .errors import FatalFormat, MalformedCidr, MalformedRow
from .ingest import TargetSet

STAGE_ORDER = (
    "dedup",
    "fullbogons",
    "iana_special",
    "own_networks",
    "pfx2as_whitelist",
    "announced_whitelist",
    "blacklist",
)

LOW64 = (1 << 64) - 1


class PrefixSet:
    """Immutable set of prefixes; membership is the union of containments."""

    def __init__(self, prefixes=()):
        self.prefixes: tuple[Prefix, ...] = tuple(sorted(set(prefixes)))
        if self.prefixes:
            self._trie = _kernels.build_trie(
                (p.value, p.length, 1) for p in self.prefixes
            )
        else:
            self._trie = None

    def __len__(self):
        return len(self.prefixes)

    def __bool__(self):
        return bool(self.prefixes)

    def __contains__(self, address: int) -> bool:
        if self._trie is None:
            return False
        return _kernels.lookup_one(self._trie, address >> 64, address & LOW64) >= 0

    def contains_many(self, hi: np.ndarray, lo: np.ndarray, threads: int = 1) -> np.ndarray:
        """Vectorized membership over packed address columns."""
        if self._trie is None:
            return np.zeros(hi.shape[0], dtype=bool)
        t = self._trie
        hits = _chunked_lookup(t, hi, lo, threads)
        return hits >= 0


def load_cidr_set(stream) -> PrefixSet:
    """One CIDR per line; '#' comments allowed; duplicates/overlaps fine."""
    prefixes = []
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            prefixes.append(parse_prefix(line))
        except Exception as err:
            raise MalformedCidr(str(err), lineno) from None
    return PrefixSet(prefixes)


class RoutingTable:
    """pfx2as longest-prefix-match table: Prefix -> set of origin ASes."""

    def __init__(self, entries: dict[Prefix, frozenset[int]]):
        self.prefixes: tuple[Prefix, ...] = tuple(sorted(entries))
        self.origins: tuple[frozenset[int], ...] = tuple(entries[p] for p in self.prefixes)
        if self.prefixes:
            self._trie = _kernels.build_trie(
                (p.value, p.length, i) for i, p in enumerate(self.prefixes)
            )
        else:
            self._trie = None
        all_ases = set()
        for origin in self.origins:
            all_ases |= origin
        self.as_numbers = frozenset(all_ases)

    @property
    def prefix_count(self) -> int:
        return len(self.prefixes)

    @property
    def as_count(self) -> int:
        return len(self.as_numbers)

    def lookup(self, address: int) -> tuple[Prefix, frozenset[int]] | None:
        """Longest match for one address: (matched prefix, AS set) or None."""
        if self._trie is None:
            return None
        idx = _kernels.lookup_one(self._trie, address >> 64, address & LOW64)
        if idx < 0:
            return None
        return self.prefixes[idx], self.origins[idx]

    def lookup_many(self, hi: np.ndarray, lo: np.ndarray, threads: int = 1) -> np.ndarray:
        """Vectorized LPM: int32 array of entry indices, -1 where unmatched."""
        if self._trie is None:
            return np.full(hi.shape[0], -1, dtype=np.int32)
        return _chunked_lookup(self._trie, hi, lo, threads)


def _chunked_lookup(trie, hi, lo, threads: int) -> np.ndarray:
    if threads <= 1 or hi.shape[0] < 4096:
        return _kernels.trie_lookup(trie.child0, trie.child1, trie.leaf, hi, lo)
    bounds = np.linspace(0, hi.shape[0], threads + 1, dtype=np.int64)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(
            pool.map(
                lambda se: _kernels.trie_lookup(
                    trie.child0, trie.child1, trie.leaf, hi[se[0] : se[1]], lo[se[0] : se[1]]
                ),
                zip(bounds[:-1], bounds[1:]),
            )
        )
    return np.concatenate(parts)


def load_pfx2as(stream) -> RoutingTable:
    """Tab-separated `prefix \\t length \\t as_spec` rows.

    as_spec splits on ',' (multi-origin) and '_' (AS sets) into one flat AS
    set. Duplicate prefixes union their origins. Zero valid rows is fatal.
    """
    entries: dict[Prefix, set[int]] = {}
    rows = 0
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise MalformedRow("expected 3 tab-separated fields", lineno)
        base_text, length_text, as_spec = fields
        try:
            length = int(length_text)
            prefix = parse_prefix(f"{base_text.strip()}/{length}")
        except Exception as err:
            raise MalformedRow(str(err), lineno) from None
        ases = set()
        for chunk in as_spec.replace("_", ",").split(","):
            chunk = chunk.strip()
            if not chunk:
                raise MalformedRow(f"empty AS in spec {as_spec!r}", lineno)
            try:
                as_number = int(chunk)
            except ValueError:
                raise MalformedRow(f"bad AS number {chunk!r}", lineno) from None
            if not 0 <= as_number < 2**32:
                raise MalformedRow(f"AS number {as_number} out of range", lineno)
            ases.add(as_number)
        entries.setdefault(prefix, set()).update(ases)
        rows += 1
    if rows == 0:
        raise FatalFormat("pfx2as input contains no valid rows")
    return RoutingTable({p: frozenset(a) for p, a in entries.items()})


@dataclass
class FilterConfig:
    self_prefixes: PrefixSet = field(default_factory=PrefixSet)
    fullbogons: PrefixSet = field(default_factory=PrefixSet)
    iana_special: PrefixSet = field(default_factory=PrefixSet)
    own_networks: PrefixSet = field(default_factory=PrefixSet)
    routing: RoutingTable = field(default_factory=lambda: RoutingTable({}))
    announced: PrefixSet = field(default_factory=PrefixSet)
    blacklist: PrefixSet = field(default_factory=PrefixSet)


@dataclass
class StageReport:
    """Per-stage removed/remaining counts, in fixed cascade order."""

    initial_observations: int
    stages: list[tuple[str, int, int]]

    def removed(self, stage: str) -> int:
        for name, removed, _ in self.stages:
            if name == stage:
                return removed
        raise KeyError(stage)

    def remaining(self, stage: str) -> int:
        for name, _, remaining in self.stages:
            if name == stage:
                return remaining
        raise KeyError(stage)

    @property
    def final_count(self) -> int:
        return self.stages[-1][2]

    def to_json_obj(self) -> dict:
        return {
            "initial_observations": self.initial_observations,
            "stages": [
                {"stage": name, "removed": removed, "remaining": remaining}
                for name, removed, remaining in self.stages
            ],
            "final": self.final_count,
        }


def apply_cascade(targets: TargetSet, cfg: FilterConfig, threads: int = 1) -> tuple[TargetSet, StageReport]:
    """Run the full cascade; exact counts, filtered set is a subset.

    The dedup stage reports the collapse from total observations to unique
    addresses (the TargetSet is already deduplicated by construction); the
    remaining six stages are set operations over the unique addresses. An
    empty announced set disables that stage (removes nothing).
    """
    hi, lo, order = targets.packed()
    n = len(order)
    total_obs = targets.total_observations()
    stages: list[tuple[str, int, int]] = [("dedup", total_obs - n, n)]
    keep = np.ones(n, dtype=bool)
    remaining = n

    def drop(mask: np.ndarray) -> int:
        nonlocal remaining
        removed_mask = keep & mask
        removed = int(removed_mask.sum())
        keep[removed_mask] = False
        remaining -= removed
        return removed

    for stage, pset in (
        ("fullbogons", cfg.fullbogons),
        ("iana_special", cfg.iana_special),
        ("own_networks", cfg.own_networks),
    ):
        stages.append((stage, drop(pset.contains_many(hi, lo, threads)), remaining))

    matched = cfg.routing.lookup_many(hi, lo, threads) >= 0
    stages.append(("pfx2as_whitelist", drop(~matched), remaining))

    if cfg.announced:
        announced = cfg.announced.contains_many(hi, lo, threads)
        stages.append(("announced_whitelist", drop(~announced), remaining))
    else:
        stages.append(("announced_whitelist", 0, remaining))

    stages.append(("blacklist", drop(cfg.blacklist.contains_many(hi, lo, threads)), remaining))

    kept_addresses = [order[i] for i in np.flatnonzero(keep)]
    return targets.subset(kept_addresses), StageReport(total_obs, stages)
