"""Derived statistics: coverage, runup, IID profiles, stable core, advice.

Everything here is a deterministic pure function of its inputs; report
objects serialize to plain dicts so the CLI can emit byte-stable JSON.
Normalized coverage weights use exact rational arithmetic: the per-source
weights of one AS (1/k over the k sources containing it) must sum to
exactly 1, so the per-source sums add up to the union size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import _kernels
from .addr import (
    DEFAULT_LOW_THRESHOLD,
    DEFAULT_PRIVACY_BAND,
    Prefix,
    canonical_text,
    eui64_decode,
)
from .errors import MissingRoutingTable, UnknownScanType, WindowExceedsMatrix
from .filtering import RoutingTable
from .ingest import SourceTag, TargetSet
from .probe import ResponseMatrix, fmt_pct, icmp_vs_inprotocol  # noqa: F401  (re-export)

LOW64 = (1 << 64) - 1

REFERENCE_WEIGHT_MEAN = 31.5
REFERENCE_WEIGHT_VARIANCE = 15.75

DEFAULT_SERVER_PORTS = frozenset({("tcp", 80), ("tcp", 443), ("udp", 443)})

SCAN_GOALS = (
    "internet_structure",
    "security_posture",
    "routers",
    "clients",
    "active_prefixes",
)

CLASS_CODES = {0: "other", 1: "eui64", 2: "low", 3: "privacy_random"}


def fmt_fraction(value: Fraction) -> str:
    """Exact rational rendered to 2 decimals (round-half-even)."""
    hundredths = round(value * 100)
    return f"{hundredths // 100}.{hundredths % 100:02d}"


@dataclass
class SourceCoverage:
    targets: int
    as_set: frozenset[int]
    prefix_set: frozenset[Prefix]
    unique_as_count: int = 0
    unique_prefix_count: int = 0
    normalized_as: Fraction = Fraction(0)
    normalized_prefix: Fraction = Fraction(0)


@dataclass
class CoverageReport:
    per_source: dict[SourceTag, SourceCoverage]
    as_denominator: int
    prefix_denominator: int
    combined_as: int
    combined_prefix: int

    def to_json_obj(self) -> dict:
        sources = {}
        for tag in sorted(self.per_source):
            cov = self.per_source[tag]
            sources[tag.label()] = {
                "targets": cov.targets,
                "as_count": len(cov.as_set),
                "as_coverage_pct": fmt_pct(len(cov.as_set), self.as_denominator),
                "unique_as_count": cov.unique_as_count,
                "normalized_as": fmt_fraction(cov.normalized_as),
                "prefix_count": len(cov.prefix_set),
                "prefix_coverage_pct": fmt_pct(len(cov.prefix_set), self.prefix_denominator),
                "unique_prefix_count": cov.unique_prefix_count,
                "normalized_prefix": fmt_fraction(cov.normalized_prefix),
            }
        return {
            "sources": sources,
            "denominators": {"ases": self.as_denominator, "prefixes": self.prefix_denominator},
            "combined": {
                "as_count": self.combined_as,
                "as_coverage_pct": fmt_pct(self.combined_as, self.as_denominator),
                "prefix_count": self.combined_prefix,
                "prefix_coverage_pct": fmt_pct(self.combined_prefix, self.prefix_denominator),
            },
        }


def _attribute(targets: TargetSet, routing: RoutingTable) -> tuple[set[int], set[Prefix]]:
    hi, lo, _ = targets.packed()
    idx = routing.lookup_many(hi, lo)
    ases: set[int] = set()
    prefixes: set[Prefix] = set()
    for i in np.unique(idx[idx >= 0]):
        prefixes.add(routing.prefixes[i])
        ases |= routing.origins[i]
    return ases, prefixes


def coverage(sets: dict[SourceTag, TargetSet], routing: RoutingTable) -> CoverageReport:
    """Per-source AS/prefix coverage, uniqueness, and normalized weights."""
    if routing is None or routing.prefix_count == 0:
        raise MissingRoutingTable("coverage needs a loaded pfx2as table")
    if not sets:
        raise ValueError("coverage needs at least one source")
    per_source: dict[SourceTag, SourceCoverage] = {}
    for tag, targets in sets.items():
        ases, prefixes = _attribute(targets, routing)
        per_source[tag] = SourceCoverage(len(targets), frozenset(ases), frozenset(prefixes))

    as_membership: dict[int, int] = {}
    prefix_membership: dict[Prefix, int] = {}
    for cov in per_source.values():
        for a in cov.as_set:
            as_membership[a] = as_membership.get(a, 0) + 1
        for p in cov.prefix_set:
            prefix_membership[p] = prefix_membership.get(p, 0) + 1
    for cov in per_source.values():
        cov.unique_as_count = sum(1 for a in cov.as_set if as_membership[a] == 1)
        cov.unique_prefix_count = sum(1 for p in cov.prefix_set if prefix_membership[p] == 1)
        cov.normalized_as = sum(
            (Fraction(1, as_membership[a]) for a in cov.as_set), Fraction(0)
        )
        cov.normalized_prefix = sum(
            (Fraction(1, prefix_membership[p]) for p in cov.prefix_set), Fraction(0)
        )
    return CoverageReport(
        per_source,
        routing.as_count,
        routing.prefix_count,
        len(as_membership),
        len(prefix_membership),
    )


def runup(observations, routing: RoutingTable, bucket: int = 86_400) -> list[dict]:
    """Cumulative first-seen counts of addresses/ASes/prefixes per bucket."""
    rows = sorted(observations, key=lambda o: (o.timestamp, o.address))
    seen_addr: set[int] = set()
    seen_as: set[int] = set()
    seen_prefix: set[Prefix] = set()
    series: list[dict] = []
    current = None
    for obs in rows:
        b = obs.timestamp // bucket
        if b != current:
            if current is not None:
                series.append(_runup_row(current, bucket, seen_addr, seen_as, seen_prefix))
            current = b
        if obs.address in seen_addr:
            continue
        seen_addr.add(obs.address)
        matched = routing.lookup(obs.address)
        if matched is not None:
            prefix, ases = matched
            seen_prefix.add(prefix)
            seen_as |= ases
    if current is not None:
        series.append(_runup_row(current, bucket, seen_addr, seen_as, seen_prefix))
    return series


def _runup_row(bucket_index, bucket, seen_addr, seen_as, seen_prefix):
    return {
        "bucket_start": bucket_index * bucket,
        "cumulative_ips": len(seen_addr),
        "cumulative_ases": len(seen_as),
        "cumulative_prefixes": len(seen_prefix),
    }


def port_breakdown(flows, n: int) -> list[dict]:
    """Top-n (transport, port) combinations by flow observation count."""
    counts: dict[tuple[str, int | None], int] = {}
    total = 0
    for obs in flows:
        if obs.transport == "unknown":
            continue
        total += 1
        key = (obs.transport, obs.port)
        counts[key] = counts.get(key, 0) + 1
    ranked = sorted(
        counts.items(),
        key=lambda kv: (-kv[1], kv[0][0], -1 if kv[0][1] is None else kv[0][1]),
    )
    out = []
    for rank, ((transport, port), count) in enumerate(ranked[:n], start=1):
        label = transport if port is None else f"{transport}{port}"
        out.append({"rank": rank, "scan": label, "flows": count, "pct": fmt_pct(count, total)})
    return out


class OuiDatabase:
    """IEEE OUI registry: 3-byte prefix of the recovered MAC -> vendor."""

    def __init__(self, mapping: dict[bytes, str]):
        self.mapping = mapping

    @classmethod
    def load(cls, stream) -> "OuiDatabase":
        mapping: dict[bytes, str] = {}
        for line in stream:
            if "(hex)" not in line:
                continue
            head, _, vendor = line.partition("(hex)")
            digits = head.strip().replace("-", "")
            if len(digits) != 6:
                continue
            try:
                key = bytes.fromhex(digits)
            except ValueError:
                continue
            mapping[key] = vendor.strip()
        return cls(mapping)

    def lookup(self, mac: bytes) -> str | None:
        return self.mapping.get(mac[:3])


@dataclass
class IIDProfile:
    per_source: dict[SourceTag, dict[str, int]]
    vendor_ranking: dict[SourceTag, list[tuple[str, int]]]

    def to_json_obj(self) -> dict:
        out = {}
        for tag in sorted(self.per_source):
            counts = self.per_source[tag]
            total = sum(counts.values())
            eui64 = counts.get("eui64", 0)
            ranking = [
                {"vendor": vendor, "count": count, "pct": fmt_pct(count, eui64)}
                for vendor, count in self.vendor_ranking[tag]
            ]
            out[tag.label()] = {
                "counts": counts,
                "targets": total,
                "eui64_fraction_pct": fmt_pct(eui64, total),
                "vendor_ranking": ranking,
            }
        return out


def iid_profile(
    sets: dict[SourceTag, TargetSet],
    oui: OuiDatabase,
    low_threshold: int = DEFAULT_LOW_THRESHOLD,
    privacy_band: tuple[int, int] = DEFAULT_PRIVACY_BAND,
) -> IIDProfile:
    """Classify every address per source and rank EUI-64 MAC vendors."""
    per_source: dict[SourceTag, dict[str, int]] = {}
    rankings: dict[SourceTag, list[tuple[str, int]]] = {}
    for tag, targets in sets.items():
        _, lo, order = targets.packed()
        codes = _kernels.classify_iids(lo, low_threshold, privacy_band[0], privacy_band[1])
        counts = {name: 0 for name in CLASS_CODES.values()}
        vendor_counts: dict[str, int] = {}
        for code, count in zip(*np.unique(codes, return_counts=True)):
            counts[CLASS_CODES[int(code)]] = int(count)
        for i in np.flatnonzero(codes == 1):
            mac = eui64_decode(order[i] & LOW64)
            vendor = oui.lookup(mac) or "unknown"
            vendor_counts[vendor] = vendor_counts.get(vendor, 0) + 1
        per_source[tag] = counts
        rankings[tag] = sorted(vendor_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return IIDProfile(per_source, rankings)


@dataclass
class HammingHistogram:
    counts: list[int]  # index = weight 0..64
    n: int
    mean: float | None
    variance: float | None
    reference_mean: float = REFERENCE_WEIGHT_MEAN
    reference_variance: float = REFERENCE_WEIGHT_VARIANCE

    def to_json_obj(self) -> dict:
        return {
            "counts": self.counts,
            "samples": self.n,
            "mean": self.mean,
            "variance": self.variance,
            "reference_mean": self.reference_mean,
            "reference_variance": self.reference_variance,
        }


def hamming_histogram(iids) -> HammingHistogram:
    """Exact weight histogram plus sample mean/population variance."""
    arr = np.asarray(iids, dtype=np.uint64)
    if arr.size == 0:
        return HammingHistogram([0] * 65, 0, None, None)
    weights = _kernels.popcount64(arr)
    counts = np.bincount(weights, minlength=65)
    mean = float(weights.mean())
    variance = float(weights.astype(np.float64).var())
    return HammingHistogram([int(c) for c in counts], int(arr.size), mean, variance)


@dataclass
class AgilityReport:
    prefixes_per_iid: dict[int, set[int]]  # iid -> /64 base values
    total_iids: int
    agile_iids: int

    @property
    def agile_fraction(self) -> float:
        return self.agile_iids / self.total_iids if self.total_iids else 0.0

    def to_json_obj(self) -> dict:
        return {
            "total_iids": self.total_iids,
            "agile_iids": self.agile_iids,
            "agile_pct": fmt_pct(self.agile_iids, self.total_iids) if self.total_iids else "n/a",
        }


def prefix_agility(observations, eui64_only: bool = False) -> AgilityReport:
    """Group by IID, collect distinct /64s; agile = seen under 2 or more."""
    groups: dict[int, set[int]] = {}
    for obs in observations:
        iid = obs.address & LOW64
        if eui64_only and (iid >> 24) & 0xFFFF != 0xFFFE:
            continue
        groups.setdefault(iid, set()).add(obs.address & ~LOW64)
    agile = sum(1 for prefixes in groups.values() if len(prefixes) >= 2)
    return AgilityReport(groups, len(groups), agile)


def stable_core(matrix: ResponseMatrix, window: int = 604_800) -> list[int]:
    """Addresses responsive (any scan) at every planned offset within the
    window, sorted by canonical text."""
    if window > matrix.max_offset:
        raise WindowExceedsMatrix(
            f"window {window}s exceeds probed span {matrix.max_offset}s"
        )
    required = [o for o in matrix.intervals if o <= window]
    responsive_offsets: dict[int, set[int]] = {}
    targets: set[int] = set()
    for (target, _, offset), cell in matrix.cells.items():
        targets.add(target)
        if cell.responsive:
            responsive_offsets.setdefault(target, set()).add(offset)
    stable = [
        t for t in targets if all(o in responsive_offsets.get(t, ()) for o in required)
    ]
    return sorted(stable, key=canonical_text)


@dataclass
class ServerCoverage:
    server_targets: int
    total_targets: int
    server_as: int
    total_as: int
    server_prefix: int
    total_prefix: int

    def to_json_obj(self) -> dict:
        return {
            "server_targets": self.server_targets,
            "total_targets": self.total_targets,
            "ases": {
                "servers": self.server_as,
                "total": self.total_as,
                "pct": fmt_pct(self.server_as, self.total_as),
            },
            "prefixes": {
                "servers": self.server_prefix,
                "total": self.total_prefix,
                "pct": fmt_pct(self.server_prefix, self.total_prefix),
            },
        }


def server_coverage(
    targets: TargetSet,
    routing: RoutingTable,
    server_ports=DEFAULT_SERVER_PORTS,
) -> ServerCoverage:
    """AS/prefix coverage of targets observed on server ports, relative to
    the coverage of the whole set."""
    server_ports = frozenset(server_ports)
    server_addresses = [
        a
        for a, entry in targets.entries.items()
        if entry.port_protocols & server_ports
    ]
    servers = targets.subset(server_addresses)
    total_as, total_prefix = _attribute(targets, routing)
    server_as, server_prefix = _attribute(servers, routing)
    return ServerCoverage(
        len(servers), len(targets), len(server_as), len(total_as), len(server_prefix), len(total_prefix)
    )


# Ordered source-kind plans per scan goal. Extensions are appended after
# the core kinds; missing kinds surface in the notes instead of the plan.
_GOAL_PLANS = {
    "internet_structure": {
        "core": ("PassiveFlow", "CaidaDnsNames"),
        "extension": ("DnsAny", "ZoneFile", "ReverseDns", "AlexaList", "Traceroute"),
        "note": "maximize AS and prefix coverage; missing prefixes can be probed with guessed IIDs (e.g. ::1)",
    },
    "security_posture": {
        "core": ("AlexaList", "ZoneFile", "DnsAny", "ReverseDns"),
        "extension": ("PassiveFlow", "CaidaDnsNames", "Traceroute"),
        "note": "active sources provide likely servers with high response rates; passive sources extend coverage",
    },
    "routers": {
        "core": ("CaidaDnsNames", "Traceroute"),
        "extension": ("DnsAny", "ZoneFile", "ReverseDns", "AlexaList"),
        "note": "router-focused: start from traceroute-derived data, then traceroute toward other active sources",
    },
    "clients": {
        "core": ("PassiveFlow",),
        "extension": (),
        "note": "client addresses vanish quickly; probe almost immediately after observation",
    },
    "active_prefixes": {
        "core": ("PassiveFlow",),
        "extension": (),
        "note": "passive sources are key to identifying active prefixes and their subprefixes",
    },
}


@dataclass
class Recommendation:
    scan_type: str
    plan: list[SourceTag]
    rationale: list[str]
    notes: list[str] = field(default_factory=list)

    def to_json_obj(self) -> dict:
        return {
            "scan_type": self.scan_type,
            "plan": [tag.label() for tag in self.plan],
            "rationale": self.rationale,
            "notes": self.notes,
        }


def recommend(
    scan_type: str,
    available: set[SourceTag],
    coverage_report: CoverageReport | None = None,
    response_stats: dict | None = None,
) -> Recommendation:
    """Ordered source plan for a scan goal, annotated with measured numbers."""
    if scan_type not in _GOAL_PLANS:
        raise UnknownScanType(
            f"unknown scan type {scan_type!r}; expected one of {', '.join(SCAN_GOALS)}"
        )
    spec = _GOAL_PLANS[scan_type]
    by_kind: dict[str, list[SourceTag]] = {}
    for tag in available:
        by_kind.setdefault(tag.kind, []).append(tag)
    plan: list[SourceTag] = []
    rationale: list[str] = []
    notes: list[str] = [spec["note"]]
    for role, kinds in (("core", spec["core"]), ("extension", spec["extension"])):
        missing = []
        for kind in kinds:
            tags = sorted(by_kind.get(kind, ()))
            if not tags:
                missing.append(kind)
            for tag in tags:
                plan.append(tag)
                rationale.append(_annotate(tag, role, coverage_report))
        if missing:
            notes.append(f"{role} source kinds unavailable: {', '.join(missing)}")
    if scan_type == "clients" and response_stats:
        icmp = response_stats.get("icmp6")
        if icmp and icmp["offsets"]:
            first, last = icmp["offsets"][0], icmp["offsets"][-1]
            notes.append(
                f"measured icmp6 decay: {first['rate_pct']}% at {first['offset']}s down to "
                f"{last['rate_pct']}% at {last['offset']}s; keep probe delay near the first interval"
            )
    return Recommendation(scan_type, plan, rationale, notes)


def _annotate(tag: SourceTag, role: str, coverage_report: CoverageReport | None) -> str:
    base = f"{tag.label()} ({role})"
    if coverage_report is None or tag not in coverage_report.per_source:
        return base
    cov = coverage_report.per_source[tag]
    as_pct = fmt_pct(len(cov.as_set), coverage_report.as_denominator)
    pfx_pct = fmt_pct(len(cov.prefix_set), coverage_report.prefix_denominator)
    return (
        f"{base}: {cov.targets} targets, {len(cov.as_set)} ASes ({as_pct}%), "
        f"{len(cov.prefix_set)} prefixes ({pfx_pct}%)"
    )
