"""Source ingestion: flows, address lists, hostnames, traceroute hops.

Every source class is read into source-tagged Observation records; merge()
folds observation lists into the deduplicated per-address TargetSet that
the filter cascade and probe planner consume.
"""

from __future__ import annotations

import socket
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import FatalFormat, ResolverUnavailable

SOURCE_KINDS = (
    "PassiveFlow",
    "AlexaList",
    "ReverseDns",
    "DnsAny",
    "ZoneFile",
    "CaidaDnsNames",
    "Traceroute",
)

TRANSPORTS = ("tcp", "udp", "icmp6", "unknown")
FLOW_HEADER = "ts,src,dst,proto,port"

LOW64 = (1 << 64) - 1


@dataclass(frozen=True, order=True)
class SourceTag:
    kind: str
    name: str

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}")

    def label(self) -> str:
        return f"{self.kind}:{self.name}"


@dataclass(slots=True)
class Observation:
    address: int
    timestamp: int
    transport: str
    port: int | None
    source: SourceTag


@dataclass(slots=True)
class DropReport:
    rows: int = 0
    malformed: int = 0
    self_filtered: int = 0
    emitted: int = 0


@dataclass(slots=True)
class ListStats:
    lines: int = 0
    valid: int = 0
    malformed: int = 0
    comments: int = 0


@dataclass(frozen=True)
class HostnameRecord:
    name: str
    origin: SourceTag

    def __post_init__(self):
        if not self.name or len(self.name.encode()) > 253 or "." not in self.name.strip("."):
            raise ValueError(f"bad DNS name {self.name!r}")


class TargetEntry:
    __slots__ = ("first_seen", "last_seen", "port_protocols", "sources", "observation_count")

    def __init__(self, first_seen, last_seen, port_protocols, sources, observation_count):
        self.first_seen = first_seen
        self.last_seen = last_seen
        self.port_protocols = port_protocols
        self.sources = sources
        self.observation_count = observation_count

    def __eq__(self, other):
        return (
            isinstance(other, TargetEntry)
            and self.first_seen == other.first_seen
            and self.last_seen == other.last_seen
            and self.port_protocols == other.port_protocols
            and self.sources == other.sources
            and self.observation_count == other.observation_count
        )

    def __repr__(self):
        return (
            f"TargetEntry(first_seen={self.first_seen}, last_seen={self.last_seen}, "
            f"port_protocols={sorted(self.port_protocols, key=_pp_key)}, "
            f"sources={sorted(self.sources)}, observation_count={self.observation_count})"
        )


def _pp_key(pp):
    transport, port = pp
    return (transport, -1 if port is None else port)


class TargetSet:
    """Deduplicated per-address aggregate of observations."""

    def __init__(self, entries: dict[int, TargetEntry] | None = None):
        self.entries: dict[int, TargetEntry] = entries if entries is not None else {}
        self._packed: tuple[np.ndarray, np.ndarray, list[int]] | None = None

    def __len__(self):
        return len(self.entries)

    def __contains__(self, address: int) -> bool:
        return address in self.entries

    def __eq__(self, other):
        return isinstance(other, TargetSet) and self.entries == other.entries

    def add(self, obs: Observation) -> None:
        self._packed = None
        entry = self.entries.get(obs.address)
        if entry is None:
            self.entries[obs.address] = TargetEntry(
                obs.timestamp,
                obs.timestamp,
                {(obs.transport, obs.port)},
                {obs.source},
                1,
            )
            return
        if obs.timestamp < entry.first_seen:
            entry.first_seen = obs.timestamp
        if obs.timestamp > entry.last_seen:
            entry.last_seen = obs.timestamp
        entry.port_protocols.add((obs.transport, obs.port))
        entry.sources.add(obs.source)
        entry.observation_count += 1

    def total_observations(self) -> int:
        return sum(e.observation_count for e in self.entries.values())

    def sources(self) -> list[SourceTag]:
        tags = set()
        for e in self.entries.values():
            tags |= e.sources
        return sorted(tags)

    def packed(self) -> tuple[np.ndarray, np.ndarray, list[int]]:
        """Sorted address columns (hi, lo) plus the matching int list."""
        if self._packed is None:
            order = sorted(self.entries)
            hi = np.fromiter((a >> 64 for a in order), dtype=np.uint64, count=len(order))
            lo = np.fromiter((a & LOW64 for a in order), dtype=np.uint64, count=len(order))
            self._packed = (hi, lo, order)
        return self._packed

    def subset(self, keep_addresses) -> "TargetSet":
        return TargetSet({a: self.entries[a] for a in keep_addresses})


def merge(lists) -> TargetSet:
    """Fold observation lists into a TargetSet; input order does not matter."""
    ts = TargetSet()
    for obs_list in lists:
        for obs in obs_list:
            ts.add(obs)
    return ts


def _parse_v6(text: str) -> int | None:
    try:
        return int.from_bytes(socket.inet_pton(socket.AF_INET6, text), "big")
    except (OSError, UnicodeEncodeError):
        return None


def ingest_flow_records(stream, tag: SourceTag, self_prefixes=()) -> tuple[list[Observation], DropReport]:
    """Read flow CSV rows into per-endpoint observations.

    Both flow endpoints are emitted with the flow's (proto, port); endpoints
    inside a self prefix are dropped and counted. Malformed rows are counted
    and skipped; a missing or wrong header is fatal.
    """
    report = DropReport()
    out: list[Observation] = []
    header = next(iter(stream), None)
    if header is None or header.strip() != FLOW_HEADER:
        raise FatalFormat(f"flow input must start with header {FLOW_HEADER!r}")
    self_prefixes = list(self_prefixes)
    for line in stream:
        line = line.strip()
        if not line:
            continue
        report.rows += 1
        fields = line.split(",")
        if len(fields) != 5:
            report.malformed += 1
            continue
        ts_text, src_text, dst_text, proto, port_text = fields
        if proto not in ("tcp", "udp", "icmp6"):
            report.malformed += 1
            continue
        try:
            ts = int(ts_text)
        except ValueError:
            report.malformed += 1
            continue
        if proto == "icmp6":
            if port_text != "":
                report.malformed += 1
                continue
            port = None
        else:
            try:
                port = int(port_text)
            except ValueError:
                report.malformed += 1
                continue
            if not 0 <= port <= 65535:
                report.malformed += 1
                continue
        src = _parse_v6(src_text)
        dst = _parse_v6(dst_text)
        if src is None or dst is None:
            report.malformed += 1
            continue
        for endpoint in (src, dst):
            if any(endpoint in p for p in self_prefixes):
                report.self_filtered += 1
                continue
            out.append(Observation(endpoint, ts, proto, port, tag))
            report.emitted += 1
    return out, report


def ingest_address_list(stream, tag: SourceTag, timestamp: int) -> tuple[list[Observation], ListStats]:
    """One address per line; '#' comments and blanks allowed.

    Duplicates are preserved here; dedup happens in merge().
    """
    stats = ListStats()
    out: list[Observation] = []
    for line in stream:
        stats.lines += 1
        line = line.strip()
        if not line or line.startswith("#"):
            stats.comments += 1
            continue
        value = _parse_v6(line)
        if value is None:
            stats.malformed += 1
            continue
        stats.valid += 1
        out.append(Observation(value, timestamp, "unknown", None, tag))
    return out, stats


def ingest_traceroute_hops(
    stream, tag: SourceTag, known_targets: TargetSet, timestamp: int
) -> tuple[list[Observation], int, ListStats]:
    """Hop dump ingestion; new_count counts distinct hops not already known."""
    stats = ListStats()
    out: list[Observation] = []
    new_addrs: set[int] = set()
    for line in stream:
        stats.lines += 1
        line = line.strip()
        if not line or line.startswith("#"):
            stats.comments += 1
            continue
        value = _parse_v6(line)
        if value is None:
            stats.malformed += 1
            continue
        stats.valid += 1
        out.append(Observation(value, timestamp, "unknown", None, tag))
        if value not in known_targets:
            new_addrs.add(value)
    return out, len(new_addrs), stats


@dataclass(slots=True)
class ResolveStats:
    names: int = 0
    answered: int = 0
    no_answer: int = 0
    nxdomain: int = 0
    timeout: int = 0
    servfail: int = 0
    addresses: int = 0


class ResolveError(Exception):
    """Per-name resolution failure; category in {nxdomain, timeout, servfail}."""

    def __init__(self, category: str):
        self.category = category
        super().__init__(category)


class StubResolver:
    """Fixture-backed resolver: two-column `name whitespace address` lines."""

    def __init__(self, mapping: dict[str, list[int]]):
        self.mapping = mapping

    @classmethod
    def from_stream(cls, stream) -> "StubResolver":
        mapping: dict[str, list[int]] = {}
        for line in stream:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, _, addr_text = line.partition(" ")
            addr_text = addr_text.strip()
            value = _parse_v6(addr_text)
            if value is None:
                continue
            mapping.setdefault(name.strip().lower(), []).append(value)
        return cls(mapping)

    def resolve_aaaa(self, name: str) -> list[int]:
        answers = self.mapping.get(name.lower())
        if answers is None:
            raise ResolveError("nxdomain")
        return list(answers)


class WireResolver:
    """Minimal AAAA client over the DNS wire protocol (UDP).

    Talks to one configured recursive resolver; good enough for desk-scale
    hostname sources. Truncated responses are treated as servfail rather
    than retried over TCP.
    """

    def __init__(self, server: str, port: int = 53, timeout: float = 2.0):
        self.server = server
        self.port = port
        self.timeout = timeout
        self._next_id = 0x1234

    def _build_query(self, name: str, qid: int) -> bytes:
        header = qid.to_bytes(2, "big") + b"\x01\x00\x00\x01\x00\x00\x00\x00\x00\x00"
        question = b""
        for part in name.rstrip(".").split("."):
            raw = part.encode("idna") if not part.isascii() else part.encode()
            question += bytes((len(raw),)) + raw
        question += b"\x00\x00\x1c\x00\x01"  # QTYPE=AAAA, QCLASS=IN
        return header + question

    @staticmethod
    def _skip_name(buf: bytes, pos: int) -> int:
        while True:
            if pos >= len(buf):
                raise ResolveError("servfail")
            length = buf[pos]
            if length == 0:
                return pos + 1
            if length & 0xC0 == 0xC0:
                return pos + 2
            pos += 1 + length

    def resolve_aaaa(self, name: str) -> list[int]:
        qid = self._next_id = (self._next_id + 1) & 0xFFFF
        query = self._build_query(name, qid)
        family = socket.AF_INET6 if ":" in self.server else socket.AF_INET
        with socket.socket(family, socket.SOCK_DGRAM) as sock:
            sock.settimeout(self.timeout)
            try:
                sock.sendto(query, (self.server, self.port))
                data, _ = sock.recvfrom(4096)
            except (OSError, socket.timeout):
                raise ResolveError("timeout") from None
        if len(data) < 12 or data[:2] != query[:2]:
            raise ResolveError("servfail")
        rcode = data[3] & 0x0F
        if rcode == 3:
            raise ResolveError("nxdomain")
        if rcode != 0 or data[2] & 0x02:  # error or truncated
            raise ResolveError("servfail")
        qdcount = int.from_bytes(data[4:6], "big")
        ancount = int.from_bytes(data[6:8], "big")
        pos = 12
        for _ in range(qdcount):
            pos = self._skip_name(data, pos) + 4
        answers: list[int] = []
        for _ in range(ancount):
            pos = self._skip_name(data, pos)
            if pos + 10 > len(data):
                raise ResolveError("servfail")
            rtype = int.from_bytes(data[pos : pos + 2], "big")
            rdlen = int.from_bytes(data[pos + 8 : pos + 10], "big")
            rdata = data[pos + 10 : pos + 10 + rdlen]
            pos += 10 + rdlen
            if rtype == 28 and rdlen == 16:
                answers.append(int.from_bytes(rdata, "big"))
        return answers


def resolve_hostnames(
    records,
    resolver,
    timestamp: int,
    concurrency: int = 8,
    failure_threshold: int = 25,
) -> tuple[list[Observation], ResolveStats]:
    """Resolve AAAA for each record; deterministic output given a stub.

    Results are emitted in input order with per-name answers sorted, so the
    aggregate is identical for any concurrency level. Aborts with
    ResolverUnavailable once `failure_threshold` consecutive transport
    failures are seen.
    """
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    records = list(records)
    stats = ResolveStats(names=len(records))
    results: list[list[int] | ResolveError] = [ResolveError("timeout")] * len(records)

    def work(i_rec):
        i, rec = i_rec
        try:
            return i, sorted(resolver.resolve_aaaa(rec.name))
        except ResolveError as err:
            return i, err

    if concurrency == 1:
        outcomes = map(work, enumerate(records))
    else:
        pool = ThreadPoolExecutor(max_workers=concurrency)
        outcomes = pool.map(work, enumerate(records))
    consecutive_failures = 0
    for i, outcome in outcomes:
        results[i] = outcome
        if isinstance(outcome, ResolveError) and outcome.category == "timeout":
            consecutive_failures += 1
            if consecutive_failures >= failure_threshold:
                if concurrency > 1:
                    pool.shutdown(wait=False, cancel_futures=True)
                raise ResolverUnavailable(
                    f"{consecutive_failures} consecutive resolver failures"
                )
        else:
            consecutive_failures = 0
    if concurrency > 1:
        pool.shutdown()

    out: list[Observation] = []
    for rec, outcome in zip(records, results):
        if isinstance(outcome, ResolveError):
            if outcome.category == "nxdomain":
                stats.nxdomain += 1
            elif outcome.category == "timeout":
                stats.timeout += 1
            else:
                stats.servfail += 1
            continue
        if outcome:
            stats.answered += 1
        else:
            stats.no_answer += 1
        for value in outcome:
            stats.addresses += 1
            out.append(Observation(value, timestamp, "unknown", None, rec.origin))
    return out, stats


def read_hostname_list(stream, origin: SourceTag) -> tuple[list[HostnameRecord], ListStats]:
    """One DNS name per line; bad names are counted and skipped."""
    stats = ListStats()
    out: list[HostnameRecord] = []
    for line in stream:
        stats.lines += 1
        line = line.strip()
        if not line or line.startswith("#"):
            stats.comments += 1
            continue
        try:
            out.append(HostnameRecord(line.lower(), origin))
        except ValueError:
            stats.malformed += 1
            continue
        stats.valid += 1
    return out, stats


def systematic_sample(items, rate: int):
    """1-in-N systematic sampler, for fixture generation only."""
    if rate < 1:
        raise ValueError("rate must be >= 1")
    for i, item in enumerate(items):
        if i % rate == 0:
            yield item
