"""Interval probe planning and execution.

Targets are probed with ICMPv6 echo plus in-protocol scans on every
(transport, port) they were observed on, at offsets relative to each
target's first sighting. The simulated backend answers from a responder
model and is a pure function of (plan, model, seed); the raw backend
(rawsock) shares the same probe interface.
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field

from .addr import canonical_text, parse_address
from .errors import EmptyIntervals
from .ingest import TargetSet

# Interval profiles, in seconds. The uplink profile spans 1 minute to 7
# days in 7 steps; the IXP profile keeps 4 slots to respect the tighter
# bandwidth budget at an exchange point.
UPLINK_INTERVALS = (60, 600, 3600, 43200, 86400, 259200, 604800)
IXP_INTERVALS = (60, 3600, 86400, 604800)

REPLY_KINDS = ("echo_reply", "syn_ack", "rst", "udp_payload", "icmp_error", "none")

# rst means host-alive-port-closed and icmp_error is a middlebox artifact:
# neither counts as responsive.
RESPONSIVE_KINDS = frozenset({"echo_reply", "syn_ack", "udp_payload"})

DEFAULT_UDP_PAYLOADS: dict[int, bytes] = {
    # QUIC long header with an unknown version: triggers version negotiation.
    443: b"\xc0\x00\x00\x00\x01\x08" + b"\x00" * 20,
    # DNS query for the root (NS, IN).
    53: b"\x12\x34\x01\x00\x00\x01\x00\x00\x00\x00\x00\x00\x00\x00\x02\x00\x01",
    # BitTorrent DHT ping (KRPC bencoding).
    49001: b"d1:ad2:id20:abcdefghij0123456789e1:q4:ping1:t2:aa1:y1:qe",
    51413: b"d1:ad2:id20:abcdefghij0123456789e1:q4:ping1:t2:aa1:y1:qe",
}


@dataclass(frozen=True)
class ScanType:
    kind: str  # "icmp6" | "tcp" | "udp"
    port: int | None = None
    payload: bytes = b""

    def __post_init__(self):
        if self.kind == "icmp6":
            if self.port is not None or self.payload:
                raise ValueError("icmp6 scans carry neither port nor payload")
        elif self.kind in ("tcp", "udp"):
            if self.port is None or not 0 <= self.port <= 65535:
                raise ValueError(f"{self.kind} scan needs a port in [0, 65535]")
        else:
            raise ValueError(f"unknown scan kind {self.kind!r}")

    @property
    def label(self) -> str:
        return self.kind if self.kind == "icmp6" else f"{self.kind}{self.port}"


ICMP6_SCAN = ScanType("icmp6")


def parse_scan_label(label: str) -> ScanType:
    """Parse "icmp6" / "tcp80" / "udp443" style labels (no payload)."""
    if label == "icmp6":
        return ICMP6_SCAN
    for kind in ("tcp", "udp"):
        if label.startswith(kind):
            return ScanType(kind, int(label[len(kind) :]))
    raise ValueError(f"bad scan label {label!r}")


@dataclass(frozen=True)
class ProbeTask:
    target: int
    scan: ScanType
    offset: int


@dataclass
class ProbePlan:
    tasks: list[ProbeTask]
    first_seen: dict[int, int]
    intervals: tuple[int, ...]
    rate_limit: float = 10_000.0
    jitter_frac: float = 0.01

    def jitter_tolerance(self, offset: int) -> float:
        return max(1.0, self.jitter_frac * offset)

    def scheduled_at(self, task: ProbeTask) -> int:
        return self.first_seen[task.target] + task.offset

    def planned_targets(self) -> dict[str, int]:
        seen: dict[str, set[int]] = {}
        for task in self.tasks:
            seen.setdefault(task.scan.label, set()).add(task.target)
        return {label: len(targets) for label, targets in seen.items()}


def build_plan(
    targets: TargetSet,
    intervals,
    udp_payloads: dict[int, bytes] | None = None,
    rate_limit: float = 10_000.0,
    jitter_frac: float = 0.01,
) -> ProbePlan:
    """One icmp6 task per interval per target, plus in-protocol tasks for
    every observed (transport, port); offsets are relative to first_seen."""
    intervals = tuple(int(i) for i in intervals)
    if not intervals:
        raise EmptyIntervals("at least one probe interval is required")
    if any(b <= a for a, b in zip(intervals, intervals[1:])):
        raise ValueError("intervals must be strictly increasing")
    payloads = DEFAULT_UDP_PAYLOADS if udp_payloads is None else udp_payloads

    tasks: list[ProbeTask] = []
    first_seen: dict[int, int] = {}
    for address in sorted(targets.entries):
        entry = targets.entries[address]
        first_seen[address] = entry.first_seen
        scans = [ICMP6_SCAN]
        for transport, port in sorted(entry.port_protocols, key=_pp_sort_key):
            if port is None or transport not in ("tcp", "udp"):
                continue
            if transport == "udp":
                scans.append(ScanType("udp", port, payloads.get(port, b"")))
            else:
                scans.append(ScanType("tcp", port))
        for scan in scans:
            for offset in intervals:
                tasks.append(ProbeTask(address, scan, offset))
    tasks.sort(key=lambda t: (first_seen[t.target] + t.offset, t.target, t.scan.label))
    return ProbePlan(tasks, first_seen, intervals, rate_limit, jitter_frac)


def _pp_sort_key(pp):
    transport, port = pp
    return (transport, -1 if port is None else port)


@dataclass
class Responder:
    birth: int
    lifetime: float | None  # None = infinite
    responds_to: frozenset[str]
    drops_icmp: bool = False
    rst_to: frozenset[str] = frozenset()

    def alive(self, t: float) -> bool:
        if t < self.birth:
            return False
        return self.lifetime is None or t <= self.birth + self.lifetime


def load_model(stream) -> dict[int, Responder]:
    model = {}
    for row in json.load(stream):
        model[parse_address(row["address"])] = Responder(
            birth=int(row["birth"]),
            lifetime=None if row["lifetime_seconds"] is None else float(row["lifetime_seconds"]),
            responds_to=frozenset(row["responds_to"]),
            drops_icmp=bool(row.get("drops_icmp", False)),
            rst_to=frozenset(row.get("rst_to", ())),
        )
    return model


def save_model(stream, model: dict[int, Responder]) -> None:
    rows = []
    for address in sorted(model):
        r = model[address]
        row = {
            "address": canonical_text(address),
            "birth": r.birth,
            "lifetime_seconds": r.lifetime,
            "responds_to": sorted(r.responds_to),
            "drops_icmp": r.drops_icmp,
        }
        if r.rst_to:
            row["rst_to"] = sorted(r.rst_to)
        rows.append(row)
    json.dump(rows, stream, indent=1, sort_keys=True)
    stream.write("\n")


class SimulatedNetwork:
    """Deterministic prober: answers come from the responder model."""

    realtime = False

    def __init__(self, model: dict[int, Responder], seed: int = 0, loss_rate: float = 0.0):
        self.model = model
        self.loss_rate = loss_rate
        self._rng = random.Random(seed)

    def probe(self, target: int, scan: ScanType, at: float) -> str:
        if self.loss_rate and self._rng.random() < self.loss_rate:
            return "none"
        responder = self.model.get(target)
        if responder is None or not responder.alive(at):
            return "none"
        label = scan.label
        if scan.kind == "icmp6":
            if responder.drops_icmp or label not in responder.responds_to:
                return "none"
            return "echo_reply"
        if label in responder.responds_to:
            return "syn_ack" if scan.kind == "tcp" else "udp_payload"
        if scan.kind == "tcp" and label in responder.rst_to:
            return "rst"
        return "none"


class SlidingWindowLimiter:
    """At most floor(rate) sends inside any 1-second window."""

    def __init__(self, rate: float):
        if rate < 1:
            raise ValueError("rate_limit must be >= 1 packet/second")
        self.capacity = int(rate)
        self._recent: deque[float] = deque(maxlen=self.capacity)

    def reserve(self, wanted: float) -> float:
        if len(self._recent) == self.capacity:
            earliest = self._recent[0] + 1.0
            if wanted < earliest:
                wanted = earliest
        self._recent.append(wanted)
        return wanted


@dataclass(slots=True)
class Cell:
    sent_at: float
    reply_kind: str
    responsive: bool


class ResponseMatrix:
    def __init__(self, intervals, planned: dict[str, int], rate_limit: float):
        self.intervals = tuple(intervals)
        self.planned = dict(planned)
        self.rate_limit = rate_limit
        self.cells: dict[tuple[int, str, int], Cell] = {}
        self.policy_skips: list[tuple[int, str, int]] = []
        self.late_sends: int = 0

    def __eq__(self, other):
        return (
            isinstance(other, ResponseMatrix)
            and self.intervals == other.intervals
            and self.planned == other.planned
            and self.cells == other.cells
            and self.policy_skips == other.policy_skips
        )

    @property
    def max_offset(self) -> int:
        return max(self.intervals)

    def targets(self) -> set[int]:
        return {key[0] for key in self.cells}

    def responsive_at(self, target: int, offset: int) -> bool:
        """True if any scan type got a reply for this target at this offset."""
        for (t, _, o), cell in self.cells.items():
            if t == target and o == offset and cell.responsive:
                return True
        return False


def execute(plan: ProbePlan, prober, blacklist=None, clock=None) -> ResponseMatrix:
    """Dispatch every task in schedule order under the rate limit.

    Blacklisted targets are re-checked per task and skipped as policy_skips.
    For the simulated backend the timeline is virtual (time comes from the
    plan); the raw backend paces itself against `clock` / wall time.
    """
    matrix = ResponseMatrix(plan.intervals, plan.planned_targets(), plan.rate_limit)
    limiter = SlidingWindowLimiter(plan.rate_limit)
    realtime = getattr(prober, "realtime", False)
    for task in plan.tasks:
        key = (task.target, task.scan.label, task.offset)
        if blacklist is not None and task.target in blacklist:
            matrix.policy_skips.append(key)
            continue
        scheduled = plan.scheduled_at(task)
        sent_at = limiter.reserve(float(scheduled))
        if sent_at > scheduled + plan.jitter_tolerance(task.offset):
            matrix.late_sends += 1
        if realtime and clock is not None:
            clock.wait_until(sent_at)
        reply = prober.probe(task.target, task.scan, sent_at)
        matrix.cells[key] = Cell(sent_at, reply, reply in RESPONSIVE_KINDS)
    return matrix


def response_table(matrix: ResponseMatrix) -> dict[str, dict]:
    """Per (scan label, offset) responsive counts: the response-rate table."""
    counts: dict[str, dict[int, int]] = {
        label: {offset: 0 for offset in matrix.intervals} for label in matrix.planned
    }
    for (_, label, offset), cell in matrix.cells.items():
        if cell.responsive:
            counts[label][offset] += 1
    table = {}
    for label in sorted(matrix.planned):
        n = matrix.planned[label]
        table[label] = {
            "targets": n,
            "offsets": [
                {
                    "offset": offset,
                    "responsive": counts[label][offset],
                    "rate_pct": fmt_pct(counts[label][offset], n),
                }
                for offset in matrix.intervals
            ],
        }
    return table


def icmp_vs_inprotocol(matrix: ResponseMatrix) -> dict[str, dict]:
    """For each in-protocol scan: responders and the share never answering
    ICMPv6 echo at any offset."""
    responders: dict[str, set[int]] = {}
    icmp_ok: set[int] = set()
    for (target, label, _), cell in matrix.cells.items():
        if not cell.responsive:
            continue
        if label == "icmp6":
            icmp_ok.add(target)
        else:
            responders.setdefault(label, set()).add(target)
    out = {}
    for label in sorted(responders):
        replied = responders[label]
        unresponsive = {t for t in replied if t not in icmp_ok}
        out[label] = {
            "in_protocol_responders": len(replied),
            "icmp_unresponsive": len(unresponsive),
            "pct": fmt_pct(len(unresponsive), len(replied)),
        }
    return out


def fmt_pct(part: int, whole: int) -> str:
    """Percentage with two decimals, e.g. 43.32; empty denominator -> n/a."""
    if whole == 0:
        return "n/a"
    return f"{100.0 * part / whole:.2f}"
