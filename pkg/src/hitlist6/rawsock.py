"""Optional raw-packet prober: ICMPv6 echo, TCP SYN, UDP datagrams.

Privilege-gated and off by default; CI and the acceptance suite run on the
simulated backend only. Starting this backend requires root, an explicit
authorization acknowledgment, and a blacklist, in that order of checks.
Packet builders are pure functions so they stay testable without sockets.
"""

from __future__ import annotations

import os
import socket
import struct
import time

from .errors import AuthorizationRequired, InsufficientPrivilege
from .probe import ScanType

ICMP6_ECHO_REQUEST = 128


def upper_layer_checksum(src: int, dst: int, next_header: int, payload: bytes) -> int:
    """IPv6 upper-layer checksum over the pseudo-header plus payload."""
    pseudo = (
        src.to_bytes(16, "big")
        + dst.to_bytes(16, "big")
        + struct.pack("!I", len(payload))
        + b"\x00\x00\x00"
        + bytes((next_header,))
    )
    data = pseudo + payload
    if len(data) % 2:
        data += b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def icmp6_echo_packet(src: int, dst: int, ident: int, seq: int, payload: bytes = b"") -> bytes:
    """ICMPv6 Echo Request (type 128, code 0) with a correlation identifier."""
    head = struct.pack("!BBHHH", ICMP6_ECHO_REQUEST, 0, 0, ident & 0xFFFF, seq & 0xFFFF)
    checksum = upper_layer_checksum(src, dst, socket.IPPROTO_ICMPV6, head + payload)
    return struct.pack("!BBHHH", ICMP6_ECHO_REQUEST, 0, checksum, ident & 0xFFFF, seq & 0xFFFF) + payload


def task_sequence_number(target: int, port: int, salt: int) -> int:
    """Per-task state encoded in the TCP sequence number, for correlating
    SYN-ACKs without keeping connection state."""
    mix = (target ^ (target >> 64) ^ (port * 0x9E3779B1) ^ salt) & 0xFFFFFFFF
    return mix or 1


def tcp_syn_segment(src: int, dst: int, sport: int, dport: int, seq: int) -> bytes:
    head = struct.pack(
        "!HHIIBBHHH",
        sport,
        dport,
        seq & 0xFFFFFFFF,
        0,  # ack
        5 << 4,  # data offset, no options
        0x02,  # SYN
        65535,
        0,
        0,
    )
    checksum = upper_layer_checksum(src, dst, socket.IPPROTO_TCP, head)
    return head[:16] + struct.pack("!H", checksum) + head[18:]


def udp_datagram(src: int, dst: int, sport: int, dport: int, payload: bytes) -> bytes:
    length = 8 + len(payload)
    head = struct.pack("!HHHH", sport, dport, length, 0)
    checksum = upper_layer_checksum(src, dst, socket.IPPROTO_UDP, head + payload)
    if checksum == 0:
        checksum = 0xFFFF  # UDP transmits all-ones for a zero checksum
    return struct.pack("!HHHH", sport, dport, length, checksum) + payload


def match_tcp_reply(segment: bytes, sport: int, dport: int, sent_seq: int) -> str | None:
    """Classify a received TCP segment against the probe we sent.

    Expects ports mirrored and the peer's ack to cover our SYN
    (ack == sent_seq + 1); returns "syn_ack", "rst", or None.
    """
    if len(segment) < 20:
        return None
    r_sport, r_dport, _, ack, _, flags = struct.unpack("!HHIIBB", segment[:14])
    if r_sport != dport or r_dport != sport:
        return None
    if ack != ((sent_seq + 1) & 0xFFFFFFFF):
        return None
    if flags & 0x12 == 0x12:  # SYN+ACK
        return "syn_ack"
    if flags & 0x04:  # RST
        return "rst"
    return None


class WallClock:
    def now(self) -> float:
        return time.monotonic()

    def wait_until(self, t: float) -> None:
        delay = t - self.now()
        if delay > 0:
            time.sleep(delay)


class RawProber:
    """Send real probes from raw sockets; correlate replies synchronously.

    Desk-scale by design (one in-flight probe at a time). Refuses to start
    without root privileges, the authorization acknowledgment, and a
    blacklist to honor.
    """

    realtime = True

    def __init__(
        self,
        source_address: str,
        authorized: bool,
        blacklist,
        timeout: float = 1.0,
        clock: WallClock | None = None,
        _geteuid=os.geteuid,
    ):
        if not authorized:
            raise AuthorizationRequired(
                "raw probing requires the explicit --i-am-authorized acknowledgment"
            )
        if blacklist is None:
            raise AuthorizationRequired("raw probing requires a blacklist file")
        if _geteuid() != 0:
            raise InsufficientPrivilege("raw sockets require root")
        self.source = source_address
        self.blacklist = blacklist
        self.timeout = timeout
        self.clock = clock or WallClock()
        self._salt = int.from_bytes(os.urandom(4), "big")
        try:
            self._icmp_sock = socket.socket(
                socket.AF_INET6, socket.SOCK_RAW, socket.IPPROTO_ICMPV6
            )
        except OSError as err:
            raise InsufficientPrivilege(f"cannot open raw ICMPv6 socket: {err}") from None
        self._icmp_sock.settimeout(timeout)

    def close(self) -> None:
        self._icmp_sock.close()

    def probe(self, target: int, scan: ScanType, at: float) -> str:
        from .addr import canonical_text, parse_address

        if target in self.blacklist:
            return "none"
        dst_text = canonical_text(target)
        if scan.kind == "icmp6":
            ident = (target ^ self._salt) & 0xFFFF
            packet = icmp6_echo_packet(parse_address(self.source), target, ident, 1)
            try:
                self._icmp_sock.sendto(packet, (dst_text, 0))
                deadline = self.clock.now() + self.timeout
                while self.clock.now() < deadline:
                    data, peer = self._icmp_sock.recvfrom(2048)
                    if peer[0].split("%")[0] == dst_text and len(data) >= 8 and data[0] == 129:
                        if struct.unpack("!H", data[4:6])[0] == ident:
                            return "echo_reply"
                return "none"
            except (OSError, socket.timeout):
                return "none"
        if scan.kind == "tcp":
            return self._tcp_syn_probe(parse_address(self.source), target, dst_text, scan.port)
        # UDP replies land on the sending socket's port, so a plain datagram
        # socket both emits the configured payload and receives the answer.
        try:
            with socket.socket(socket.AF_INET6, socket.SOCK_DGRAM) as sock:
                sock.settimeout(self.timeout)
                sock.sendto(scan.payload, (dst_text, scan.port))
                sock.recvfrom(2048)
                return "udp_payload"
        except ConnectionRefusedError:
            return "icmp_error"  # port unreachable surfaced by the stack
        except (OSError, socket.timeout):
            return "none"

    def _tcp_syn_probe(self, src: int, target: int, dst_text: str, dport: int) -> str:
        sport = 40000 + ((target ^ self._salt) & 0x3FFF)
        seq = task_sequence_number(target, dport, self._salt)
        segment = tcp_syn_segment(src, target, sport, dport, seq)
        try:
            with socket.socket(socket.AF_INET6, socket.SOCK_RAW, socket.IPPROTO_TCP) as sock:
                sock.settimeout(self.timeout)
                sock.sendto(segment, (dst_text, 0))
                deadline = self.clock.now() + self.timeout
                while self.clock.now() < deadline:
                    data, peer = sock.recvfrom(2048)
                    if peer[0].split("%")[0] != dst_text:
                        continue
                    verdict = match_tcp_reply(data, sport, dport, seq)
                    if verdict is not None:
                        return verdict
                return "none"
        except (OSError, socket.timeout):
            return "none"
