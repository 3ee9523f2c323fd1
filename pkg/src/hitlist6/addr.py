"""IPv6 address parsing, canonical text, and interface-identifier math.

Addresses are plain 128-bit ints throughout the package; the interface
identifier (IID) is the low 64 bits. MAC addresses are 6-byte `bytes`.
Everything here is a pure function on immutable values.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass

from .errors import InvalidThreshold, MalformedAddress

MAX128 = (1 << 128) - 1
LOW64 = (1 << 64) - 1

# Universal/local bit: bit 6 of the IID counting from the most significant.
UL_BIT = 1 << 57

# Default classifier parameters. The "low" cutoff approximates the
# manually-configured-address category (value below 2^16); the privacy band
# brackets the Hamming weight of a 63-bit random IID (mean 31.5, variance
# 15.75). Both are configurable because neither has a standardized cutoff.
DEFAULT_LOW_THRESHOLD = 16
DEFAULT_PRIVACY_BAND = (20, 44)

IID_EUI64 = "eui64"
IID_LOW = "low"
IID_PRIVACY = "privacy_random"
IID_OTHER = "other"

_HEX = set("0123456789abcdefABCDEF")


def parse_address(text: str) -> int:
    """Parse any valid IPv6 textual form (full, compressed, or mixed).

    Strict: no zone identifiers, no surrounding whitespace, no trailing
    garbage. Raises MalformedAddress carrying the offset of the first
    invalid character.
    """
    try:
        packed = socket.inet_pton(socket.AF_INET6, text)
    except (OSError, UnicodeEncodeError):
        raise MalformedAddress(text, _invalid_offset(text)) from None
    return int.from_bytes(packed, "big")


def _invalid_offset(text: str) -> int:
    """Best-effort position of the first character that breaks the address."""
    if not text:
        return 0
    for i, ch in enumerate(text):
        if ch not in _HEX and ch not in ":.":
            return i
    # All characters are from the address alphabet; find the structural break.
    groups = 0
    group_len = 0
    seen_compress = False
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == ":":
            if i + 1 < n and text[i + 1] == ":":
                if seen_compress:
                    return i
                seen_compress = True
                i += 2
                groups += 1 if group_len else 0
                group_len = 0
                continue
            groups += 1 if group_len else 0
            group_len = 0
            i += 1
            continue
        if ch == ".":
            # Embedded IPv4 part; leave detailed checking to inet_pton and
            # point at the dot region if the overall parse failed.
            return i
        group_len += 1
        if group_len > 4:
            return i
        i += 1
    if group_len:
        groups += 1
    if groups > 8 or (groups == 8 and seen_compress):
        # One group too many: blame the colon that opened it.
        return text.rfind(":")
    # Too few groups / dangling colon: truncated input.
    return n


def canonical_text(value: int) -> str:
    """Shortest-form lowercase text: leftmost longest zero run compressed.

    Runs of a single zero group are written out (so the form is unique and
    byte-stable); parse_address(canonical_text(v)) == v for all v.
    """
    if not 0 <= value <= MAX128:
        raise ValueError("address out of 128-bit range")
    groups = [(value >> shift) & 0xFFFF for shift in range(112, -1, -16)]
    best_start = -1
    best_len = 0
    run_start = -1
    run_len = 0
    for i, g in enumerate(groups):
        if g == 0:
            if run_start < 0:
                run_start = i
            run_len += 1
            if run_len > best_len:
                best_start, best_len = run_start, run_len
        else:
            run_start = -1
            run_len = 0
    if best_len < 2:
        return ":".join(f"{g:x}" for g in groups)
    head = ":".join(f"{g:x}" for g in groups[:best_start])
    tail = ":".join(f"{g:x}" for g in groups[best_start + best_len :])
    return f"{head}::{tail}"


@dataclass(frozen=True, order=True)
class Prefix:
    """A CIDR prefix: normalized 128-bit base plus length in [0, 128]."""

    value: int
    length: int

    def __post_init__(self):
        if not 0 <= self.length <= 128:
            raise ValueError(f"prefix length {self.length} out of range")
        if self.value & ~self.mask() & MAX128:
            raise ValueError("prefix base has bits set below the prefix length")

    @classmethod
    def make(cls, value: int, length: int) -> "Prefix":
        """Build a prefix, masking off bits below the length."""
        if not 0 <= length <= 128:
            raise ValueError(f"prefix length {length} out of range")
        mask = MAX128 ^ ((1 << (128 - length)) - 1)
        return cls(value & mask, length)

    def mask(self) -> int:
        return MAX128 ^ ((1 << (128 - self.length)) - 1)

    def __contains__(self, address: int) -> bool:
        return (address & self.mask()) == self.value

    def __str__(self) -> str:
        return f"{canonical_text(self.value)}/{self.length}"


def parse_prefix(text: str) -> Prefix:
    """Parse an `addr/len` CIDR string; base need not be pre-normalized."""
    base, sep, length_text = text.partition("/")
    if not sep:
        raise ValueError(f"missing /length in {text!r}")
    value = parse_address(base)
    try:
        length = int(length_text)
    except ValueError:
        raise ValueError(f"bad prefix length in {text!r}") from None
    if not 0 <= length <= 128:
        raise ValueError(f"prefix length {length} out of range")
    return Prefix.make(value, length)


def split(address: int) -> tuple[Prefix, int]:
    """Split into the covering /64 prefix and the 64-bit IID."""
    return Prefix(address & ~LOW64 & MAX128, 64), address & LOW64


def join(prefix64: Prefix, iid: int) -> int:
    """Inverse of split for /64 prefixes."""
    return prefix64.value | (iid & LOW64)


def parse_mac(text: str) -> bytes:
    """Parse colon- or dash-separated MAC-48 text into 6 bytes."""
    parts = text.replace("-", ":").split(":")
    if len(parts) != 6:
        raise ValueError(f"{text!r} is not a MAC-48 address")
    try:
        octets = bytes(int(p, 16) for p in parts)
    except ValueError:
        raise ValueError(f"{text!r} is not a MAC-48 address") from None
    return octets


def mac_text(mac: bytes) -> str:
    return ":".join(f"{b:02x}" for b in mac)


def eui64_encode(mac: bytes) -> int:
    """Modified EUI-64: flip the universal/local bit, insert ff:fe."""
    if len(mac) != 6:
        raise ValueError("MAC-48 must be exactly 6 bytes")
    b = bytes((mac[0] ^ 0x02, mac[1], mac[2], 0xFF, 0xFE, mac[3], mac[4], mac[5]))
    return int.from_bytes(b, "big")


def eui64_decode(iid: int) -> bytes | None:
    """Recover the MAC if the IID carries the ff:fe marker, else None."""
    if not 0 <= iid <= LOW64:
        raise ValueError("IID out of 64-bit range")
    b = iid.to_bytes(8, "big")
    if b[3] != 0xFF or b[4] != 0xFE:
        return None
    return bytes((b[0] ^ 0x02, b[1], b[2], b[5], b[6], b[7]))


def hamming_weight(iid: int) -> int:
    if not 0 <= iid <= LOW64:
        raise ValueError("IID out of 64-bit range")
    return iid.bit_count()


@dataclass(frozen=True)
class IIDClass:
    variant: str
    mac: bytes | None = None


def classify_iid(
    iid: int,
    low_threshold: int = DEFAULT_LOW_THRESHOLD,
    privacy_band: tuple[int, int] = DEFAULT_PRIVACY_BAND,
) -> IIDClass:
    """Classify one IID; precedence eui64 > low > privacy_random > other.

    A random IID carries the ff:fe marker with probability 2^-16, so a tiny
    share of privacy-extension addresses is misclassified as EUI-64; the
    classifier accepts that bias to stay stateless.
    """
    if low_threshold < 0 or low_threshold > 64:
        raise InvalidThreshold(f"low_threshold {low_threshold} outside [0, 64]")
    mac = eui64_decode(iid)
    if mac is not None:
        return IIDClass(IID_EUI64, mac)
    if low_threshold >= 64 or iid < (1 << low_threshold):
        return IIDClass(IID_LOW)
    if not iid & UL_BIT and privacy_band[0] <= iid.bit_count() <= privacy_band[1]:
        return IIDClass(IID_PRIVACY)
    return IIDClass(IID_OTHER)
