"""Exception types shared across the pipeline."""

from __future__ import annotations


class Hitlist6Error(Exception):
    """Base class for all errors raised by this package."""


class MalformedAddress(Hitlist6Error):
    """Input text is not a valid IPv6 address.

    `offset` is the byte offset of the first invalid character (for
    truncated input it points one past the end).
    """

    def __init__(self, text: str, offset: int):
        self.text = text
        self.offset = offset
        super().__init__(f"malformed IPv6 address {text!r} (offset {offset})")


class InvalidThreshold(Hitlist6Error):
    pass


class MalformedCidr(Hitlist6Error):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class MalformedRow(Hitlist6Error):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class FatalFormat(Hitlist6Error):
    pass


class ResolverUnavailable(Hitlist6Error):
    pass


class EmptyIntervals(Hitlist6Error):
    pass


class InsufficientPrivilege(Hitlist6Error):
    pass


class AuthorizationRequired(Hitlist6Error):
    """Raw prober refused to start: safety acknowledgments missing."""


class MissingRoutingTable(Hitlist6Error):
    pass


class WindowExceedsMatrix(Hitlist6Error):
    pass


class UnknownScanType(Hitlist6Error):
    pass


class ConfigError(Hitlist6Error):
    pass
