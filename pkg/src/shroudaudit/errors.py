"""Exception hierarchy shared across the toolkit.

Data errors (malformed input, parse failures) are distinct from protocol
violations (out-of-order audit events) so the CLI and service can map them
to different exit codes / HTTP statuses.
"""

from __future__ import annotations


class AuditToolError(Exception):
    """Base class for all toolkit errors."""


class MalformedInputError(AuditToolError):
    """A value violates a structural constraint (length, charset, range)."""


class NoUniqueOutcomeError(AuditToolError):
    """A contest has no unique winner set (tie or nonpositive margin)."""


class ConfigurationError(AuditToolError):
    """Audit or scenario parameters outside their permitted ranges."""


class ParseError(AuditToolError):
    """A published file deviates structurally from its schema."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix += path
        if line is not None:
            prefix += f":{line}"
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ProtocolViolationError(AuditToolError):
    """An audit event arrived out of order or after a terminal state."""


class NotFoundError(AuditToolError):
    """A referenced record (ballot id, session) does not exist."""
