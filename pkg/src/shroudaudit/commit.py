"""Commitment scheme that shrouds ballot identifiers.

A shrouded identifier is SHA-256 over the UTF-8 ballot id concatenated with
a 128-bit salt.  Both inputs have fixed, election-wide lengths, which is
what makes the plain-hash construction binding; the scheme parameters are
disclosed in the election manifest so observers can recompute any digest.
"""

from __future__ import annotations

import hashlib
import re
import secrets
from dataclasses import dataclass
from typing import Callable

from .errors import MalformedInputError

SALT_BYTES = 16
DIGEST_HEX_LENGTH = 64
HASH_STANDARD = "SHA-256"
COMMITMENT_INPUT = "utf8(ballot_id)||salt"

_BALLOT_ID_RE = re.compile(r"[0-9]+\Z")
_DIGEST_RE = re.compile(r"[0-9a-f]{64}\Z")


def is_digest(value: str) -> bool:
    return bool(_DIGEST_RE.match(value))


def _check_ballot_id(ballot_id: str, id_length: int | None) -> None:
    if not _BALLOT_ID_RE.match(ballot_id):
        raise MalformedInputError(f"ballot id {ballot_id!r} is not a decimal-digit string")
    if id_length is not None and len(ballot_id) != id_length:
        raise MalformedInputError(
            f"ballot id {ballot_id!r} has length {len(ballot_id)}, expected {id_length}"
        )


def _check_salt(salt: bytes) -> None:
    if not isinstance(salt, bytes) or len(salt) != SALT_BYTES:
        raise MalformedInputError(f"salt must be exactly {SALT_BYTES} bytes")


def commit_to(ballot_id: str, salt: bytes, id_length: int | None = None) -> str:
    """Commitment digest for a ballot id under a salt, as 64 lowercase hex chars."""
    _check_ballot_id(ballot_id, id_length)
    _check_salt(salt)
    return hashlib.sha256(ballot_id.encode("utf-8") + salt).hexdigest()


def open_commitment(digest: str, ballot_id: str, salt: bytes, id_length: int | None = None) -> bool:
    """True iff the revealed (ballot id, salt) pair reproduces the digest."""
    return commit_to(ballot_id, salt, id_length) == digest


def fresh_salt(rand_bytes: Callable[[int], bytes] = secrets.token_bytes) -> bytes:
    """Draw a fresh 128-bit salt from the given randomness source.

    The default source is cryptographic.  Simulation and golden-file tests
    inject a seeded source; salt uniqueness is tracked by the publisher.
    """
    salt = rand_bytes(SALT_BYTES)
    if not isinstance(salt, bytes) or len(salt) != SALT_BYTES:
        raise MalformedInputError("randomness source returned a malformed salt")
    return salt


@dataclass(frozen=True)
class CommitmentScheme:
    """The disclosed commitment parameters for one election."""

    id_length: int
    salt_bytes: int = SALT_BYTES
    hash_standard: str = HASH_STANDARD

    def __post_init__(self):
        if self.id_length < 1:
            raise MalformedInputError("identifier length must be positive")
        if self.salt_bytes != SALT_BYTES:
            raise MalformedInputError(f"salt length is fixed at {SALT_BYTES} bytes")
        if self.hash_standard != HASH_STANDARD:
            raise MalformedInputError(f"hash standard is fixed at {HASH_STANDARD}")

    def commit(self, ballot_id: str, salt: bytes) -> str:
        return commit_to(ballot_id, salt, self.id_length)

    def open(self, digest: str, ballot_id: str, salt: bytes) -> bool:
        return open_commitment(digest, ballot_id, salt, self.id_length)

    def describe(self) -> str:
        return f"{self.hash_standard.lower().replace('-', '')}({COMMITMENT_INPUT})"
