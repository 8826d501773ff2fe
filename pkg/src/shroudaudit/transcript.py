"""Append-only audit transcript: line-delimited JSON records.

One record per event (header, seed entry, draw, salt reveal, human
interpretation, evaluation).  Running P-values are stored both as decimal
floats for humans and as hex float strings so replay can be verified
bit-for-bit.  The transcript alone carries everything needed to recompute
the P-value trajectory; the published files additionally allow re-checking
every entry lookup.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .errors import ParseError

TRANSCRIPT_VERSION = 1


class TranscriptWriter:
    """Interface: append one record (a JSON-serializable dict) durably."""

    def append(self, record: dict) -> None:
        raise NotImplementedError


class FileTranscript(TranscriptWriter):
    """File-backed writer; each record is flushed and fsynced before the
    append returns, so a crash never loses an acknowledged event."""

    def __init__(self, path: str | Path, fsync: bool = True):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self.path, "a", encoding="utf-8")
        self._fsync = fsync

    def append(self, record: dict) -> None:
        self._handle.write(json.dumps(record, separators=(",", ":"), sort_keys=True) + "\n")
        self._handle.flush()
        if self._fsync:
            os.fsync(self._handle.fileno())

    def close(self) -> None:
        self._handle.close()


class MemoryTranscript(TranscriptWriter):
    def __init__(self):
        self.records: list[dict] = []

    def append(self, record: dict) -> None:
        self.records.append(json.loads(json.dumps(record)))


def read_transcript(path: str | Path) -> list[dict]:
    records = []
    text = Path(path).read_text("utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad transcript record: {exc}", path=str(path), line=lineno)
        if not isinstance(record, dict) or "type" not in record:
            raise ParseError("transcript records must be objects with a 'type'",
                             path=str(path), line=lineno)
        records.append(record)
    return records
