"""Election-official publication pipeline and the file formats it emits.

Whole-ballot vote records are split into per-contest files whose ballot
identifiers are shrouded by commitments; the ballot style file lists each
ballot's contests without selections; the secret lookup file maps each
digest back to its ballot id and salt.

All public files are UTF-8 CSV with one header line, LF line endings, and
no quoting: every field is validated to a comma-free charset instead.
Parsing is strict on structure (header, column counts, charsets, digest
case) but leaves count and uniqueness verification to the pre-audit checks,
which must be able to observe those faults.
"""

from __future__ import annotations

import hashlib
import re
import secrets
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from . import commit
from .errors import MalformedInputError, NotFoundError, ParseError
from .model import CVR, Ballot, ContestSpec, Selection, is_token

MANIFEST_FILENAME = "manifest.csv"
BALLOT_STYLE_FILENAME = "ballot_style.csv"
LOOKUP_FILENAME = "lookup.csv"

MANIFEST_HEADER = "record,contest_id,key,value"
BALLOT_STYLE_HEADER = "ballot_id,contests,locator"
CCVR_HEADER = "shrouded_id,selection"
LOOKUP_HEADER = "shrouded_id,ballot_id,salt_hex"

PRNG_NAME = "sha256-counter-v1"

_SALT_HEX_RE = re.compile(r"[0-9a-f]{32}\Z")
_BALLOT_ID_RE = re.compile(r"[0-9]+\Z")
_LOCATOR_RE = re.compile(r"[^,\r\n]*\Z")


def ccvr_filename(contest_id: str) -> str:
    return f"ccvr_{contest_id}.csv"


@dataclass(frozen=True)
class CCVREntry:
    shrouded_id: str
    selection: Selection


@dataclass
class CCVRFile:
    contest_id: str
    entries: list[CCVREntry]

    def digests(self) -> list[str]:
        return [entry.shrouded_id for entry in self.entries]

    def is_sorted(self) -> bool:
        ids = self.digests()
        return all(a <= b for a, b in zip(ids, ids[1:]))


@dataclass(frozen=True)
class BallotStyleEntry:
    ballot_id: str
    contest_ids: tuple[str, ...]
    locator: str

    def __post_init__(self):
        object.__setattr__(self, "contest_ids", tuple(self.contest_ids))
        if not self.contest_ids:
            raise MalformedInputError(
                f"ballot {self.ballot_id!r}: style entry must list at least one contest"
            )
        if len(set(self.contest_ids)) != len(self.contest_ids):
            raise MalformedInputError(
                f"ballot {self.ballot_id!r}: duplicate contest in style entry"
            )


@dataclass
class BallotStyleFile:
    entries: list[BallotStyleEntry]

    def row(self, index: int) -> BallotStyleEntry:
        """1-based row access; draw indices address style rows directly."""
        return self.entries[index - 1]


@dataclass(frozen=True)
class LookupEntry:
    shrouded_id: str
    ballot_id: str
    salt: bytes


@dataclass
class LookupFile:
    """The secret digest -> (ballot id, salt) table, one row per voting
    opportunity.  Contest attribution is not serialized; it is known to the
    publisher at split time and recoverable by matching digests against the
    per-contest files."""

    entries: list[LookupEntry]
    contest_by_digest: dict[str, str] = field(default_factory=dict, compare=False)
    _ballot_index: dict[str, list[LookupEntry]] | None = field(
        default=None, compare=False, repr=False
    )

    def by_ballot(self) -> dict[str, list[LookupEntry]]:
        if self._ballot_index is None:
            index: dict[str, list[LookupEntry]] = {}
            for entry in self.entries:
                index.setdefault(entry.ballot_id, []).append(entry)
            self._ballot_index = index
        return self._ballot_index

    def invalidate_index(self) -> None:
        """Must be called after any direct mutation of `entries`."""
        self._ballot_index = None

    def resolve_contests(self, ccvr_files: Mapping[str, CCVRFile]) -> list[str]:
        """Rebuild contest attribution by digest matching.  Returns digests
        that match no file (possible only on tampered data)."""
        digest_to_contest: dict[str, str] = {}
        for contest_id, ccvr_file in ccvr_files.items():
            for entry in ccvr_file.entries:
                digest_to_contest.setdefault(entry.shrouded_id, contest_id)
        unresolved = []
        for entry in self.entries:
            contest_id = digest_to_contest.get(entry.shrouded_id)
            if contest_id is None:
                unresolved.append(entry.shrouded_id)
            else:
                self.contest_by_digest[entry.shrouded_id] = contest_id
        return unresolved


@dataclass
class Manifest:
    """Election-wide constants: counts, identifier/salt lengths, the
    disclosed commitment construction, and per-contest reported results."""

    total_ballots: int
    id_length: int
    salt_bytes: int
    hash_standard: str
    commitment_input: str
    prng_name: str
    contests: dict[str, ContestSpec]

    @property
    def contest_count(self) -> int:
        return len(self.contests)

    def total_opportunities(self) -> int:
        return sum(spec.reported_ballot_count for spec in self.contests.values())

    def scheme(self) -> commit.CommitmentScheme:
        return commit.CommitmentScheme(id_length=self.id_length)


@dataclass
class Publication:
    """Everything an observer loads from a publication directory, plus the
    secret lookup file when running in the official's role."""

    manifest: Manifest
    ballot_style: BallotStyleFile
    ccvr_files: dict[str, CCVRFile]
    file_digests: dict[str, str]
    lookup: LookupFile | None = None
    unresolved_lookup_digests: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Building


def split_cvrs(
    cvrs: Sequence[CVR],
    contests: Mapping[str, ContestSpec],
    rand_bytes: Callable[[int], bytes] = secrets.token_bytes,
) -> tuple[dict[str, CCVRFile], LookupFile]:
    """Split whole-ballot records into per-contest files with fresh
    commitments, and the matching lookup table.

    Every (ballot, contest) voting opportunity gets its own salt; digests
    are guaranteed unique (a colliding salt is regenerated, never emitted).
    Per-contest entries are sorted by digest, which destroys ballot order.
    """
    id_lengths = {len(cvr.ballot_id) for cvr in cvrs}
    if len(id_lengths) > 1:
        raise MalformedInputError("ballot identifiers must all have the same length")
    seen_ids: set[str] = set()
    seen_digests: set[str] = set()
    seen_salts: set[bytes] = set()
    per_contest: dict[str, list[CCVREntry]] = {cid: [] for cid in contests}
    lookup_entries: list[LookupEntry] = []
    contest_by_digest: dict[str, str] = {}
    id_length = id_lengths.pop() if id_lengths else 1

    for cvr in cvrs:
        if cvr.ballot_id in seen_ids:
            raise MalformedInputError(f"duplicate ballot id {cvr.ballot_id!r}")
        seen_ids.add(cvr.ballot_id)
        for sel in cvr.selections:
            if sel.contest_id not in contests:
                raise MalformedInputError(
                    f"ballot {cvr.ballot_id!r} references undeclared contest "
                    f"{sel.contest_id!r}"
                )
            while True:
                salt = commit.fresh_salt(rand_bytes)
                digest = commit.commit_to(cvr.ballot_id, salt, id_length)
                if salt not in seen_salts and digest not in seen_digests:
                    break
            seen_salts.add(salt)
            seen_digests.add(digest)
            per_contest[sel.contest_id].append(CCVREntry(digest, sel))
            lookup_entries.append(LookupEntry(digest, cvr.ballot_id, salt))
            contest_by_digest[digest] = sel.contest_id

    ccvr_files = {
        cid: CCVRFile(cid, sorted(entries, key=lambda e: e.shrouded_id))
        for cid, entries in per_contest.items()
    }
    return ccvr_files, LookupFile(lookup_entries, contest_by_digest)


def build_ballot_style_file(
    ballots: Sequence[Ballot],
    locators: Sequence[str] | None = None,
) -> BallotStyleFile:
    """One style entry per ballot: its id, its contests, and a retrieval
    recipe.  Default locators name the position in the audit trail."""
    if locators is not None and len(locators) != len(ballots):
        raise MalformedInputError("need exactly one locator per ballot")
    seen: set[str] = set()
    entries = []
    for i, ballot in enumerate(ballots):
        if ballot.ballot_id in seen:
            raise MalformedInputError(f"duplicate ballot id {ballot.ballot_id!r}")
        seen.add(ballot.ballot_id)
        locator = locators[i] if locators is not None else f"trail position {i + 1}"
        entries.append(BallotStyleEntry(ballot.ballot_id, ballot.contest_ids, locator))
    return BallotStyleFile(entries)


def build_manifest(
    contests: Mapping[str, ContestSpec], total_ballots: int, id_length: int
) -> Manifest:
    return Manifest(
        total_ballots=total_ballots,
        id_length=id_length,
        salt_bytes=commit.SALT_BYTES,
        hash_standard=commit.HASH_STANDARD,
        commitment_input=commit.COMMITMENT_INPUT,
        prng_name=PRNG_NAME,
        contests=dict(contests),
    )


def reveal_salts(lookup: LookupFile, ballot_id: str) -> list[tuple[str, bytes]]:
    """The (contest, salt) pairs for every voting opportunity of one ballot.

    Only sampled ballots are ever opened; callers must not iterate this over
    unsampled identifiers.  Rows whose contest cannot be attributed (digest
    in no published file) are omitted: any reveal of them would fail the
    observers' digest lookup the same way.
    """
    rows = lookup.by_ballot().get(ballot_id)
    if not rows:
        raise NotFoundError(f"ballot id {ballot_id!r} not present in the lookup file")
    pairs = []
    for row in rows:
        contest_id = lookup.contest_by_digest.get(row.shrouded_id)
        if contest_id is not None:
            pairs.append((contest_id, row.salt))
    pairs.sort(key=lambda pair: pair[0])
    return pairs


# ---------------------------------------------------------------------------
# Serialization

_FIELD_CHECKS = {
    "digest": commit.is_digest,
    "ballot_id": lambda v: bool(_BALLOT_ID_RE.match(v)),
    "salt_hex": lambda v: bool(_SALT_HEX_RE.match(v)),
    "token": is_token,
    "locator": lambda v: bool(_LOCATOR_RE.match(v)),
}


def _split_lines(text: str, header: str, path: str | None) -> list[str]:
    if "\r" in text:
        raise ParseError("carriage returns are not permitted (LF line endings only)", path=path)
    if not text.endswith("\n"):
        raise ParseError("file must end with a newline", path=path)
    lines = text.split("\n")[:-1]
    if not lines:
        raise ParseError("empty file", path=path)
    if lines[0] != header:
        raise ParseError(f"bad header {lines[0]!r}, expected {header!r}", path=path, line=1)
    return lines[1:]


def _split_fields(line: str, count: int, path: str | None, lineno: int) -> list[str]:
    fields = line.split(",")
    if len(fields) != count:
        raise ParseError(
            f"expected {count} comma-separated fields, found {len(fields)}",
            path=path,
            line=lineno,
        )
    return fields


def _check(kind: str, value: str, what: str, path: str | None, lineno: int) -> None:
    if not _FIELD_CHECKS[kind](value):
        raise ParseError(f"malformed {what}: {value!r}", path=path, line=lineno)


def _join_chosen(chosen: frozenset[str]) -> str:
    return ";".join(sorted(chosen))


def _parse_chosen(text: str, path: str | None, lineno: int) -> frozenset[str]:
    if text == "":
        return frozenset()
    parts = text.split(";")
    for part in parts:
        _check("token", part, "candidate id", path, lineno)
    if len(set(parts)) != len(parts):
        raise ParseError(f"candidate repeated in selection {text!r}", path=path, line=lineno)
    return frozenset(parts)


def serialize_manifest(manifest: Manifest) -> str:
    lines = [MANIFEST_HEADER]
    election_rows = [
        ("ballot_count", str(manifest.total_ballots)),
        ("contest_count", str(manifest.contest_count)),
        ("id_length", str(manifest.id_length)),
        ("salt_bytes", str(manifest.salt_bytes)),
        ("hash_standard", manifest.hash_standard),
        ("commitment", manifest.commitment_input),
        ("prng", manifest.prng_name),
    ]
    for key, value in election_rows:
        lines.append(f"election,,{key},{value}")
    for cid, spec in manifest.contests.items():
        lines.append(f"contest,{cid},kind,{spec.kind}")
        lines.append(f"contest,{cid},winners_allowed,{spec.winners_allowed}")
        lines.append(f"contest,{cid},ballot_count,{spec.reported_ballot_count}")
        lines.append(f"contest,{cid},candidates,{';'.join(spec.candidates)}")
        for cand in spec.candidates:
            lines.append(f"tally,{cid},{cand},{spec.reported_tallies[cand]}")
    return "\n".join(lines) + "\n"


def parse_manifest(text: str, path: str | None = None) -> Manifest:
    lines = _split_lines(text, MANIFEST_HEADER, path)
    election: dict[str, str] = {}
    contest_rows: dict[str, dict[str, str]] = {}
    tally_rows: dict[str, dict[str, int]] = {}
    order: list[str] = []
    for offset, line in enumerate(lines):
        lineno = offset + 2
        record, cid, key, value = _split_fields(line, 4, path, lineno)
        if "," in value or "\n" in value:
            raise ParseError("value fields must not contain commas", path=path, line=lineno)
        if record == "election":
            if cid != "":
                raise ParseError("election rows carry no contest id", path=path, line=lineno)
            if key in election:
                raise ParseError(f"duplicate election key {key!r}", path=path, line=lineno)
            election[key] = value
        elif record == "contest":
            _check("token", cid, "contest id", path, lineno)
            rows = contest_rows.setdefault(cid, {})
            if cid not in order:
                order.append(cid)
            if key in rows:
                raise ParseError(f"duplicate contest key {key!r}", path=path, line=lineno)
            rows[key] = value
        elif record == "tally":
            _check("token", cid, "contest id", path, lineno)
            _check("token", key, "candidate id", path, lineno)
            tallies = tally_rows.setdefault(cid, {})
            if key in tallies:
                raise ParseError(f"duplicate tally for {key!r}", path=path, line=lineno)
            if not value.isdigit():
                raise ParseError(f"tally must be a nonnegative integer: {value!r}", path=path, line=lineno)
            tallies[key] = int(value)
        else:
            raise ParseError(f"unknown record type {record!r}", path=path, line=lineno)

    required = ["ballot_count", "contest_count", "id_length", "salt_bytes",
                "hash_standard", "commitment", "prng"]
    for key in required:
        if key not in election:
            raise ParseError(f"manifest missing election key {key!r}", path=path)
    for key in ("ballot_count", "contest_count", "id_length", "salt_bytes"):
        if not election[key].isdigit():
            raise ParseError(f"election key {key!r} must be an integer", path=path)

    contests: dict[str, ContestSpec] = {}
    for cid in order:
        rows = contest_rows[cid]
        for key in ("kind", "winners_allowed", "ballot_count", "candidates"):
            if key not in rows:
                raise ParseError(f"contest {cid!r} missing key {key!r}", path=path)
        candidates = tuple(rows["candidates"].split(";"))
        tallies = tally_rows.get(cid, {})
        try:
            contests[cid] = ContestSpec(
                contest_id=cid,
                kind=rows["kind"],
                winners_allowed=int(rows["winners_allowed"]),
                candidates=candidates,
                reported_ballot_count=int(rows["ballot_count"]),
                reported_tallies=tallies,
            )
        except (MalformedInputError, ValueError) as exc:
            raise ParseError(f"contest {cid!r}: {exc}", path=path) from exc
    if len(contests) != int(election["contest_count"]):
        raise ParseError(
            f"manifest declares {election['contest_count']} contests but defines "
            f"{len(contests)}",
            path=path,
        )
    if tally_rows.keys() - contests.keys():
        raise ParseError("tally rows for undeclared contest", path=path)

    manifest = Manifest(
        total_ballots=int(election["ballot_count"]),
        id_length=int(election["id_length"]),
        salt_bytes=int(election["salt_bytes"]),
        hash_standard=election["hash_standard"],
        commitment_input=election["commitment"],
        prng_name=election["prng"],
        contests=contests,
    )
    if manifest.salt_bytes != commit.SALT_BYTES:
        raise ParseError(f"unsupported salt length {manifest.salt_bytes}", path=path)
    if manifest.hash_standard != commit.HASH_STANDARD:
        raise ParseError(f"unsupported hash standard {manifest.hash_standard!r}", path=path)
    return manifest


def serialize_ballot_style(style: BallotStyleFile) -> str:
    lines = [BALLOT_STYLE_HEADER]
    for entry in style.entries:
        lines.append(f"{entry.ballot_id},{';'.join(entry.contest_ids)},{entry.locator}")
    return "\n".join(lines) + "\n"


def parse_ballot_style(text: str, path: str | None = None) -> BallotStyleFile:
    lines = _split_lines(text, BALLOT_STYLE_HEADER, path)
    entries = []
    for offset, line in enumerate(lines):
        lineno = offset + 2
        ballot_id, contests_field, locator = _split_fields(line, 3, path, lineno)
        _check("ballot_id", ballot_id, "ballot id", path, lineno)
        _check("locator", locator, "locator", path, lineno)
        if contests_field == "":
            raise ParseError("style entry lists no contests", path=path, line=lineno)
        contest_ids = contests_field.split(";")
        for cid in contest_ids:
            _check("token", cid, "contest id", path, lineno)
        try:
            entries.append(BallotStyleEntry(ballot_id, tuple(contest_ids), locator))
        except MalformedInputError as exc:
            raise ParseError(str(exc), path=path, line=lineno) from exc
    return BallotStyleFile(entries)


def serialize_ccvr(ccvr_file: CCVRFile) -> str:
    lines = [CCVR_HEADER]
    for entry in ccvr_file.entries:
        lines.append(f"{entry.shrouded_id},{_join_chosen(entry.selection.chosen)}")
    return "\n".join(lines) + "\n"


def parse_ccvr(
    text: str,
    contest_id: str,
    candidates: Iterable[str] | None = None,
    path: str | None = None,
) -> CCVRFile:
    lines = _split_lines(text, CCVR_HEADER, path)
    known = set(candidates) if candidates is not None else None
    entries = []
    for offset, line in enumerate(lines):
        lineno = offset + 2
        digest, selection_field = _split_fields(line, 2, path, lineno)
        _check("digest", digest, "shrouded id", path, lineno)
        chosen = _parse_chosen(selection_field, path, lineno)
        if known is not None:
            unknown = chosen - known
            if unknown:
                raise ParseError(
                    f"unknown candidate {sorted(unknown)[0]!r} for contest {contest_id!r}",
                    path=path,
                    line=lineno,
                )
        entries.append(CCVREntry(digest, Selection(contest_id, chosen)))
    return CCVRFile(contest_id, entries)


def serialize_lookup(lookup: LookupFile) -> str:
    lines = [LOOKUP_HEADER]
    for entry in lookup.entries:
        lines.append(f"{entry.shrouded_id},{entry.ballot_id},{entry.salt.hex()}")
    return "\n".join(lines) + "\n"


def parse_lookup(text: str, path: str | None = None) -> LookupFile:
    lines = _split_lines(text, LOOKUP_HEADER, path)
    entries = []
    seen: set[str] = set()
    for offset, line in enumerate(lines):
        lineno = offset + 2
        digest, ballot_id, salt_hex = _split_fields(line, 3, path, lineno)
        _check("digest", digest, "shrouded id", path, lineno)
        _check("ballot_id", ballot_id, "ballot id", path, lineno)
        _check("salt_hex", salt_hex, "salt", path, lineno)
        if digest in seen:
            raise ParseError(f"duplicate shrouded id {digest!r}", path=path, line=lineno)
        seen.add(digest)
        entries.append(LookupEntry(digest, ballot_id, bytes.fromhex(salt_hex)))
    return LookupFile(entries)


# ---------------------------------------------------------------------------
# Directory I/O


def write_publication(
    out_dir: str | Path,
    manifest: Manifest,
    style: BallotStyleFile,
    ccvr_files: Mapping[str, CCVRFile],
    lookup: LookupFile | None = None,
) -> dict[str, str]:
    """Write all files; returns SHA-256 digests of the public files so the
    publication can be pinned.  The lookup file is written alongside when
    given, but is secret and must never be distributed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    texts = {
        MANIFEST_FILENAME: serialize_manifest(manifest),
        BALLOT_STYLE_FILENAME: serialize_ballot_style(style),
    }
    for cid, ccvr_file in ccvr_files.items():
        texts[ccvr_filename(cid)] = serialize_ccvr(ccvr_file)
    digests = {}
    for name, text in texts.items():
        data = text.encode("utf-8")
        (out / name).write_bytes(data)
        digests[name] = hashlib.sha256(data).hexdigest()
    if lookup is not None:
        (out / LOOKUP_FILENAME).write_bytes(serialize_lookup(lookup).encode("utf-8"))
    return digests


def load_publication(files_dir: str | Path, with_lookup: bool = False) -> Publication:
    """Load and validate a publication directory.

    Candidate tokens in per-contest files are validated against the
    manifest.  Count and uniqueness violations are *not* raised here; they
    are what the pre-audit checks report on.
    """
    root = Path(files_dir)
    manifest_path = root / MANIFEST_FILENAME
    if not manifest_path.is_file():
        raise ParseError("manifest.csv not found", path=str(manifest_path))
    manifest = parse_manifest(manifest_path.read_text("utf-8"), path=str(manifest_path))

    style_path = root / BALLOT_STYLE_FILENAME
    if not style_path.is_file():
        raise ParseError("ballot_style.csv not found", path=str(style_path))
    style = parse_ballot_style(style_path.read_text("utf-8"), path=str(style_path))

    ccvr_files = {}
    digests = {
        MANIFEST_FILENAME: hashlib.sha256(manifest_path.read_bytes()).hexdigest(),
        BALLOT_STYLE_FILENAME: hashlib.sha256(style_path.read_bytes()).hexdigest(),
    }
    for cid, spec in manifest.contests.items():
        ccvr_path = root / ccvr_filename(cid)
        if not ccvr_path.is_file():
            raise ParseError(f"missing per-contest file for {cid!r}", path=str(ccvr_path))
        ccvr_files[cid] = parse_ccvr(
            ccvr_path.read_text("utf-8"), cid, spec.candidates, path=str(ccvr_path)
        )
        digests[ccvr_filename(cid)] = hashlib.sha256(ccvr_path.read_bytes()).hexdigest()

    publication = Publication(
        manifest=manifest,
        ballot_style=style,
        ccvr_files=ccvr_files,
        file_digests=digests,
    )
    if with_lookup:
        lookup_path = root / LOOKUP_FILENAME
        if not lookup_path.is_file():
            raise ParseError("lookup.csv not found", path=str(lookup_path))
        lookup = parse_lookup(lookup_path.read_text("utf-8"), path=str(lookup_path))
        publication.unresolved_lookup_digests = lookup.resolve_contests(ccvr_files)
        publication.lookup = lookup
    return publication
