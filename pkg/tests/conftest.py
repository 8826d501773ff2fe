"""Shared fixtures: a small deterministic honest election with two
contests, built directly from the model/publish layers (independent of the
simulator)."""

from __future__ import annotations

import random
from dataclasses import dataclass

import pytest

from shroudaudit import publish
from shroudaudit.model import CVR, Ballot, ContestSpec, Selection


@dataclass
class Election:
    contests: dict[str, ContestSpec]
    ballots: list[Ballot]
    cvrs: list[CVR]
    style: publish.BallotStyleFile
    ccvr_files: dict[str, publish.CCVRFile]
    lookup: publish.LookupFile
    manifest: publish.Manifest
    publication: publish.Publication

    @property
    def trail(self) -> dict[str, Ballot]:
        return {b.ballot_id: b for b in self.ballots}


def build_election(
    n: int = 100,
    mayor_tallies: dict[str, int] | None = None,
    board_tallies: dict[str, int] | None = None,
    board_count: int = 60,
    seed: int = 5,
) -> Election:
    """Two contests: 'mayor' on every ballot, 'board' on the first
    `board_count` ballots; remaining capacity is undervotes."""
    mayor_tallies = mayor_tallies or {"alice": 55, "bob": 35}
    board_tallies = board_tallies or {"carol": 30, "dave": 20}
    rng = random.Random(seed)

    mayor_votes: list[str | None] = []
    for cand, count in mayor_tallies.items():
        mayor_votes.extend([cand] * count)
    mayor_votes.extend([None] * (n - len(mayor_votes)))
    rng.shuffle(mayor_votes)

    board_votes: list[str | None] = []
    for cand, count in board_tallies.items():
        board_votes.extend([cand] * count)
    board_votes.extend([None] * (board_count - len(board_votes)))
    rng.shuffle(board_votes)

    ballots = []
    for i in range(n):
        selections = [
            Selection("mayor", frozenset() if mayor_votes[i] is None else frozenset([mayor_votes[i]]))
        ]
        if i < board_count:
            vote = board_votes[i]
            selections.append(
                Selection("board", frozenset() if vote is None else frozenset([vote]))
            )
        ballots.append(Ballot(f"{i + 1:04d}", tuple(selections)))
    cvrs = [CVR(b.ballot_id, b.selections) for b in ballots]

    contests = {
        "mayor": ContestSpec("mayor", "plurality", 1, tuple(mayor_tallies), n, mayor_tallies),
        "board": ContestSpec("board", "plurality", 1, tuple(board_tallies), board_count, board_tallies),
    }
    ccvr_files, lookup = publish.split_cvrs(cvrs, contests, random.Random(seed + 1).randbytes)
    style = publish.build_ballot_style_file(ballots)
    manifest = publish.build_manifest(contests, n, 4)
    publication = publish.Publication(
        manifest=manifest,
        ballot_style=style,
        ccvr_files=ccvr_files,
        file_digests={},
        lookup=lookup,
    )
    return Election(contests, ballots, cvrs, style, ccvr_files, lookup, manifest, publication)


def build_publication(
    ballots: list[Ballot],
    cvrs: list[CVR],
    contest_meta: dict[str, tuple[tuple[str, ...], int]],
    seed: int = 5,
) -> Election:
    """Publication whose manifest reports exactly what the record files
    tally (a self-consistent official), letting tests diverge ballots from
    their records."""
    id_length = len(ballots[0].ballot_id)
    draft = {
        cid: ContestSpec(
            cid,
            "plurality" if w == 1 else "vote-for-up-to",
            w,
            candidates,
            len(ballots),
            {c: 0 for c in candidates},
        )
        for cid, (candidates, w) in contest_meta.items()
    }
    ccvr_files, lookup = publish.split_cvrs(cvrs, draft, random.Random(seed).randbytes)
    contests = {}
    for cid, (candidates, w) in contest_meta.items():
        entries = ccvr_files[cid].entries
        tallies = {c: 0 for c in candidates}
        for entry in entries:
            chosen = entry.selection.chosen
            if len(chosen) <= w:
                for cand in chosen:
                    tallies[cand] += 1
        contests[cid] = ContestSpec(
            cid,
            "plurality" if w == 1 else "vote-for-up-to",
            w,
            candidates,
            len(entries),
            tallies,
        )
    style = publish.build_ballot_style_file(ballots)
    manifest = publish.build_manifest(contests, len(ballots), id_length)
    publication = publish.Publication(manifest, style, ccvr_files, {}, lookup)
    return Election(contests, ballots, cvrs, style, ccvr_files, lookup, manifest, publication)


@pytest.fixture
def election() -> Election:
    return build_election()


@pytest.fixture
def publication(election: Election) -> publish.Publication:
    return election.publication
