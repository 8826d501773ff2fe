"""Domain types for contests, ballots and vote records, plus the winner,
margin, and overstatement arithmetic used by the checks and the audit engine.

All margin-derived quantities are exact rationals (`fractions.Fraction`)
until they enter the floating-point risk calculation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import AbstractSet, Iterable, Mapping

from .errors import MalformedInputError, NoUniqueOutcomeError

# Contest and candidate identifiers: lowercase tokens, safe in unquoted CSV.
TOKEN_RE = re.compile(r"[a-z0-9][a-z0-9_.-]*\Z")

KIND_PLURALITY = "plurality"
KIND_VOTE_FOR_UP_TO = "vote-for-up-to"


def is_token(value: str) -> bool:
    return bool(TOKEN_RE.match(value))


@dataclass(frozen=True)
class Selection:
    """One voter's (possibly empty) set of choices in a single contest.

    An empty `chosen` set is an undervote.  A set larger than the contest's
    allowed winner count is an overvote and counts as zero valid votes.
    """

    contest_id: str
    chosen: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "chosen", frozenset(self.chosen))


@dataclass(frozen=True)
class Ballot:
    """One audit-trail record: a ballot id plus one selection per contest."""

    ballot_id: str
    selections: tuple[Selection, ...]

    def __post_init__(self):
        object.__setattr__(self, "selections", tuple(self.selections))
        seen = set()
        for sel in self.selections:
            if sel.contest_id in seen:
                raise MalformedInputError(
                    f"ballot {self.ballot_id!r} has two selections for contest {sel.contest_id!r}"
                )
            seen.add(sel.contest_id)

    @property
    def contest_ids(self) -> tuple[str, ...]:
        return tuple(sel.contest_id for sel in self.selections)

    def selection_map(self) -> dict[str, frozenset[str]]:
        return {sel.contest_id: sel.chosen for sel in self.selections}


# A cast vote record has the same shape as a ballot; the distinction is who
# produced it (machine interpretation vs the audit-trail record itself).
class CVR(Ballot):
    pass


@dataclass(frozen=True)
class ContestSpec:
    """A contest definition together with the reported results for it."""

    contest_id: str
    kind: str
    winners_allowed: int
    candidates: tuple[str, ...]
    reported_ballot_count: int
    reported_tallies: Mapping[str, int]

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        object.__setattr__(self, "reported_tallies", dict(self.reported_tallies))
        if not is_token(self.contest_id):
            raise MalformedInputError(f"bad contest id {self.contest_id!r}")
        if self.kind not in (KIND_PLURALITY, KIND_VOTE_FOR_UP_TO):
            raise MalformedInputError(f"unknown contest kind {self.kind!r}")
        if self.kind == KIND_PLURALITY and self.winners_allowed != 1:
            raise MalformedInputError("plurality contests allow exactly one winner")
        if self.winners_allowed < 1:
            raise MalformedInputError("winners_allowed must be >= 1")
        if self.winners_allowed >= len(self.candidates):
            raise MalformedInputError(
                f"contest {self.contest_id!r}: winners_allowed must be smaller "
                f"than the number of candidates"
            )
        if len(set(self.candidates)) != len(self.candidates):
            raise MalformedInputError(f"contest {self.contest_id!r}: duplicate candidate ids")
        for cand in self.candidates:
            if not is_token(cand):
                raise MalformedInputError(f"bad candidate id {cand!r}")
        if self.reported_ballot_count < 0:
            raise MalformedInputError("reported ballot count must be nonnegative")
        if set(self.reported_tallies) != set(self.candidates):
            raise MalformedInputError(
                f"contest {self.contest_id!r}: reported tallies must cover exactly "
                f"the declared candidates"
            )
        for cand, votes in self.reported_tallies.items():
            if votes < 0 or votes > self.reported_ballot_count:
                raise MalformedInputError(
                    f"contest {self.contest_id!r}: tally for {cand!r} outside "
                    f"[0, {self.reported_ballot_count}]"
                )


@dataclass(frozen=True)
class ContestOutcome:
    """Winner/loser partition and all pairwise margins for one contest.

    `weakest_winner` and `runner_up` are the substitution targets for
    worst-case draw evaluation: the winner with the smallest tally and the
    loser with the largest tally.
    """

    contest_id: str
    winners: frozenset[str]
    losers: frozenset[str]
    pairwise_margins: Mapping[tuple[str, str], int]
    margin_votes: int
    weakest_winner: str
    runner_up: str
    tallies: Mapping[str, int] = field(compare=False, default_factory=dict)


def count_valid_votes(selections: Iterable[Selection], contest: ContestSpec) -> dict[str, int]:
    """Tally valid votes per candidate.

    Overvotes (more choices than the contest allows) and undervotes both
    contribute zero to every candidate.
    """
    counts = {cand: 0 for cand in contest.candidates}
    for sel in selections:
        if sel.contest_id != contest.contest_id:
            raise MalformedInputError(
                f"selection for contest {sel.contest_id!r} tallied against "
                f"{contest.contest_id!r}"
            )
        for cand in sel.chosen:
            if cand not in counts:
                raise MalformedInputError(
                    f"unknown candidate {cand!r} in contest {contest.contest_id!r}"
                )
        if len(sel.chosen) > contest.winners_allowed:
            continue
        for cand in sel.chosen:
            counts[cand] += 1
    return counts


def single_vote_values(chosen: AbstractSet[str], contest: ContestSpec) -> dict[str, int]:
    """Per-candidate 0/1 vote values of one selection, with the overvote rule."""
    if len(chosen) > contest.winners_allowed:
        return {cand: 0 for cand in contest.candidates}
    values = {cand: 0 for cand in contest.candidates}
    for cand in chosen:
        if cand not in values:
            raise MalformedInputError(
                f"unknown candidate {cand!r} in contest {contest.contest_id!r}"
            )
        values[cand] = 1
    return values


def compute_outcome(tallies: Mapping[str, int], contest: ContestSpec) -> ContestOutcome:
    """Find the winner set and every (winner, loser) margin for one contest.

    Raises `NoUniqueOutcomeError` on a tie between the last winning and the
    first losing position: the audit presumes a positive margin, so a tied
    contest must be resolved by policy before any audit can start.
    """
    if set(tallies) != set(contest.candidates):
        raise MalformedInputError(
            f"tallies must cover exactly the candidates of contest {contest.contest_id!r}"
        )
    ranked = sorted(contest.candidates, key=lambda c: (-tallies[c], c))
    w = contest.winners_allowed
    if tallies[ranked[w - 1]] == tallies[ranked[w]]:
        raise NoUniqueOutcomeError(
            f"contest {contest.contest_id!r}: tie at the winner boundary "
            f"({tallies[ranked[w - 1]]} votes)"
        )
    winners = ranked[:w]
    losers = ranked[w:]
    margins = {
        (win, lose): tallies[win] - tallies[lose] for win in winners for lose in losers
    }
    margin_votes = min(margins.values())
    weakest_winner = min(winners, key=lambda c: (tallies[c], c))
    runner_up = min(losers, key=lambda c: (-tallies[c], c))
    return ContestOutcome(
        contest_id=contest.contest_id,
        winners=frozenset(winners),
        losers=frozenset(losers),
        pairwise_margins=margins,
        margin_votes=margin_votes,
        weakest_winner=weakest_winner,
        runner_up=runner_up,
        tallies=dict(tallies),
    )


def diluted_margin(outcomes: Mapping[str, ContestOutcome], total_ballots: int) -> Fraction:
    """Smallest contest margin in votes divided by the total ballot count."""
    if total_ballots <= 0:
        raise NoUniqueOutcomeError("total ballot count must be positive")
    if not outcomes:
        raise NoUniqueOutcomeError("no contest outcomes")
    smallest = min(outcome.margin_votes for outcome in outcomes.values())
    if smallest <= 0:
        raise NoUniqueOutcomeError("nonpositive margin; the audit cannot proceed")
    return Fraction(smallest, total_ballots)


def ballot_overstatement(
    cvr_selections: Mapping[str, AbstractSet[str]],
    human_selections: Mapping[str, AbstractSet[str]],
    contests: Mapping[str, ContestSpec],
    outcomes: Mapping[str, ContestOutcome],
) -> tuple[int, Fraction]:
    """Largest margin overstatement on one ballot, in votes and relative form.

    Both interpretation maps must cover the same contests (worst-case
    substitutions are applied before this is called).  Returns `(e, eps)`
    where `e` is the largest number of votes by which the record overstated
    any (winner, loser) margin, and `eps` is the largest overstatement
    relative to its pair margin.  `e` is always in [-2, 2].
    """
    if set(cvr_selections) != set(human_selections):
        raise MalformedInputError(
            "record-side and human-side interpretations cover different contests"
        )
    e_max: int | None = None
    eps_max: Fraction | None = None
    for contest_id, record_chosen in cvr_selections.items():
        contest = contests[contest_id]
        outcome = outcomes[contest_id]
        v = single_vote_values(record_chosen, contest)
        a = single_vote_values(human_selections[contest_id], contest)
        for (win, lose), pair_margin in outcome.pairwise_margins.items():
            diff = v[win] - a[win] - v[lose] + a[lose]
            rel = Fraction(diff, pair_margin)
            if e_max is None or diff > e_max:
                e_max = diff
            if eps_max is None or rel > eps_max:
                eps_max = rel
    if e_max is None:
        return 0, Fraction(0)
    return e_max, eps_max
