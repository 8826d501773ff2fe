"""Monte Carlo laboratory: synthetic elections, mapping-fault injection,
end-to-end audit trials, and empirical risk estimation.

Every trial runs the real `AuditSession` against an in-memory publication,
so the simulator exercises exactly the engine the batch CLI and the
interactive service drive.  Human interpretation in simulation equals the
true ballot; machine misreads are modeled as record-side faults only.
"""

from __future__ import annotations

import hashlib
import json
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import publish
from .audit import (
    BLOCKED,
    FULL_HAND_COUNT_REQUIRED,
    PASSED,
    AuditParams,
    AuditSession,
    AuditStateView,
    DerivedParams,
    derive_params,
    drive_session,
)
from .commit import commit_to, fresh_salt, open_commitment
from .errors import ConfigurationError, MalformedInputError, NotFoundError
from .model import (
    CVR,
    Ballot,
    ContestOutcome,
    ContestSpec,
    Selection,
    compute_outcome,
    diluted_margin,
)
from .publish import (
    BallotStyleEntry,
    CCVREntry,
    CCVRFile,
    LookupEntry,
    LookupFile,
    Publication,
    build_ballot_style_file,
    build_manifest,
    reveal_salts,
    split_cvrs,
)

FAULT_CVR_MISREAD = "cvr-misread"
FAULT_ORPHAN = "orphan"
FAULT_MULTIPLE = "multiple"
FAULT_MISSING_CCVR = "missing-ccvr"
FAULT_PHANTOM_BALLOT = "phantom-ballot"
FAULT_PHANTOM_CONTEST = "phantom-contest"
FAULT_STYLE_ID_SWAP = "style-id-swap"

FAULT_KINDS = (
    FAULT_CVR_MISREAD,
    FAULT_ORPHAN,
    FAULT_MULTIPLE,
    FAULT_MISSING_CCVR,
    FAULT_PHANTOM_BALLOT,
    FAULT_PHANTOM_CONTEST,
    FAULT_STYLE_ID_SWAP,
)

OUTCOME_PASSED_AT_N0 = "passed-at-n0"
OUTCOME_PASSED_ESCALATION = "passed-after-escalation"
OUTCOME_FULL_HAND_COUNT = "full-hand-count"


@dataclass(frozen=True)
class ContestPlan:
    contest_id: str
    candidates: tuple[str, ...]
    true_tallies: Mapping[str, int]
    ballot_count: int
    winners_allowed: int = 1

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        object.__setattr__(self, "true_tallies", dict(self.true_tallies))
        if set(self.true_tallies) - set(self.candidates):
            raise ConfigurationError(
                f"contest {self.contest_id!r}: tallies name unknown candidates"
            )
        if sum(self.true_tallies.values()) > self.ballot_count:
            raise ConfigurationError(
                f"contest {self.contest_id!r}: tallies exceed the ballot count"
            )

    def true_winner(self) -> str:
        return max(self.candidates, key=lambda c: (self.true_tallies.get(c, 0), c))

    def strongest_true_loser(self) -> str:
        ranked = sorted(self.candidates, key=lambda c: (-self.true_tallies.get(c, 0), c))
        return ranked[self.winners_allowed]


@dataclass(frozen=True)
class FaultPlan:
    kind: str
    contest_id: str
    count: int
    from_candidate: str | None = None
    to_candidate: str | None = None

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ConfigurationError(f"unknown fault kind {self.kind!r}")
        if self.count < 0:
            raise ConfigurationError("fault count must be nonnegative")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    total_ballots: int
    contests: tuple[ContestPlan, ...]
    faults: tuple[FaultPlan, ...] = ()
    trials: int = 100
    base_seed: str = "1"
    risk_limit: float = 0.1
    gamma: float = 1.01
    error_tolerance: float = 0.2
    max_draws: int | None = None
    expect_wrong_outcome: bool = False
    regenerate_per_trial: bool = True

    def __post_init__(self):
        object.__setattr__(self, "contests", tuple(self.contests))
        object.__setattr__(self, "faults", tuple(self.faults))
        if self.total_ballots < 1:
            raise ConfigurationError("need at least one ballot")
        for plan in self.contests:
            if plan.ballot_count > self.total_ballots:
                raise ConfigurationError(
                    f"contest {plan.contest_id!r} exceeds the total ballot count"
                )


@dataclass(frozen=True)
class FaultRecord:
    kind: str
    contest_id: str
    victim_ballot_ids: tuple[str, ...] = ()
    fabricated_ids: tuple[str, ...] = ()


@dataclass
class GeneratedElection:
    publication: Publication
    trail: dict[str, Ballot]
    cvrs: list[CVR]
    true_outcomes: dict[str, ContestOutcome]
    apparent_outcomes: dict[str, ContestOutcome]
    outcome_flipped: bool
    fault_records: list[FaultRecord]
    lookup: LookupFile


@dataclass(frozen=True)
class TrialResult:
    trial: int
    outcome: str
    draws_used: int
    final_p_km: float
    wrong_outcome: bool
    stopped_via: str | None
    initial_sample_size: int
    max_draws: int


@dataclass
class TrialSummary:
    scenario: str
    trials: int
    initial_sample_size: int
    max_draws: int
    wrong_outcome_trials: int
    passed_at_n0: int
    passed_after_escalation: int
    full_hand_count: int
    empirical_risk: float | None
    mean_draws_honest: float | None


# ---------------------------------------------------------------------------
# Election generation


def _trial_token(base_seed: str, trial: int) -> str:
    return hashlib.sha256(f"{base_seed}:{trial}".encode("utf-8")).hexdigest()


def _sub_rng(token: str, label: str) -> random.Random:
    digest = hashlib.sha256(f"{token}:{label}".encode("utf-8")).hexdigest()
    return random.Random(int(digest, 16))


def _tally_entries(entries: Sequence[CCVREntry], plan: ContestPlan) -> dict[str, int]:
    counts = {cand: 0 for cand in plan.candidates}
    for entry in entries:
        chosen = entry.selection.chosen
        if len(chosen) > plan.winners_allowed:
            continue
        for cand in chosen:
            counts[cand] += 1
    return counts


def _spec_for(plan: ContestPlan, ballot_count: int, tallies: Mapping[str, int]) -> ContestSpec:
    kind = "plurality" if plan.winners_allowed == 1 else "vote-for-up-to"
    return ContestSpec(
        contest_id=plan.contest_id,
        kind=kind,
        winners_allowed=plan.winners_allowed,
        candidates=plan.candidates,
        reported_ballot_count=ballot_count,
        reported_tallies=tallies,
    )


@dataclass
class _Bundle:
    """Mutable publication parts handed to the fault injectors."""

    spec: ScenarioSpec
    rng: random.Random
    id_length: int
    style_entries: list[BallotStyleEntry]
    ccvr_files: dict[str, CCVRFile]
    lookup: LookupFile
    next_phantom: int
    digest_ballot: dict[str, str]

    def plan_for(self, contest_id: str) -> ContestPlan:
        for plan in self.spec.contests:
            if plan.contest_id == contest_id:
                return plan
        raise ConfigurationError(f"fault targets undeclared contest {contest_id!r}")

    def ballot_of(self, digest: str) -> str:
        ballot_id = self.digest_ballot.get(digest)
        if ballot_id is None:
            raise ConfigurationError(f"digest {digest} has no lookup row")
        return ballot_id

    def fresh_phantom_id(self) -> str:
        pid = str(self.next_phantom).zfill(self.id_length)
        self.next_phantom += 1
        return pid

    def remove_lookup_row(self, digest: str) -> None:
        self.lookup.entries = [e for e in self.lookup.entries if e.shrouded_id != digest]
        self.lookup.contest_by_digest.pop(digest, None)
        self.digest_ballot.pop(digest, None)
        self.lookup.invalidate_index()

    def add_lookup_row(self, digest: str, ballot_id: str, salt: bytes, contest_id: str) -> None:
        self.lookup.entries.append(LookupEntry(digest, ballot_id, salt))
        self.lookup.contest_by_digest[digest] = contest_id
        self.digest_ballot[digest] = ballot_id
        self.lookup.invalidate_index()

    def commit_fresh(self, ballot_id: str, contest_id: str) -> tuple[str, bytes]:
        while True:
            salt = fresh_salt(self.rng.randbytes)
            digest = commit_to(ballot_id, salt, self.id_length)
            if digest not in self.digest_ballot:
                self.add_lookup_row(digest, ballot_id, salt, contest_id)
                return digest, salt


def generate_election(spec: ScenarioSpec, rng: random.Random) -> GeneratedElection:
    """Build an honest audit trail hitting the planned tallies, mutate it
    per the fault plan, and publish the result in memory.

    The manifest's counts and tallies are recomputed from the final
    per-contest files, exactly as a self-consistent (possibly dishonest)
    official would report them.
    """
    n = spec.total_ballots
    phantom_budget = sum(
        plan.count for plan in spec.faults
        if plan.kind in (FAULT_PHANTOM_BALLOT, FAULT_STYLE_ID_SWAP)
    )
    id_length = max(4, len(str(n + phantom_budget)))
    ballot_ids = [str(i + 1).zfill(id_length) for i in range(n)]

    selections_per_ballot: dict[str, list[Selection]] = {bid: [] for bid in ballot_ids}
    for plan in spec.contests:
        if plan.ballot_count == n:
            members = list(range(n))
        else:
            members = sorted(rng.sample(range(n), plan.ballot_count))
        votes: list[str | None] = []
        for cand in plan.candidates:
            votes.extend([cand] * plan.true_tallies.get(cand, 0))
        votes.extend([None] * (plan.ballot_count - len(votes)))
        rng.shuffle(votes)
        for member, vote in zip(members, votes):
            chosen = frozenset() if vote is None else frozenset([vote])
            selections_per_ballot[ballot_ids[member]].append(
                Selection(plan.contest_id, chosen)
            )

    if any(not sels for sels in selections_per_ballot.values()):
        raise ConfigurationError("every ballot must carry at least one contest")
    ballots = [Ballot(bid, tuple(selections_per_ballot[bid])) for bid in ballot_ids]
    cvrs = [CVR(b.ballot_id, b.selections) for b in ballots]

    # Record-generation faults happen before publication.
    fault_records: list[FaultRecord] = []
    for plan in spec.faults:
        if plan.kind == FAULT_CVR_MISREAD:
            fault_records.append(_inject_cvr_misread(cvrs, plan, spec, rng))

    draft_contests = {
        plan.contest_id: _spec_for(plan, plan.ballot_count, plan.true_tallies)
        for plan in spec.contests
    }
    ccvr_files, lookup = split_cvrs(cvrs, draft_contests, rng.randbytes)
    style = build_ballot_style_file(ballots)

    # Mapping faults mutate the published artifacts.
    bundle = _Bundle(
        spec=spec,
        rng=rng,
        id_length=id_length,
        style_entries=list(style.entries),
        ccvr_files=ccvr_files,
        lookup=lookup,
        next_phantom=n + 1,
        digest_ballot={e.shrouded_id: e.ballot_id for e in lookup.entries},
    )
    for plan in spec.faults:
        if plan.kind == FAULT_CVR_MISREAD:
            continue
        fault_records.append(_INJECTORS[plan.kind](bundle, plan))

    for ccvr_file in bundle.ccvr_files.values():
        ccvr_file.entries.sort(key=lambda e: e.shrouded_id)

    final_style = publish.BallotStyleFile(bundle.style_entries)
    contests: dict[str, ContestSpec] = {}
    for plan in spec.contests:
        entries = bundle.ccvr_files[plan.contest_id].entries
        contests[plan.contest_id] = _spec_for(
            plan, len(entries), _tally_entries(entries, plan)
        )
    manifest = build_manifest(contests, len(final_style.entries), id_length)
    publication = Publication(
        manifest=manifest,
        ballot_style=final_style,
        ccvr_files=bundle.ccvr_files,
        file_digests={},
        lookup=bundle.lookup,
    )

    trail = {b.ballot_id: b for b in ballots}
    true_outcomes = {}
    apparent_outcomes = {}
    flipped = False
    for plan in spec.contests:
        spec_final = contests[plan.contest_id]
        true_tally = {cand: 0 for cand in plan.candidates}
        for ballot in ballots:
            for sel in ballot.selections:
                if sel.contest_id != plan.contest_id:
                    continue
                if len(sel.chosen) <= plan.winners_allowed:
                    for cand in sel.chosen:
                        true_tally[cand] += 1
        true_outcomes[plan.contest_id] = compute_outcome(true_tally, spec_final)
        apparent_outcomes[plan.contest_id] = compute_outcome(
            dict(spec_final.reported_tallies), spec_final
        )
        if true_outcomes[plan.contest_id].winners != apparent_outcomes[plan.contest_id].winners:
            flipped = True

    if flipped != spec.expect_wrong_outcome:
        raise ConfigurationError(
            f"scenario {spec.name!r}: outcome flipped={flipped} but the scenario "
            f"declares expect_wrong_outcome={spec.expect_wrong_outcome}"
        )

    return GeneratedElection(
        publication=publication,
        trail=trail,
        cvrs=cvrs,
        true_outcomes=true_outcomes,
        apparent_outcomes=apparent_outcomes,
        outcome_flipped=flipped,
        fault_records=fault_records,
        lookup=bundle.lookup,
    )


def _pick_victim_entries(bundle: _Bundle, plan: FaultPlan, voting_for: str) -> list[int]:
    entries = bundle.ccvr_files[plan.contest_id].entries
    eligible = [
        i for i, entry in enumerate(entries)
        if entry.selection.chosen == frozenset([voting_for])
    ]
    if len(eligible) < plan.count:
        raise ConfigurationError(
            f"{plan.kind} fault needs {plan.count} entries voting for "
            f"{voting_for!r}, found {len(eligible)}"
        )
    return bundle.rng.sample(eligible, plan.count)


def _inject_cvr_misread(
    cvrs: list[CVR], plan: FaultPlan, spec: ScenarioSpec, rng: random.Random
) -> FaultRecord:
    cplan = next((p for p in spec.contests if p.contest_id == plan.contest_id), None)
    if cplan is None:
        raise ConfigurationError(f"fault targets undeclared contest {plan.contest_id!r}")
    source = plan.from_candidate or cplan.true_winner()
    target = plan.to_candidate or cplan.strongest_true_loser()
    # from_candidate "undervote" misreads blank opportunities as votes,
    # producing one-vote overstatements instead of two-vote flips
    wanted = frozenset() if source == "undervote" else frozenset([source])
    eligible = [
        i for i, cvr in enumerate(cvrs)
        if cvr.selection_map().get(plan.contest_id) == wanted
    ]
    if len(eligible) < plan.count:
        raise ConfigurationError(
            f"cvr-misread fault needs {plan.count} records voting for {source!r}, "
            f"found {len(eligible)}"
        )
    victims = rng.sample(eligible, plan.count)
    victim_ids = []
    for i in victims:
        cvr = cvrs[i]
        new_selections = tuple(
            Selection(sel.contest_id, frozenset([target]))
            if sel.contest_id == plan.contest_id else sel
            for sel in cvr.selections
        )
        cvrs[i] = CVR(cvr.ballot_id, new_selections)
        victim_ids.append(cvr.ballot_id)
    return FaultRecord(plan.kind, plan.contest_id, tuple(victim_ids))


def _inject_orphan(bundle: _Bundle, plan: FaultPlan) -> FaultRecord:
    cplan = bundle.plan_for(plan.contest_id)
    source = plan.from_candidate or cplan.true_winner()
    target = plan.to_candidate or cplan.strongest_true_loser()
    entries = bundle.ccvr_files[plan.contest_id].entries
    victims = _pick_victim_entries(bundle, plan, source)
    victim_ids = []
    fabricated = []
    for i in victims:
        old = entries[i]
        victim_ids.append(bundle.ballot_of(old.shrouded_id))
        while True:
            digest = bundle.rng.randbytes(32).hex()
            if digest not in bundle.digest_ballot:
                break
        entries[i] = CCVREntry(digest, Selection(plan.contest_id, frozenset([target])))
        fabricated.append(digest)
        # The victim's lookup row stays: opening it now yields a digest that
        # is absent from the published file.
    return FaultRecord(plan.kind, plan.contest_id, tuple(victim_ids), tuple(fabricated))


def _inject_multiple(bundle: _Bundle, plan: FaultPlan) -> FaultRecord:
    cplan = bundle.plan_for(plan.contest_id)
    source = plan.from_candidate or cplan.true_winner()
    target = plan.to_candidate or cplan.strongest_true_loser()
    entries = bundle.ccvr_files[plan.contest_id].entries
    victims = _pick_victim_entries(bundle, plan, source)
    donor_pool = [
        i for i, entry in enumerate(entries)
        if entry.selection.chosen == frozenset([target]) and i not in victims
    ]
    if len(donor_pool) < plan.count:
        raise ConfigurationError(
            f"multiple fault needs {plan.count} donor entries voting for {target!r}"
        )
    donors = bundle.rng.sample(donor_pool, plan.count)
    victim_ids = []
    fabricated = []
    for i, donor_index in zip(victims, donors):
        old = entries[i]
        victim_id = bundle.ballot_of(old.shrouded_id)
        donor_id = bundle.ballot_of(entries[donor_index].shrouded_id)
        victim_ids.append(victim_id)
        bundle.remove_lookup_row(old.shrouded_id)
        digest, _salt = bundle.commit_fresh(donor_id, plan.contest_id)
        entries[i] = CCVREntry(digest, Selection(plan.contest_id, frozenset([target])))
        fabricated.append(digest)
    return FaultRecord(plan.kind, plan.contest_id, tuple(victim_ids), tuple(fabricated))


def _inject_missing_ccvr(bundle: _Bundle, plan: FaultPlan) -> FaultRecord:
    cplan = bundle.plan_for(plan.contest_id)
    source = plan.from_candidate or cplan.true_winner()
    entries = bundle.ccvr_files[plan.contest_id].entries
    style_pos = {entry.ballot_id: pos for pos, entry in enumerate(bundle.style_entries)}
    eligible = []
    for i, entry in enumerate(entries):
        if entry.selection.chosen != frozenset([source]):
            continue
        ballot_id = bundle.ballot_of(entry.shrouded_id)
        style = bundle.style_entries[style_pos[ballot_id]]
        if len(style.contest_ids) > 1:
            eligible.append(i)
    if len(eligible) < plan.count:
        raise ConfigurationError(
            f"missing-ccvr fault needs {plan.count} multi-contest ballots voting "
            f"for {source!r}, found {len(eligible)}"
        )
    picked = sorted(bundle.rng.sample(eligible, plan.count), reverse=True)
    victim_ids = []
    for i in picked:
        entry = entries[i]
        ballot_id = bundle.ballot_of(entry.shrouded_id)
        bundle.remove_lookup_row(entry.shrouded_id)
        del entries[i]
        pos = style_pos[ballot_id]
        style = bundle.style_entries[pos]
        bundle.style_entries[pos] = BallotStyleEntry(
            style.ballot_id,
            tuple(cid for cid in style.contest_ids if cid != plan.contest_id),
            style.locator,
        )
        victim_ids.append(ballot_id)
    return FaultRecord(plan.kind, plan.contest_id, tuple(victim_ids))


def _inject_phantom_ballot(bundle: _Bundle, plan: FaultPlan) -> FaultRecord:
    cplan = bundle.plan_for(plan.contest_id)
    target = plan.to_candidate or cplan.strongest_true_loser()
    fabricated = []
    for _ in range(plan.count):
        pid = bundle.fresh_phantom_id()
        digest, _salt = bundle.commit_fresh(pid, plan.contest_id)
        bundle.ccvr_files[plan.contest_id].entries.append(
            CCVREntry(digest, Selection(plan.contest_id, frozenset([target])))
        )
        bundle.style_entries.append(
            BallotStyleEntry(pid, (plan.contest_id,),
                             f"trail position {len(bundle.style_entries) + 1}")
        )
        fabricated.append(pid)
    return FaultRecord(plan.kind, plan.contest_id, (), tuple(fabricated))


def _inject_phantom_contest(bundle: _Bundle, plan: FaultPlan) -> FaultRecord:
    cplan = bundle.plan_for(plan.contest_id)
    target = plan.to_candidate or cplan.strongest_true_loser()
    eligible = [
        pos for pos, entry in enumerate(bundle.style_entries)
        if plan.contest_id not in entry.contest_ids
    ]
    if len(eligible) < plan.count:
        raise ConfigurationError(
            f"phantom-contest fault needs {plan.count} ballots without contest "
            f"{plan.contest_id!r}, found {len(eligible)}"
        )
    picked = bundle.rng.sample(eligible, plan.count)
    victim_ids = []
    for pos in picked:
        style = bundle.style_entries[pos]
        digest, _salt = bundle.commit_fresh(style.ballot_id, plan.contest_id)
        bundle.ccvr_files[plan.contest_id].entries.append(
            CCVREntry(digest, Selection(plan.contest_id, frozenset([target])))
        )
        bundle.style_entries[pos] = BallotStyleEntry(
            style.ballot_id, style.contest_ids + (plan.contest_id,), style.locator
        )
        victim_ids.append(style.ballot_id)
    return FaultRecord(plan.kind, plan.contest_id, tuple(victim_ids))


def _inject_style_id_swap(bundle: _Bundle, plan: FaultPlan) -> FaultRecord:
    """Replace style-row identifiers with identifiers matching no ballot;
    the displaced real ballots remain in the trail, unlisted."""
    eligible = [
        pos for pos, entry in enumerate(bundle.style_entries)
        if plan.contest_id in entry.contest_ids
    ]
    if len(eligible) < plan.count:
        raise ConfigurationError("style-id-swap fault has too few eligible rows")
    picked = bundle.rng.sample(eligible, plan.count)
    victim_ids = []
    fabricated = []
    for pos in picked:
        style = bundle.style_entries[pos]
        pid = bundle.fresh_phantom_id()
        bundle.style_entries[pos] = BallotStyleEntry(pid, style.contest_ids, style.locator)
        victim_ids.append(style.ballot_id)
        fabricated.append(pid)
    return FaultRecord(plan.kind, plan.contest_id, tuple(victim_ids), tuple(fabricated))


_INJECTORS: dict[str, Callable[[_Bundle, FaultPlan], FaultRecord]] = {
    FAULT_ORPHAN: _inject_orphan,
    FAULT_MULTIPLE: _inject_multiple,
    FAULT_MISSING_CCVR: _inject_missing_ccvr,
    FAULT_PHANTOM_BALLOT: _inject_phantom_ballot,
    FAULT_PHANTOM_CONTEST: _inject_phantom_contest,
    FAULT_STYLE_ID_SWAP: _inject_style_id_swap,
}


# ---------------------------------------------------------------------------
# Trials


def lookup_revealer(lookup: LookupFile) -> Callable[[str], list[tuple[str, bytes]]]:
    def revealer(ballot_id: str) -> list[tuple[str, bytes]]:
        try:
            return reveal_salts(lookup, ballot_id)
        except NotFoundError:
            return []
    return revealer


def trail_interpreter(trail: Mapping[str, Ballot]):
    def interpreter(ballot_id: str):
        ballot = trail.get(ballot_id)
        if ballot is None:
            return False, None
        return True, ballot.selection_map()
    return interpreter


def derived_for_election(election: GeneratedElection, spec: ScenarioSpec) -> DerivedParams:
    params = AuditParams(
        risk_limit=spec.risk_limit, gamma=spec.gamma,
        error_tolerance=spec.error_tolerance, seed="probe", max_draws=spec.max_draws,
    )
    outcomes = {
        cid: compute_outcome(dict(s.reported_tallies), s)
        for cid, s in election.publication.manifest.contests.items()
    }
    n = len(election.publication.ballot_style.entries)
    return derive_params(params, diluted_margin(outcomes, n), n)


def run_audit_on_election(
    election: GeneratedElection, audit_seed: str, spec: ScenarioSpec
) -> tuple[AuditStateView, AuditSession]:
    params = AuditParams(
        risk_limit=spec.risk_limit,
        gamma=spec.gamma,
        error_tolerance=spec.error_tolerance,
        seed=audit_seed,
        max_draws=spec.max_draws,
    )
    session = AuditSession(election.publication, params)
    if session.status == BLOCKED:
        raise ConfigurationError(
            f"scenario {spec.name!r}: generated publication failed the static checks"
        )
    view = drive_session(
        session,
        lookup_revealer(election.lookup),
        trail_interpreter(election.trail),
    )
    return view, session


def run_trial(spec: ScenarioSpec, trial: int,
              election: GeneratedElection | None = None) -> TrialResult:
    token = _trial_token(spec.base_seed, trial)
    if election is None:
        election = generate_election(spec, _sub_rng(token, "generate"))
    view, _session = run_audit_on_election(election, token, spec)
    if view.status == PASSED:
        outcome = (
            OUTCOME_PASSED_AT_N0
            if view.draws_completed == view.initial_sample_size
            else OUTCOME_PASSED_ESCALATION
        )
    elif view.status == FULL_HAND_COUNT_REQUIRED:
        outcome = OUTCOME_FULL_HAND_COUNT
    else:
        raise ConfigurationError(f"trial ended in non-terminal status {view.status}")
    return TrialResult(
        trial=trial,
        outcome=outcome,
        draws_used=view.draws_completed,
        final_p_km=view.p_km,
        wrong_outcome=election.outcome_flipped,
        stopped_via=view.stopped_via,
        initial_sample_size=view.initial_sample_size,
        max_draws=view.max_draws,
    )


def _trial_batch(args: tuple[ScenarioSpec, list[int]]) -> list[TrialResult]:
    spec, indices = args
    return [run_trial(spec, i) for i in indices]


def run_trials(spec: ScenarioSpec, workers: int = 1) -> tuple[list[TrialResult], TrialSummary]:
    """Run the scenario's trials and summarize.

    Trial seeds derive from hash(base seed, trial index), so trials are
    independent yet the whole run is reproducible; results are merged by
    trial index, which keeps parallel runs deterministic too.
    """
    if spec.regenerate_per_trial:
        if workers > 1 and spec.trials > 1:
            chunks: list[list[int]] = [[] for _ in range(workers)]
            for i in range(spec.trials):
                chunks[i % workers].append(i)
            results: list[TrialResult] = []
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for batch in pool.map(_trial_batch, [(spec, c) for c in chunks if c]):
                    results.extend(batch)
            results.sort(key=lambda r: r.trial)
        else:
            results = [run_trial(spec, i) for i in range(spec.trials)]
    else:
        election = generate_election(spec, _sub_rng(spec.base_seed, "generate"))
        results = [run_trial(spec, i, election) for i in range(spec.trials)]

    wrong = [r for r in results if r.wrong_outcome]
    honest = [r for r in results if not r.wrong_outcome]
    passed_wrong = [r for r in wrong if r.outcome != OUTCOME_FULL_HAND_COUNT]
    summary = TrialSummary(
        scenario=spec.name,
        trials=len(results),
        initial_sample_size=results[0].initial_sample_size if results else 0,
        max_draws=results[0].max_draws if results else 0,
        wrong_outcome_trials=len(wrong),
        passed_at_n0=sum(r.outcome == OUTCOME_PASSED_AT_N0 for r in results),
        passed_after_escalation=sum(r.outcome == OUTCOME_PASSED_ESCALATION for r in results),
        full_hand_count=sum(r.outcome == OUTCOME_FULL_HAND_COUNT for r in results),
        empirical_risk=(len(passed_wrong) / len(wrong)) if wrong else None,
        mean_draws_honest=(
            sum(r.draws_used for r in honest) / len(honest) if honest else None
        ),
    )
    return results, summary


def render_summary(summary: TrialSummary) -> str:
    lines = [
        f"scenario {summary.scenario}: {summary.trials} trials "
        f"(n0={summary.initial_sample_size}, max draws={summary.max_draws})",
        f"  passed at initial sample : {summary.passed_at_n0}",
        f"  passed after escalation  : {summary.passed_after_escalation}",
        f"  full hand count          : {summary.full_hand_count}",
    ]
    if summary.empirical_risk is not None:
        lines.append(
            f"  empirical risk           : {summary.empirical_risk:.4f} "
            f"({summary.wrong_outcome_trials} wrong-outcome trials)"
        )
    if summary.mean_draws_honest is not None:
        lines.append(f"  mean draws (honest)      : {summary.mean_draws_honest:.2f}")
    return "\n".join(lines) + "\n"


def summary_csv(summaries: Sequence[TrialSummary]) -> str:
    header = (
        "scenario,trials,initial_sample_size,max_draws,wrong_outcome_trials,"
        "passed_at_n0,passed_after_escalation,full_hand_count,empirical_risk,"
        "mean_draws_honest"
    )
    lines = [header]
    for s in summaries:
        risk = "" if s.empirical_risk is None else f"{s.empirical_risk:.6f}"
        mean = "" if s.mean_draws_honest is None else f"{s.mean_draws_honest:.4f}"
        lines.append(
            f"{s.scenario},{s.trials},{s.initial_sample_size},{s.max_draws},"
            f"{s.wrong_outcome_trials},{s.passed_at_n0},{s.passed_after_escalation},"
            f"{s.full_hand_count},{risk},{mean}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Scenario files


def scenario_from_dict(data: Mapping) -> ScenarioSpec:
    try:
        contests = tuple(
            ContestPlan(
                contest_id=c["contest_id"],
                candidates=tuple(c["candidates"]),
                true_tallies=dict(c["true_tallies"]),
                ballot_count=int(c["ballot_count"]),
                winners_allowed=int(c.get("winners_allowed", 1)),
            )
            for c in data["contests"]
        )
        faults = tuple(
            FaultPlan(
                kind=f["kind"],
                contest_id=f["contest_id"],
                count=int(f["count"]),
                from_candidate=f.get("from_candidate"),
                to_candidate=f.get("to_candidate"),
            )
            for f in data.get("faults", [])
        )
        return ScenarioSpec(
            name=data["name"],
            total_ballots=int(data["total_ballots"]),
            contests=contests,
            faults=faults,
            trials=int(data.get("trials", 100)),
            base_seed=str(data.get("base_seed", "1")),
            risk_limit=float(data.get("risk_limit", 0.1)),
            gamma=float(data.get("gamma", 1.01)),
            error_tolerance=float(data.get("error_tolerance", 0.2)),
            max_draws=data.get("max_draws"),
            expect_wrong_outcome=bool(data.get("expect_wrong_outcome", False)),
            regenerate_per_trial=bool(data.get("regenerate_per_trial", True)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad scenario file: {exc}") from exc


def load_scenario(path: str | Path) -> ScenarioSpec:
    return scenario_from_dict(json.loads(Path(path).read_text("utf-8")))


# ---------------------------------------------------------------------------
# Fault-case coverage


@dataclass
class CaseReport:
    case: int
    fault_kind: str | None
    status: str  # "precluded" | "detected" | failure modes
    detail: str


def _coverage_scenario(fault: FaultPlan | None) -> ScenarioSpec:
    return ScenarioSpec(
        name="coverage",
        total_ballots=12,
        contests=(
            ContestPlan("mayor", ("alice", "bob"), {"alice": 7, "bob": 3}, 12),
            ContestPlan("board", ("carol", "dave"), {"carol": 5, "dave": 2}, 8),
        ),
        faults=() if fault is None else (fault,),
        trials=1,
        base_seed="coverage",
        risk_limit=0.15,
        max_draws=60,
    )


def _detect_case(fault: FaultPlan, expect_tags: Sequence[str], expect_e: int) -> CaseReport:
    """Inject a single fault, audit with successive seeds until a faulty
    row is drawn, and report the substitution the engine applied."""
    spec = _coverage_scenario(fault)
    election = generate_election(spec, _sub_rng(spec.base_seed, "generate"))
    suspects = set(election.fault_records[0].victim_ballot_ids)
    suspects |= set(election.fault_records[0].fabricated_ids)
    for attempt in range(50):
        _view, session = run_audit_on_election(election, f"coverage-{attempt}", spec)
        for evaluation in session.draws:
            if evaluation.ballot_id not in suspects or evaluation.e == 0:
                continue
            tags = {ce.tag for ce in evaluation.contests}
            matched = [tag for tag in expect_tags if tag in tags]
            if not matched or evaluation.e != expect_e:
                return CaseReport(
                    0, fault.kind, "unexpected",
                    f"evaluation tags {sorted(tags)} with e={evaluation.e}; expected "
                    f"{list(expect_tags)} with e={expect_e}",
                )
            return CaseReport(
                0, fault.kind, "detected",
                f"substitution {matched[0]} fired on ballot {evaluation.ballot_id} "
                f"with e={evaluation.e}",
            )
    return CaseReport(0, fault.kind, "not-drawn",
                      "no audit seed drew the faulty row (coverage failure)")


def fault_case_coverage() -> list[CaseReport]:
    """One report per mapping-fault case: the two structurally precluded
    ones are demonstrated as such; the audited ones run an injected fault
    through the engine and confirm the worst-case substitution fires."""
    reports: list[CaseReport] = []

    # Case 1: duplicate identifiers in the style file are rejected at build
    # time and caught by the id-uniqueness check on published data.
    try:
        ballot = Ballot("0001", (Selection("mayor", frozenset(["alice"])),))
        build_ballot_style_file([ballot, ballot])
        reports.append(CaseReport(1, None, "unexpected", "duplicate ids were accepted"))
    except MalformedInputError:
        reports.append(CaseReport(
            1, None, "precluded",
            "duplicate ballot identifiers are rejected at build time and fail "
            "the id-uniqueness check when published",
        ))

    # Case 2: one digest opening to two ballot ids needs a hash collision.
    election = generate_election(_coverage_scenario(None), _sub_rng("case2", "generate"))
    digests = [e.shrouded_id for f in election.publication.ccvr_files.values()
               for e in f.entries]
    distinct = len(set(digests)) == len(digests)
    cross_opens = 0
    ids = [r.ballot_id for r in election.lookup.entries]
    for row in election.lookup.entries[:20]:
        for other in ids[:10]:
            if other != row.ballot_id and open_commitment(row.shrouded_id, other, row.salt):
                cross_opens += 1
    if distinct and cross_opens == 0:
        reports.append(CaseReport(
            2, None, "precluded",
            "all digests are distinct and no commitment opens under a second "
            "ballot id (binding)",
        ))
    else:
        reports.append(CaseReport(2, None, "unexpected", "binding violation found"))

    # Cases 3-7 run the engine against injected faults.  Victims are chosen
    # to vote against the substitution target so a hit must show e=2.
    detections = [
        (3, FaultPlan(FAULT_PHANTOM_CONTEST, "board", 1, to_candidate="carol"),
         ["missing-contest-on-ballot"], 2),
        (4, FaultPlan(FAULT_MISSING_CCVR, "board", 1, from_candidate="dave"),
         ["extra-contest-on-ballot"], 2),
        (5, FaultPlan(FAULT_STYLE_ID_SWAP, "mayor", 1),
         ["missing-ballot"], 2),
        (6, FaultPlan(FAULT_ORPHAN, "mayor", 1, from_candidate="bob",
                      to_candidate="alice"),
         ["orphan-ccvr"], 2),
        (7, FaultPlan(FAULT_MULTIPLE, "mayor", 1, from_candidate="bob",
                      to_candidate="alice"),
         ["orphan-ccvr"], 2),
    ]
    for case, fault, tags, expect_e in detections:
        report = _detect_case(fault, tags, expect_e)
        report.case = case
        reports.append(report)
    return reports


def render_coverage(reports: Sequence[CaseReport]) -> str:
    lines = []
    for report in reports:
        kind = f" ({report.fault_kind})" if report.fault_kind else ""
        lines.append(f"case {report.case}{kind}: {report.status} - {report.detail}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Trial export (fixtures for the batch CLI and the companion UI)


def export_trial(spec: ScenarioSpec, out_dir: str | Path, trial: int = 0) -> dict:
    """Write one generated trial to disk: the publication (with the secret
    lookup file), the audit trail, and a batch interpretations file."""
    token = _trial_token(spec.base_seed, trial)
    seed_source = token if spec.regenerate_per_trial else spec.base_seed
    election = generate_election(spec, _sub_rng(seed_source, "generate"))
    out = Path(out_dir)
    digests = publish.write_publication(
        out,
        election.publication.manifest,
        election.publication.ballot_style,
        election.publication.ccvr_files,
        election.lookup,
    )
    interpretations = {
        ballot_id: {
            "found": True,
            "selections": {cid: sorted(chosen) for cid, chosen in
                           ballot.selection_map().items()},
        }
        for ballot_id, ballot in election.trail.items()
    }
    (out / "interpretations.json").write_text(
        json.dumps(interpretations, indent=1, sort_keys=True) + "\n", "utf-8"
    )
    trail_dump = {
        ballot_id: {cid: sorted(chosen) for cid, chosen in ballot.selection_map().items()}
        for ballot_id, ballot in election.trail.items()
    }
    (out / "trail.json").write_text(
        json.dumps(trail_dump, indent=1, sort_keys=True) + "\n", "utf-8"
    )
    return {"file_digests": digests, "audit_seed": token,
            "outcome_flipped": election.outcome_flipped}


# ---------------------------------------------------------------------------
# Standard wrong-outcome suite (margins 1%, 5%, 20% for every mapping-fault
# kind); heavyweight, meant for the opt-in risk sweep.


def standard_suite(trials: int = 400, base_seed: str = "suite") -> list[ScenarioSpec]:
    suite: list[ScenarioSpec] = []
    n = 1000
    margins = {"1pct": 10, "5pct": 50, "20pct": 200}

    for label, margin in margins.items():
        # one-sided record faults: true winner bob by 20; k flips make the
        # apparent margin land on the target
        k = (margin + 20) // 2
        for kind in (FAULT_CVR_MISREAD, FAULT_ORPHAN, FAULT_MULTIPLE):
            suite.append(ScenarioSpec(
                name=f"{kind}-{label}",
                total_ballots=n,
                contests=(ContestPlan("mayor", ("alice", "bob"),
                                      {"alice": 460, "bob": 480}, n),),
                faults=(FaultPlan(kind, "mayor", k,
                                  from_candidate="bob", to_candidate="alice"),),
                trials=trials,
                base_seed=f"{base_seed}-{kind}-{label}",
                expect_wrong_outcome=True,
            ))

        # removing record lines for the true winner (style rows drop the
        # contest alongside, so the counts stay consistent)
        k = margin + 20
        suite.append(ScenarioSpec(
            name=f"{FAULT_MISSING_CCVR}-{label}",
            total_ballots=n,
            contests=(
                ContestPlan("mayor", ("alice", "bob"), {"alice": 460, "bob": 480}, n),
                ContestPlan("board", ("carol", "dave"), {"carol": 600, "dave": 300}, n),
            ),
            faults=(FaultPlan(FAULT_MISSING_CCVR, "mayor", k, from_candidate="bob"),),
            trials=trials,
            base_seed=f"{base_seed}-missing-{label}",
            expect_wrong_outcome=True,
        ))

        # fabricated style rows voting for the beneficiary
        k = {"1pct": 31, "5pct": 75, "20pct": 275}[label]
        suite.append(ScenarioSpec(
            name=f"{FAULT_PHANTOM_BALLOT}-{label}",
            total_ballots=n,
            contests=(ContestPlan("mayor", ("alice", "bob"),
                                  {"alice": 460, "bob": 480}, n),),
            faults=(FaultPlan(FAULT_PHANTOM_BALLOT, "mayor", k, to_candidate="alice"),),
            trials=trials,
            base_seed=f"{base_seed}-phantom-{label}",
            expect_wrong_outcome=True,
        ))

        # fabricated voting opportunities on ballots that lack the contest
        k = margin + 20
        suite.append(ScenarioSpec(
            name=f"{FAULT_PHANTOM_CONTEST}-{label}",
            total_ballots=n,
            contests=(
                ContestPlan("mayor", ("alice", "bob"), {"alice": 600, "bob": 300}, n),
                ContestPlan("board", ("carol", "dave"), {"carol": 330, "dave": 350}, 700),
            ),
            faults=(FaultPlan(FAULT_PHANTOM_CONTEST, "board", k, to_candidate="carol"),),
            trials=trials,
            base_seed=f"{base_seed}-pcontest-{label}",
            expect_wrong_outcome=True,
        ))
    return suite
