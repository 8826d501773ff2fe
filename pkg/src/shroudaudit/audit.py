"""The risk-limiting audit engine.

Covers parameter derivation, per-draw evaluation with worst-case
substitutions for every mapping fault, the initial-sample stopping rule,
and escalation under the Kaplan-Markov running product.  `AuditSession` is
the single state machine behind batch runs, the HTTP service, and the
simulator, so every consumer exercises the identical code path.

Two quantities are not defined by the stopping-rule literature this
implements and are therefore pinned here and flagged in every transcript
header: the total error bound U = 2*gamma / diluted_margin and the
smallest margin in votes V = diluted_margin * total_ballots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import AbstractSet, Callable, Mapping, Sequence

from .checks import compute_ccvr_outcomes, required_action, run_static_checks
from .commit import CommitmentScheme
from .errors import (
    ConfigurationError,
    MalformedInputError,
    ParseError,
    ProtocolViolationError,
)
from .model import ContestOutcome, ContestSpec, diluted_margin, single_vote_values
from .publish import BallotStyleEntry, Publication
from .sampler import DrawIndex, draw_index, draw_input
from .transcript import TRANSCRIPT_VERSION, TranscriptWriter

# Session statuses.  `passed` and `full-hand-count-required` are terminal.
AWAITING_DRAW = "awaiting-draw"
AWAITING_INTERPRETATION = "awaiting-interpretation"
PASSED = "passed"
ESCALATING = "escalating"
FULL_HAND_COUNT_REQUIRED = "full-hand-count-required"
BLOCKED = "blocked"

TERMINAL_STATUSES = (PASSED, FULL_HAND_COUNT_REQUIRED)

# Per-contest evaluation tags.
TAG_MATCHED = "matched"
TAG_ORPHAN = "orphan-ccvr"
TAG_MISSING_CONTEST = "missing-contest-on-ballot"
TAG_EXTRA_CONTEST = "extra-contest-on-ballot"
TAG_MISSING_BALLOT = "missing-ballot"

ERROR_BOUND_DEFINITIONS = (
    "total_error_bound=2*gamma/diluted_margin; "
    "min_margin_votes=diluted_margin*total_ballots"
)


@dataclass(frozen=True)
class AuditParams:
    risk_limit: float
    gamma: float
    error_tolerance: float
    seed: str
    max_draws: int | None = None

    def __post_init__(self):
        if not 0.0 < self.risk_limit < 1.0:
            raise ConfigurationError("risk limit must be in (0, 1)")
        if not self.gamma > 1.0:
            raise ConfigurationError("error bound inflator must exceed 1")
        if not 0.0 < self.error_tolerance < 1.0:
            raise ConfigurationError("error tolerance must be in (0, 1)")
        if self.max_draws is not None and self.max_draws < 1:
            raise ConfigurationError("maximum draw count must be positive")
        if not self.seed:
            raise ConfigurationError("a seed must be recorded before the audit starts")


@dataclass(frozen=True)
class DerivedParams:
    rho: float
    diluted_margin: Fraction
    initial_sample_size: int
    total_error_bound: float  # U
    min_margin_votes: int     # V
    max_draws: int
    total_ballots: int


def compute_rho(alpha: float, gamma: float, lam: float) -> float:
    """Sample-size scaling constant of the stopping rule.

    `lam` = 0 is permitted here (it reduces the expression to
    -ln(alpha) * 2 * gamma) so the boundary algebra stays testable, but
    audit parameters proper require lam in (0, 1).
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError("risk limit must be in (0, 1)")
    if not gamma > 1.0:
        raise ConfigurationError("error bound inflator must exceed 1")
    if not 0.0 <= lam < 1.0:
        raise ConfigurationError("error tolerance must be in [0, 1)")
    denominator = 1.0 / (2.0 * gamma) + lam * math.log1p(-1.0 / (2.0 * gamma))
    if not denominator > 0.0:
        raise ConfigurationError("degenerate parameters: nonpositive rate")
    return -math.log(alpha) / denominator


def initial_sample_size(rho: float, mu: Fraction) -> int:
    """ceil(rho / mu), computed exactly from the binary value of rho."""
    if mu <= 0:
        raise ConfigurationError("diluted margin must be positive")
    ratio = Fraction(rho) / mu
    return -(-ratio.numerator // ratio.denominator)


def default_max_draws(n0: int, total_ballots: int) -> int:
    """Bounds audit labor while keeping the full count reachable; never
    below the initial sample size."""
    return max(n0, min(total_ballots, 10 * n0))


def derive_params(params: AuditParams, mu: Fraction, total_ballots: int) -> DerivedParams:
    rho = compute_rho(params.risk_limit, params.gamma, params.error_tolerance)
    n0 = initial_sample_size(rho, mu)
    min_margin = mu * total_ballots
    if min_margin.denominator != 1:
        raise ConfigurationError("diluted margin must be an exact margin over N")
    if params.max_draws is None:
        max_draws = default_max_draws(n0, total_ballots)
    else:
        max_draws = params.max_draws
        if max_draws < n0:
            raise ConfigurationError(
                f"maximum draws {max_draws} below the initial sample size {n0}"
            )
    return DerivedParams(
        rho=rho,
        diluted_margin=mu,
        initial_sample_size=n0,
        total_error_bound=2.0 * params.gamma / float(mu),
        min_margin_votes=int(min_margin),
        max_draws=max_draws,
        total_ballots=total_ballots,
    )


def taint_of(epsilon: Fraction, min_margin_votes: int, gamma: float) -> float:
    """Margin-relative overstatement divided by the per-ballot error bound."""
    return float(epsilon) * min_margin_votes / (2.0 * gamma)


def km_log_factor(epsilon: Fraction, derived: DerivedParams, gamma: float) -> float:
    """log of the per-draw Kaplan-Markov factor (1 - 1/U) / (1 - taint)."""
    t = taint_of(epsilon, derived.min_margin_votes, gamma)
    # t <= 1/gamma < 1 by construction; anything else is an engine bug.
    assert t < 1.0, f"taint {t} >= 1"
    return math.log1p(-1.0 / derived.total_error_bound) - math.log1p(-t)


def km_p_value(
    epsilons: Sequence[Fraction], derived: DerivedParams, gamma: float
) -> float:
    """Raw Kaplan-Markov product over draws (multiplicities included),
    accumulated in log domain.  May exceed 1 (clamp only when reporting)
    and saturates to infinity rather than overflowing."""
    total = 0.0
    for eps in epsilons:
        total += km_log_factor(eps, derived, gamma)
    try:
        return math.exp(total)
    except OverflowError:
        return math.inf


def simple_stop_threshold(params: AuditParams, derived: DerivedParams) -> Fraction:
    """Allowed number of one-vote overstatements at the initial sample,
    as the exact rational value of tolerance * margin * n0."""
    return (
        Fraction(params.error_tolerance)
        * derived.diluted_margin
        * derived.initial_sample_size
    )


def simple_stop_rule(
    e_counts: Mapping[int, int], params: AuditParams, derived: DerivedParams
) -> bool:
    """Initial-sample rule: stop iff no two-vote overstatement was seen and
    one-vote overstatements do not exceed the exact real threshold."""
    if e_counts.get(2, 0) > 0:
        return False
    return e_counts.get(1, 0) <= simple_stop_threshold(params, derived)


# ---------------------------------------------------------------------------
# Draw evaluation


@dataclass(frozen=True)
class ContestEvaluation:
    contest_id: str
    tag: str
    shrouded_id: str | None
    entry_found: bool
    record_side: frozenset[str]
    human_side: frozenset[str]
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class DrawEvaluation:
    draw: DrawIndex
    ballot_id: str
    ballot_found: bool
    contests: tuple[ContestEvaluation, ...]
    e: int
    epsilon: Fraction
    taint: float
    log_factor: float
    reused: bool = False


@dataclass(frozen=True)
class DrawCard:
    """What the audit room sees for one pending draw."""

    j: int
    r: Fraction
    index: int
    ballot_id: str
    contest_ids: tuple[str, ...]
    locator: str


def _pair_overstatement(
    record_chosen: AbstractSet[str],
    human_chosen: AbstractSet[str],
    contest: ContestSpec,
    outcome: ContestOutcome,
) -> tuple[int, Fraction]:
    v = single_vote_values(record_chosen, contest)
    a = single_vote_values(human_chosen, contest)
    best_d: int | None = None
    best_rel: Fraction | None = None
    for (win, lose), pair_margin in outcome.pairwise_margins.items():
        d = v[win] - a[win] - v[lose] + a[lose]
        rel = Fraction(d, pair_margin)
        if best_d is None or d > best_d:
            best_d = d
        if best_rel is None or rel > best_rel:
            best_rel = rel
    if best_d is None:
        return 0, Fraction(0)
    return best_d, best_rel


def evaluate_draw(
    draw: DrawIndex,
    style_row: BallotStyleEntry,
    ballot_found: bool,
    human_selections: Mapping[str, AbstractSet[str]] | None,
    revealed_salts: Sequence[tuple[str, bytes]],
    ccvr_index: Mapping[str, Mapping[str, frozenset[str]]],
    contests: Mapping[str, ContestSpec],
    outcomes: Mapping[str, ContestOutcome],
    scheme: CommitmentScheme,
    digest_contest: Mapping[str, str] | None = None,
) -> DrawEvaluation:
    """Evaluate one drawn style row against the human reading, applying the
    worst-case substitutions:

    - ballot missing from the trail: the ballot is deemed to vote for the
      runner-up in every contest the style row lists;
    - contest in the style row but absent from the ballot: same runner-up
      substitution for that contest;
    - contest on the ballot but absent from the style row: the record side
      is deemed to vote for the apparent winner;
    - revealed digest absent from the contest's published file (or no salt
      revealed at all): the record side is deemed to vote for the apparent
      winner.

    "Runner-up" is the loser with the largest tally and "apparent winner"
    the winner with the smallest tally, so each substitution maximizes the
    measured overstatement.
    """
    human = dict(human_selections or {})
    if ballot_found and human_selections is None:
        human = {}
    if not ballot_found and human:
        raise MalformedInputError("a missing ballot cannot carry selections")
    for cid in human:
        if cid not in contests:
            raise MalformedInputError(f"interpretation references undeclared contest {cid!r}")

    salts_by_contest: dict[str, list[bytes]] = {}
    for cid, salt in revealed_salts:
        if cid not in contests:
            raise MalformedInputError(f"reveal references undeclared contest {cid!r}")
        salts_by_contest.setdefault(cid, []).append(salt)

    eval_contests = set(style_row.contest_ids)
    if ballot_found:
        eval_contests |= set(human)
    style_contests = set(style_row.contest_ids)

    contest_evals: list[ContestEvaluation] = []
    record_map: dict[str, frozenset[str]] = {}
    human_map: dict[str, frozenset[str]] = {}

    for cid in sorted(eval_contests):
        outcome = outcomes[cid]
        notes: list[str] = []

        if not ballot_found:
            human_side = frozenset([outcome.runner_up])
            base_tag = TAG_MISSING_BALLOT
        elif cid not in human:
            human_side = frozenset([outcome.runner_up])
            base_tag = TAG_MISSING_CONTEST
        else:
            human_side = frozenset(human[cid])
            base_tag = None

        if ballot_found and cid not in style_contests:
            record_side = frozenset([outcome.weakest_winner])
            contest_evals.append(
                ContestEvaluation(cid, TAG_EXTRA_CONTEST, None, False, record_side, human_side)
            )
            record_map[cid] = record_side
            human_map[cid] = human_side
            continue

        found: list[tuple[str, frozenset[str]]] = []
        shown_digest: str | None = None
        for salt in salts_by_contest.get(cid, ()):
            digest = scheme.commit(style_row.ballot_id, salt)
            shown_digest = digest
            chosen = ccvr_index.get(cid, {}).get(digest)
            if chosen is not None:
                found.append((digest, chosen))
            else:
                elsewhere = (digest_contest or {}).get(digest)
                if elsewhere is not None and elsewhere != cid:
                    notes.append(
                        f"digest {digest} appears in the file for contest "
                        f"{elsewhere!r}, not {cid!r}"
                    )

        if not salts_by_contest.get(cid):
            record_side = frozenset([outcome.weakest_winner])
            tag = base_tag or TAG_ORPHAN
            notes.append("no salt revealed for this contest")
            entry_found = False
            shown_digest = None
        elif not found:
            record_side = frozenset([outcome.weakest_winner])
            tag = base_tag or TAG_ORPHAN
            notes.append("revealed digest not present in the contest file")
            entry_found = False
        else:
            if len(found) > 1:
                notes.append(f"{len(found)} entries opened for one voting opportunity")
                found.sort(
                    key=lambda item: (
                        _pair_overstatement(item[1], human_side, contests[cid], outcome),
                        item[0],
                    ),
                    reverse=True,
                )
            shown_digest, record_side = found[0]
            tag = base_tag or TAG_MATCHED
            entry_found = True

        contest_evals.append(
            ContestEvaluation(cid, tag, shown_digest, entry_found, record_side,
                              human_side, tuple(notes))
        )
        record_map[cid] = record_side
        human_map[cid] = human_side

    e_max: int | None = None
    eps_max: Fraction | None = None
    for cid in record_map:
        d, rel = _pair_overstatement(record_map[cid], human_map[cid], contests[cid], outcomes[cid])
        if e_max is None or d > e_max:
            e_max = d
        if eps_max is None or rel > eps_max:
            eps_max = rel
    e = e_max if e_max is not None else 0
    epsilon = eps_max if eps_max is not None else Fraction(0)

    return DrawEvaluation(
        draw=draw,
        ballot_id=style_row.ballot_id,
        ballot_found=ballot_found,
        contests=tuple(contest_evals),
        e=e,
        epsilon=epsilon,
        taint=0.0,      # filled in by the session, which knows the derived params
        log_factor=0.0,
        reused=False,
    )


# ---------------------------------------------------------------------------
# Session state machine


@dataclass
class AuditStateView:
    status: str
    draws_completed: int
    initial_sample_size: int | None
    max_draws: int | None
    e_counts: dict[int, int]
    p_km: float
    log_p_km: float
    risk_limit: float
    threshold_e1: float | None
    pending_j: int | None
    pending_index: int | None
    pending_ballot_id: str | None
    seed: str
    stopped_via: str | None
    guidance: str
    derived: DerivedParams | None = field(default=None, repr=False)


class AuditSession:
    """Single logical owner of one audit's state.

    Draw evaluation is pure; all mutations go through `next_draw`,
    `record_reveal` and `record_interpretation`, each appended to the
    transcript before the call returns.  Repeated draw indices are
    evaluated once and their recorded result is applied with multiplicity,
    so callers never re-interpret a ballot they have already read.
    """

    def __init__(
        self,
        publication: Publication,
        params: AuditParams,
        transcript: TranscriptWriter | None = None,
        compliance_ok: bool = True,
        draw_source: Callable[[int], DrawIndex] | None = None,
        _quiet: bool = False,
    ):
        self.publication = publication
        self.params = params
        self._writer = transcript
        self._quiet = _quiet
        self._draw_source = draw_source

        self.check_report = run_static_checks(publication)
        action = required_action(self.check_report)
        self.compliance_ok = compliance_ok

        self._style = publication.ballot_style
        self.total_ballots = len(self._style.entries)
        self.scheme = publication.manifest.scheme()
        self.contests = publication.manifest.contests

        self._draws: list[DrawEvaluation] = []
        self._e_counts: dict[int, int] = {}
        self._log_p = 0.0
        self._next_j = 1
        self._pending: DrawCard | None = None
        self._pending_reveal: list[tuple[str, bytes]] | None = None
        self._by_index: dict[int, DrawEvaluation] = {}
        self.stopped_via: str | None = None

        if action.kind != "proceed" or not compliance_ok:
            self.status = BLOCKED
            self.outcomes: dict[str, ContestOutcome] = {}
            self.derived: DerivedParams | None = None
            self._append(self._header_record(blocked=True, action=action.kind))
            return

        self.outcomes = compute_ccvr_outcomes(publication)
        mu = diluted_margin(self.outcomes, self.total_ballots)
        self.derived = derive_params(params, mu, self.total_ballots)
        self._ccvr_index: dict[str, dict[str, frozenset[str]]] = {}
        self._digest_contest: dict[str, str] = {}
        for cid, ccvr_file in publication.ccvr_files.items():
            index = {}
            for entry in ccvr_file.entries:
                index[entry.shrouded_id] = entry.selection.chosen
                self._digest_contest.setdefault(entry.shrouded_id, cid)
            self._ccvr_index[cid] = index

        self.status = AWAITING_DRAW
        self._log_alpha = math.log(params.risk_limit)
        self._append(self._header_record())
        self._append({"type": "seed", "seed": params.seed})

    # -- transcript plumbing

    def _append(self, record: dict) -> None:
        if self._writer is not None and not self._quiet:
            self._writer.append(record)

    def _header_record(self, blocked: bool = False, action: str = "proceed") -> dict:
        record = {
            "type": "header",
            "version": TRANSCRIPT_VERSION,
            "params": {
                "risk_limit": self.params.risk_limit,
                "gamma": self.params.gamma,
                "error_tolerance": self.params.error_tolerance,
                "max_draws": self.params.max_draws,
            },
            "error_bound_definitions": ERROR_BOUND_DEFINITIONS,
            "total_ballots": self.total_ballots,
            "id_length": self.publication.manifest.id_length,
            "file_digests": self.publication.file_digests,
            "checks_pass": self.check_report.overall_pass,
            "required_action": action,
            "compliance_ok": self.compliance_ok,
        }
        if blocked:
            record["blocked"] = True
            return record
        record["contests"] = {
            cid: {
                "winners_allowed": spec.winners_allowed,
                "candidates": list(spec.candidates),
            }
            for cid, spec in self.contests.items()
        }
        record["outcomes"] = {
            cid: {
                "winners": sorted(outcome.winners),
                "losers": sorted(outcome.losers),
                "pairwise_margins": sorted(
                    [win, lose, margin]
                    for (win, lose), margin in outcome.pairwise_margins.items()
                ),
                "margin_votes": outcome.margin_votes,
                "weakest_winner": outcome.weakest_winner,
                "runner_up": outcome.runner_up,
            }
            for cid, outcome in self.outcomes.items()
        }
        record["derived"] = {
            "rho": self.derived.rho,
            "diluted_margin": str(self.derived.diluted_margin),
            "initial_sample_size": self.derived.initial_sample_size,
            "total_error_bound": self.derived.total_error_bound,
            "min_margin_votes": self.derived.min_margin_votes,
            "max_draws": self.derived.max_draws,
        }
        return record

    # -- event API

    def _require(self, *statuses: str) -> None:
        if self.status not in statuses:
            if self.status in TERMINAL_STATUSES:
                raise ProtocolViolationError(f"session is terminal ({self.status})")
            raise ProtocolViolationError(
                f"event not permitted while session is {self.status}"
            )

    def _draw(self, j: int) -> DrawIndex:
        if self._draw_source is not None:
            return self._draw_source(j)
        return draw_index(self.params.seed, j, self.total_ballots)

    def next_draw(self) -> DrawCard | None:
        """Issue the next draw.  Repeated indices are auto-evaluated from
        their recorded result; returns None when auto-evaluation drove the
        session to a terminal state."""
        self._require(AWAITING_DRAW, ESCALATING)
        while True:
            j = self._next_j
            draw = self._draw(j)
            self._next_j += 1
            self._append({
                "type": "draw",
                "j": j,
                "input": draw_input(self.params.seed, j),
                "r": str(draw.r),
                "index": draw.index,
            })
            previous = self._by_index.get(draw.index)
            if previous is None:
                row = self._style.row(draw.index)
                self._pending = DrawCard(
                    j=j,
                    r=draw.r,
                    index=draw.index,
                    ballot_id=row.ballot_id,
                    contest_ids=row.contest_ids,
                    locator=row.locator,
                )
                self._pending_reveal = None
                self.status = AWAITING_INTERPRETATION
                return self._pending
            repeat = replace(previous, draw=draw, reused=True)
            self._apply_evaluation(repeat)
            if self.status in TERMINAL_STATUSES:
                return None

    def record_reveal(self, j: int, salts: Sequence[tuple[str, bytes]]) -> None:
        """Official role: the salts for every voting opportunity of the
        drawn ballot.  Must precede the interpretation for the same draw."""
        self._require(AWAITING_INTERPRETATION)
        assert self._pending is not None
        if j != self._pending.j:
            raise ProtocolViolationError(
                f"reveal for draw {j}, but draw {self._pending.j} is pending"
            )
        if self._pending_reveal is not None:
            raise ProtocolViolationError(f"salts for draw {j} were already revealed")
        validated = []
        for cid, salt in salts:
            if not isinstance(salt, bytes) or len(salt) != self.scheme.salt_bytes:
                raise MalformedInputError("revealed salt has the wrong length")
            validated.append((cid, salt))
        self._pending_reveal = validated
        self._append({
            "type": "reveal",
            "j": j,
            "salts": [{"contest_id": cid, "salt_hex": salt.hex()} for cid, salt in validated],
        })

    def record_interpretation(
        self,
        j: int,
        ballot_found: bool,
        selections: Mapping[str, AbstractSet[str]] | None,
    ) -> DrawEvaluation:
        """Auditor role: the human reading of the retrieved ballot, or the
        fact that no such ballot exists."""
        self._require(AWAITING_INTERPRETATION)
        assert self._pending is not None
        if j != self._pending.j:
            raise ProtocolViolationError(
                f"interpretation for draw {j}, but draw {self._pending.j} is pending"
            )
        if self._pending_reveal is None:
            raise ProtocolViolationError(
                "the salt reveal must be recorded before the interpretation"
            )
        self._append({
            "type": "interpretation",
            "j": j,
            "ballot_found": ballot_found,
            "selections": None if selections is None else {
                cid: sorted(chosen) for cid, chosen in selections.items()
            },
        })
        draw = DrawIndex(j=self._pending.j, r=self._pending.r, index=self._pending.index)
        evaluation = evaluate_draw(
            draw=draw,
            style_row=self._style.row(self._pending.index),
            ballot_found=ballot_found,
            human_selections=selections,
            revealed_salts=self._pending_reveal,
            ccvr_index=self._ccvr_index,
            contests=self.contests,
            outcomes=self.outcomes,
            scheme=self.scheme,
            digest_contest=self._digest_contest,
        )
        log_factor = km_log_factor(evaluation.epsilon, self.derived, self.params.gamma)
        evaluation = replace(
            evaluation,
            taint=taint_of(evaluation.epsilon, self.derived.min_margin_votes, self.params.gamma),
            log_factor=log_factor,
        )
        self._by_index[draw.index] = evaluation
        self._pending = None
        self._pending_reveal = None
        self._apply_evaluation(evaluation)
        return evaluation

    def _apply_evaluation(self, evaluation: DrawEvaluation) -> None:
        self._draws.append(evaluation)
        self._e_counts[evaluation.e] = self._e_counts.get(evaluation.e, 0) + 1
        self._log_p += evaluation.log_factor
        self._update_status()
        self._append(self._evaluation_record(evaluation))

    def _update_status(self) -> None:
        n = len(self._draws)
        n0 = self.derived.initial_sample_size
        if n < n0:
            self.status = AWAITING_DRAW
            return
        if n == n0 and simple_stop_rule(self._e_counts, self.params, self.derived):
            self.status = PASSED
            self.stopped_via = "initial-sample-rule"
            return
        if self._log_p <= self._log_alpha:
            self.status = PASSED
            self.stopped_via = "km-p-value"
            return
        if n >= self.derived.max_draws:
            self.status = FULL_HAND_COUNT_REQUIRED
            return
        self.status = ESCALATING

    def _evaluation_record(self, evaluation: DrawEvaluation) -> dict:
        return {
            "type": "evaluation",
            "j": evaluation.draw.j,
            "index": evaluation.draw.index,
            "ballot_id": evaluation.ballot_id,
            "ballot_found": evaluation.ballot_found,
            "reused": evaluation.reused,
            "contests": [
                {
                    "contest_id": ce.contest_id,
                    "tag": ce.tag,
                    "shrouded_id": ce.shrouded_id,
                    "entry_found": ce.entry_found,
                    "record_side": sorted(ce.record_side),
                    "human_side": sorted(ce.human_side),
                    "notes": list(ce.notes),
                }
                for ce in evaluation.contests
            ],
            "e": evaluation.e,
            "epsilon": str(evaluation.epsilon),
            "taint": evaluation.taint,
            "log_factor_hex": evaluation.log_factor.hex(),
            "log_p_km_hex": self._log_p.hex(),
            "p_km": self.reported_p_km(),
            "draws_completed": len(self._draws),
            "status": self.status,
        }

    # -- introspection

    def reported_p_km(self) -> float:
        """Running product, clamped to 1 for reporting; the raw log-domain
        value is kept for monotonicity analysis.  The raw product can
        overflow a float on heavily tainted escalations; the clamp makes
        that irrelevant here."""
        if self._log_p >= 0.0:
            return 1.0
        return math.exp(self._log_p)

    @property
    def draws(self) -> tuple[DrawEvaluation, ...]:
        return tuple(self._draws)

    @property
    def log_p_km(self) -> float:
        return self._log_p

    def state(self) -> AuditStateView:
        derived = self.derived
        threshold = (
            float(simple_stop_threshold(self.params, derived)) if derived else None
        )
        return AuditStateView(
            status=self.status,
            draws_completed=len(self._draws),
            initial_sample_size=derived.initial_sample_size if derived else None,
            max_draws=derived.max_draws if derived else None,
            e_counts=dict(self._e_counts),
            p_km=self.reported_p_km(),
            log_p_km=self._log_p,
            risk_limit=self.params.risk_limit,
            threshold_e1=threshold,
            pending_j=self._pending.j if self._pending else None,
            pending_index=self._pending.index if self._pending else None,
            pending_ballot_id=self._pending.ballot_id if self._pending else None,
            seed=self.params.seed,
            stopped_via=self.stopped_via,
            guidance=self._guidance(),
            derived=derived,
        )

    def _guidance(self) -> str:
        if self.status == BLOCKED:
            if not self.compliance_ok:
                return "blocked: the compliance precondition is not satisfied"
            return "blocked: the published files failed the pre-audit checks"
        n = len(self._draws)
        n0 = self.derived.initial_sample_size
        if self.status == PASSED:
            rule = ("initial-sample rule" if self.stopped_via == "initial-sample-rule"
                    else "P-value at or below the risk limit")
            return f"audit passed after {n} draws ({rule})"
        if self.status == FULL_HAND_COUNT_REQUIRED:
            return (
                f"no confirmation after {n} draws: count all remaining ballots by hand"
            )
        if self.status == AWAITING_INTERPRETATION:
            return (
                f"draw {self._pending.j}: reveal salts and enter the human reading "
                f"of ballot {self._pending.ballot_id}"
            )
        if n < n0:
            return f"awaiting draw {n + 1} of the initial sample of {n0}"
        remaining = self.derived.max_draws - n
        return (
            f"escalating: P-value {self.reported_p_km():.6g} must reach "
            f"{self.params.risk_limit:g}; {remaining} draws remain before a full hand count"
        )


def drive_session(
    session: AuditSession,
    revealer: Callable[[str], Sequence[tuple[str, bytes]]],
    interpreter: Callable[[str], tuple[bool, Mapping[str, AbstractSet[str]] | None]],
) -> AuditStateView:
    """Run a session to termination using data-backed official and auditor
    roles.  Batch CLI runs and the simulator both go through this, so they
    exercise exactly the engine the interactive service drives."""
    while session.status in (AWAITING_DRAW, ESCALATING):
        card = session.next_draw()
        if card is None:
            break
        session.record_reveal(card.j, revealer(card.ballot_id))
        found, selections = interpreter(card.ballot_id)
        session.record_interpretation(card.j, found, selections)
    return session.state()

# ---------------------------------------------------------------------------
# Transcript replay


@dataclass
class ReplayReport:
    ok: bool
    issues: list[str]
    draws_verified: int
    final_status: str | None
    final_log_p_hex: str | None


def _params_from_records(records: Sequence[dict]) -> AuditParams:
    header = records[0]
    seed_records = [r for r in records if r.get("type") == "seed"]
    if header.get("blocked"):
        seed = seed_records[0]["seed"] if seed_records else "unused"
    else:
        if not seed_records:
            raise ParseError("transcript missing the seed record")
        seed = seed_records[0]["seed"]
    return AuditParams(
        risk_limit=header["params"]["risk_limit"],
        gamma=header["params"]["gamma"],
        error_tolerance=header["params"]["error_tolerance"],
        max_draws=header["params"]["max_draws"],
        seed=seed,
    )


class _ReplayBoundary(Exception):
    """The replay reached the end of the recorded draw stream."""


def _replay_with_publication(
    records: Sequence[dict], publication: Publication, issues: list[str]
) -> AuditSession | None:
    """Re-run the engine over the recorded reveal/interpretation events and
    require the regenerated record stream to equal the transcript exactly."""
    from .transcript import MemoryTranscript

    header = records[0]
    try:
        params = _params_from_records(records)
    except (ParseError, KeyError, ConfigurationError) as exc:
        issues.append(str(exc))
        return None
    if header.get("file_digests") and publication.file_digests != header["file_digests"]:
        issues.append("published file digests differ from the transcript header")

    mirror = MemoryTranscript()
    session = AuditSession(publication, params, transcript=mirror)
    if session.status == BLOCKED:
        if not header.get("blocked"):
            issues.append("publication fails the checks but the transcript is not blocked")
        return session
    if header.get("blocked"):
        issues.append("transcript is blocked but the publication passes the checks")
        return session

    draw_js = [r["j"] for r in records if r.get("type") == "draw"]
    last_j = max(draw_js) if draw_js else 0
    events = [r for r in records if r.get("type") in ("reveal", "interpretation")]
    position = 0

    # A crash can cut the transcript inside one draw batch (a repeated index
    # writes its draw and evaluation records, then the hunt for the next
    # fresh card continues).  Bounding the draw stream at the recorded end
    # leaves the replayed session exactly where the durable state stopped.
    def bounded_source(j: int) -> DrawIndex:
        if j > last_j:
            raise _ReplayBoundary
        return draw_index(params.seed, j, session.total_ballots)

    session._draw_source = bounded_source
    try:
        while session.status in (AWAITING_DRAW, ESCALATING) and session._next_j <= last_j:
            try:
                card = session.next_draw()
            except _ReplayBoundary:
                break
            if card is None:
                break
            if position < len(events) and events[position]["type"] == "reveal" \
                    and events[position]["j"] == card.j:
                salts = [(item["contest_id"], bytes.fromhex(item["salt_hex"]))
                         for item in events[position]["salts"]]
                session.record_reveal(card.j, salts)
                position += 1
            else:
                break
            if position < len(events) and events[position]["type"] == "interpretation" \
                    and events[position]["j"] == card.j:
                record = events[position]
                selections = record["selections"]
                mapped = None if selections is None else {
                    cid: frozenset(chosen) for cid, chosen in selections.items()
                }
                session.record_interpretation(card.j, record["ballot_found"], mapped)
                position += 1
            else:
                break
    except (ProtocolViolationError, MalformedInputError) as exc:
        issues.append(f"replay failed while re-running the engine: {exc}")
        return session
    finally:
        session._draw_source = None
    if position != len(events):
        issues.append("transcript events arrived out of protocol order")
        return session

    regenerated = mirror.records
    recorded = [dict(r) for r in records]
    for i in range(max(len(regenerated), len(recorded))):
        if i >= len(regenerated):
            issues.append(f"transcript record {i + 1} has no counterpart in the replay")
            break
        if i >= len(recorded):
            issues.append(f"replay produced an extra record ({regenerated[i].get('type')})")
            break
        if regenerated[i] != recorded[i]:
            rtype = recorded[i].get("type")
            issues.append(
                f"record {i + 1} ({rtype}) differs between the transcript and the replay"
            )
            break
    return session


def resume_session(
    publication: Publication,
    records: Sequence[dict],
    transcript: TranscriptWriter | None = None,
) -> AuditSession:
    """Rebuild a live session from its transcript.  Every draw and
    evaluation is re-derived through the engine and checked against the
    recorded values; the resulting state is identical to what the original
    process held, so a crashed service can continue where it stopped."""
    issues: list[str] = []
    if not records or records[0].get("type") != "header":
        raise ParseError("transcript does not start with a header")
    session = _replay_with_publication(records, publication, issues)
    if session is None or issues:
        raise ParseError("transcript replay failed: " + "; ".join(issues))
    session._writer = transcript
    return session


def verify_transcript(
    records: Sequence[dict], publication: Publication | None = None
) -> ReplayReport:
    """Re-derive the audit from a transcript and report any divergence.

    With the publication files this replays the real engine and compares
    the regenerated record stream bit-for-bit.  Without them, the draws,
    revealed commitments, overstatement arithmetic, running P-value and
    status transitions are all recomputed from the transcript alone.
    """
    issues: list[str] = []
    if not records or records[0].get("type") != "header":
        return ReplayReport(False, ["transcript does not start with a header"], 0, None, None)
    if publication is not None:
        session = _replay_with_publication(records, publication, issues)
        final_status = session.status if session is not None else None
        final_hex = session.log_p_km.hex() if session is not None else None
        draws = len(session.draws) if session is not None else 0
        return ReplayReport(not issues, issues, draws, final_status, final_hex)
    return _replay_standalone(records, issues)


def _replay_standalone(records: Sequence[dict], issues: list[str]) -> ReplayReport:
    header = records[0]
    if header.get("blocked"):
        return ReplayReport(True, [], 0, BLOCKED, None)
    try:
        params = _params_from_records(records)
        contests = {
            cid: ContestSpec(
                contest_id=cid,
                kind="plurality" if info["winners_allowed"] == 1 else "vote-for-up-to",
                winners_allowed=info["winners_allowed"],
                candidates=tuple(info["candidates"]),
                reported_ballot_count=header["total_ballots"],
                reported_tallies={c: 0 for c in info["candidates"]},
            )
            for cid, info in header["contests"].items()
        }
        outcomes = {
            cid: ContestOutcome(
                contest_id=cid,
                winners=frozenset(info["winners"]),
                losers=frozenset(info["losers"]),
                pairwise_margins={
                    (win, lose): margin for win, lose, margin in info["pairwise_margins"]
                },
                margin_votes=info["margin_votes"],
                weakest_winner=info["weakest_winner"],
                runner_up=info["runner_up"],
            )
            for cid, info in header["outcomes"].items()
        }
        derived = DerivedParams(
            rho=header["derived"]["rho"],
            diluted_margin=Fraction(header["derived"]["diluted_margin"]),
            initial_sample_size=header["derived"]["initial_sample_size"],
            total_error_bound=header["derived"]["total_error_bound"],
            min_margin_votes=header["derived"]["min_margin_votes"],
            max_draws=header["derived"]["max_draws"],
            total_ballots=header["total_ballots"],
        )
        scheme = CommitmentScheme(id_length=header["id_length"])
    except (KeyError, ValueError, ParseError, ConfigurationError) as exc:
        return ReplayReport(False, [f"malformed header: {exc}"], 0, None, None)

    log_p = 0.0
    log_alpha = math.log(params.risk_limit)
    e_counts: dict[int, int] = {}
    draws_verified = 0
    final_status: str | None = None
    reveals_by_j: dict[int, list[dict]] = {}

    for position, record in enumerate(records[1:], start=2):
        rtype = record.get("type")
        if rtype == "seed":
            continue
        if rtype == "draw":
            expected = draw_index(params.seed, record["j"], header["total_ballots"])
            if str(expected.r) != record["r"] or expected.index != record["index"]:
                issues.append(f"draw {record['j']}: recorded draw does not match the seed")
            continue
        if rtype == "reveal":
            reveals_by_j[record["j"]] = record["salts"]
            continue
        if rtype == "interpretation":
            continue
        if rtype != "evaluation":
            issues.append(f"record {position}: unknown type {rtype!r}")
            continue

        # Recompute the overstatement and the commitment digests.
        e_best: int | None = None
        eps_best: Fraction | None = None
        revealed = reveals_by_j.get(record["j"], [])
        for ce in record["contests"]:
            cid = ce["contest_id"]
            if ce["shrouded_id"] is not None and not record["reused"]:
                candidates = {
                    scheme.commit(record["ballot_id"], bytes.fromhex(item["salt_hex"]))
                    for item in revealed
                    if item["contest_id"] == cid
                }
                if ce["shrouded_id"] not in candidates:
                    issues.append(
                        f"draw {record['j']}: shrouded id for {cid!r} does not match "
                        f"any revealed salt"
                    )
            d, rel = _pair_overstatement(
                frozenset(ce["record_side"]), frozenset(ce["human_side"]),
                contests[cid], outcomes[cid],
            )
            if e_best is None or d > e_best:
                e_best = d
            if eps_best is None or rel > eps_best:
                eps_best = rel
        e = e_best if e_best is not None else 0
        eps = eps_best if eps_best is not None else Fraction(0)
        if e != record["e"]:
            issues.append(f"draw {record['j']}: recomputed e={e} vs transcript {record['e']}")
        if str(eps) != record["epsilon"]:
            issues.append(
                f"draw {record['j']}: recomputed epsilon={eps} vs transcript {record['epsilon']}"
            )
        log_p += km_log_factor(eps, derived, header["params"]["gamma"])
        if log_p.hex() != record["log_p_km_hex"]:
            issues.append(f"draw {record['j']}: P-value trajectory diverges")
        e_counts[e] = e_counts.get(e, 0) + 1
        draws_verified += 1

        n = draws_verified
        n0 = derived.initial_sample_size
        if n < n0:
            expected_status = AWAITING_DRAW
        elif n == n0 and simple_stop_rule(e_counts, params, derived):
            expected_status = PASSED
        elif log_p <= log_alpha:
            expected_status = PASSED
        elif n >= derived.max_draws:
            expected_status = FULL_HAND_COUNT_REQUIRED
        else:
            expected_status = ESCALATING
        if expected_status != record["status"]:
            issues.append(
                f"draw {record['j']}: status {record['status']} inconsistent with the "
                f"stopping rules (expected {expected_status})"
            )
        final_status = record["status"]

    return ReplayReport(not issues, issues, draws_verified, final_status,
                        log_p.hex() if draws_verified else None)
