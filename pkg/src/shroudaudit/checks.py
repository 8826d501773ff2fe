"""Pre-audit consistency verification, runnable by any observer from the
published files alone.

Five checks: per-contest entry counts, outcome agreement (winner sets, not
vote totals), global uniqueness of shrouded identifiers, per-contest ballot
style counts, and ballot id uniqueness.  All five always run so officials
get a complete correction list in one pass; violations are data, never
exceptions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import NoUniqueOutcomeError
from .model import ContestOutcome, compute_outcome, count_valid_votes
from .publish import Publication, ccvr_filename

CHECK_DESCRIPTIONS = {
    1: "each per-contest file has as many entries as ballots reported cast",
    2: "each per-contest file shows the reported winner set",
    3: "shrouded identifiers are unique across all per-contest files",
    4: "ballot style lines listing each contest match its reported count",
    5: "ballot identifiers in the style file are unique",
}


@dataclass
class CheckResult:
    check_id: int
    description: str
    passed: bool
    failures: list[str] = field(default_factory=list)


@dataclass
class CheckReport:
    results: list[CheckResult]
    warnings: list[str] = field(default_factory=list)
    outcome_mismatch_contests: list[str] = field(default_factory=list)
    blocking_failure: bool = False

    @property
    def overall_pass(self) -> bool:
        return all(result.passed for result in self.results)

    def result(self, check_id: int) -> CheckResult:
        return self.results[check_id - 1]


@dataclass(frozen=True)
class RequiredAction:
    kind: str  # "proceed" | "hand-count" | "blocked"
    hand_count_contests: tuple[str, ...] = ()


def compute_ccvr_outcomes(publication: Publication) -> dict[str, ContestOutcome]:
    """Winner sets and margins per contest, tallied from the published
    per-contest files.  Raises on ties; the audit has no outcome to confirm
    then."""
    outcomes = {}
    for cid, spec in publication.manifest.contests.items():
        selections = [entry.selection for entry in publication.ccvr_files[cid].entries]
        tallies = count_valid_votes(selections, spec)
        outcomes[cid] = compute_outcome(tallies, spec)
    return outcomes


def run_static_checks(publication: Publication) -> CheckReport:
    manifest = publication.manifest
    results = {i: CheckResult(i, CHECK_DESCRIPTIONS[i], True) for i in CHECK_DESCRIPTIONS}
    warnings: list[str] = []
    mismatch_contests: list[str] = []

    # 1: per-contest entry counts.
    for cid, spec in manifest.contests.items():
        count = len(publication.ccvr_files[cid].entries)
        if count != spec.reported_ballot_count:
            results[1].failures.append(
                f"{ccvr_filename(cid)}: {count} entries, reported {spec.reported_ballot_count}"
            )

    # 2: outcome agreement, winner sets only.
    for cid, spec in manifest.contests.items():
        selections = [entry.selection for entry in publication.ccvr_files[cid].entries]
        tallies = count_valid_votes(selections, spec)
        try:
            file_outcome = compute_outcome(tallies, spec)
        except NoUniqueOutcomeError as exc:
            results[2].failures.append(f"contest {cid!r}: {exc}")
            mismatch_contests.append(cid)
            continue
        try:
            reported_outcome = compute_outcome(spec.reported_tallies, spec)
        except NoUniqueOutcomeError as exc:
            results[2].failures.append(f"contest {cid!r}: reported results have no unique outcome: {exc}")
            mismatch_contests.append(cid)
            continue
        if file_outcome.winners != reported_outcome.winners:
            results[2].failures.append(
                f"contest {cid!r}: file winners {sorted(file_outcome.winners)} != "
                f"reported winners {sorted(reported_outcome.winners)}"
            )
            mismatch_contests.append(cid)
        elif tallies != dict(spec.reported_tallies):
            warnings.append(
                f"contest {cid!r}: vote totals differ from the reported tallies "
                f"(winner sets agree, so this does not block the audit)"
            )

    # 3: global digest uniqueness.
    locations: dict[str, list[str]] = {}
    for cid, ccvr_file in publication.ccvr_files.items():
        for offset, entry in enumerate(ccvr_file.entries):
            locations.setdefault(entry.shrouded_id, []).append(
                f"{ccvr_filename(cid)} line {offset + 2}"
            )
    for digest, places in sorted(locations.items()):
        if len(places) > 1:
            results[3].failures.append(f"shrouded id {digest} appears at {'; '.join(places)}")

    # 4: style lines listing each contest.
    listing: dict[str, int] = {cid: 0 for cid in manifest.contests}
    unknown_contests: set[str] = set()
    for entry in publication.ballot_style.entries:
        for cid in entry.contest_ids:
            if cid in listing:
                listing[cid] += 1
            else:
                unknown_contests.add(cid)
    for cid, spec in manifest.contests.items():
        if listing[cid] != spec.reported_ballot_count:
            results[4].failures.append(
                f"contest {cid!r}: {listing[cid]} style lines list it, reported "
                f"{spec.reported_ballot_count}"
            )
    for cid in sorted(unknown_contests):
        results[4].failures.append(f"style file lists undeclared contest {cid!r}")

    # 5: ballot id uniqueness.
    positions: dict[str, list[int]] = {}
    for offset, entry in enumerate(publication.ballot_style.entries):
        positions.setdefault(entry.ballot_id, []).append(offset + 2)
    for ballot_id, lines in sorted(positions.items()):
        if len(lines) > 1:
            results[5].failures.append(
                f"ballot id {ballot_id} on lines {', '.join(map(str, lines))}"
            )
    if len(publication.ballot_style.entries) != manifest.total_ballots:
        results[5].failures.append(
            f"style file has {len(publication.ballot_style.entries)} lines, "
            f"manifest declares {manifest.total_ballots} ballots"
        )

    for result in results.values():
        result.passed = not result.failures

    report = CheckReport(
        results=[results[i] for i in sorted(results)],
        warnings=warnings,
        outcome_mismatch_contests=mismatch_contests,
    )
    report.blocking_failure = any(
        not report.result(i).passed for i in (1, 3, 4, 5)
    )
    return report


def required_action(report: CheckReport) -> RequiredAction:
    """What the check outcome mandates: proceed, hand count the discrepant
    contests, or block the audit until the official corrects the files."""
    if report.blocking_failure:
        return RequiredAction("blocked", tuple(report.outcome_mismatch_contests))
    if report.outcome_mismatch_contests:
        return RequiredAction("hand-count", tuple(report.outcome_mismatch_contests))
    return RequiredAction("proceed")


def render_report(report: CheckReport) -> str:
    lines = []
    for result in report.results:
        status = "PASS" if result.passed else "FAIL"
        lines.append(f"check {result.check_id} [{status}] {result.description}")
        for failure in result.failures:
            lines.append(f"    - {failure}")
    for warning in report.warnings:
        lines.append(f"warning: {warning}")
    action = required_action(report)
    if action.kind == "proceed":
        lines.append("all checks passed: the audit may start")
    elif action.kind == "hand-count":
        lines.append(
            "outcome mismatch: full hand count required for contest(s) "
            + ", ".join(action.hand_count_contests)
        )
    else:
        lines.append("audit blocked: the official must correct the published files")
    return "\n".join(lines) + "\n"


def report_to_json(report: CheckReport) -> dict:
    action = required_action(report)
    return {
        "checks": [
            {
                "id": result.check_id,
                "description": result.description,
                "passed": result.passed,
                "failures": result.failures,
            }
            for result in report.results
        ],
        "warnings": report.warnings,
        "overall_pass": report.overall_pass,
        "required_action": {
            "kind": action.kind,
            "hand_count_contests": list(action.hand_count_contests),
        },
    }
