"""Command-line frontend for the publication pipeline, the observer
checks, the sampler, batch audits, transcript replay, simulation, and the
local session service.

Exit codes: 0 success (audit passed / checks allow proceeding), 2 data or
configuration error, 3 protocol violation, 10 full hand count required,
11 audit blocked pending official correction, 12 checks mandate a hand
count of discrepant contests.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from . import checks, publish, sampler, sim
from .audit import (
    BLOCKED,
    FULL_HAND_COUNT_REQUIRED,
    PASSED,
    AuditParams,
    AuditSession,
    compute_rho,
    default_max_draws,
    drive_session,
    initial_sample_size,
    verify_transcript,
)
from .checks import compute_ccvr_outcomes
from .errors import (
    AuditToolError,
    ConfigurationError,
    MalformedInputError,
    ParseError,
    ProtocolViolationError,
)
from .model import CVR, ContestSpec, Selection, count_valid_votes, diluted_margin
from .transcript import FileTranscript, read_transcript

EXIT_OK = 0
EXIT_DATA_ERROR = 2
EXIT_PROTOCOL = 3
EXIT_FULL_HAND_COUNT = 10
EXIT_BLOCKED = 11
EXIT_HAND_COUNT_MANDATED = 12


def _add_param_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--risk-limit", "--alpha", dest="risk_limit", type=float,
                        default=0.1, help="risk limit in (0,1); default 0.1")
    parser.add_argument("--gamma", type=float, default=1.01,
                        help="error bound inflator > 1; default 1.01")
    parser.add_argument("--lambda", dest="error_tolerance", type=float, default=0.2,
                        help="error tolerance in (0,1); default 0.2")
    parser.add_argument("--max-draws", type=int, default=None,
                        help="draw budget before a full hand count")


def _seed_from_args(args: argparse.Namespace) -> str:
    if getattr(args, "seed_dice", None):
        return sampler.parse_dice_seed(args.seed_dice)
    if getattr(args, "seed", None):
        return args.seed
    raise ConfigurationError("a seed is required (--seed or --seed-dice)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shroudaudit",
        description="ballot-level risk-limiting audit toolkit with shrouded "
                    "per-contest vote records",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_publish = sub.add_parser("publish", help="split records and publish all files")
    p_publish.add_argument("--election", required=True,
                           help="JSON file with contests and whole-ballot records")
    p_publish.add_argument("--out-dir", required=True)
    p_publish.add_argument("--test-salt-seed", type=int, default=None,
                           help="deterministic salts for fixtures; NEVER for real "
                                "elections")

    p_check = sub.add_parser("check", help="run the five pre-audit checks")
    p_check.add_argument("--files-dir", required=True)
    p_check.add_argument("--json", dest="json_out", default=None,
                         help="also write the machine-readable report here")

    p_params = sub.add_parser("params", help="derived audit parameters")
    _add_param_flags(p_params)
    p_params.add_argument("--margin", type=float, default=None,
                          help="diluted margin; alternative to --files-dir")
    p_params.add_argument("--ballots", type=int, default=None,
                          help="total ballots (with --margin)")
    p_params.add_argument("--files-dir", default=None)

    p_draw = sub.add_parser("draw", help="verifiable draw listing for a seed")
    p_draw.add_argument("--seed", default=None)
    p_draw.add_argument("--seed-dice", default=None,
                        help="die-roll transcript, digits with separators")
    p_draw.add_argument("--count", type=int, required=True)
    p_draw.add_argument("--start", type=int, default=1)
    p_draw.add_argument("--ballots", type=int, default=None)
    p_draw.add_argument("--files-dir", default=None)

    p_audit = sub.add_parser("audit", help="batch audit from recorded interpretations")
    _add_param_flags(p_audit)
    p_audit.add_argument("--files-dir", required=True)
    p_audit.add_argument("--lookup", default=None,
                         help="secret lookup file (defaults to files-dir/lookup.csv)")
    p_audit.add_argument("--interpretations", required=True,
                         help="JSON: ballot_id -> {found, selections}")
    p_audit.add_argument("--seed", default=None)
    p_audit.add_argument("--seed-dice", default=None)
    p_audit.add_argument("--transcript", default=None)
    p_audit.add_argument("--compliance-failed", action="store_true",
                         help="mark the compliance precondition as not satisfied")

    p_sim = sub.add_parser("simulate", help="Monte Carlo trials from a scenario file")
    p_sim.add_argument("--scenario", default=None)
    p_sim.add_argument("--trials", type=int, default=None, help="override trial count")
    p_sim.add_argument("--workers", type=int, default=1)
    p_sim.add_argument("--out-csv", default=None)
    p_sim.add_argument("--coverage", action="store_true",
                       help="run the mapping-fault case coverage report instead")
    p_sim.add_argument("--export-trial-dir", default=None,
                       help="write one generated trial (files, trail, "
                            "interpretations) to this directory")

    p_replay = sub.add_parser("replay", help="verify a transcript end to end")
    p_replay.add_argument("--transcript", required=True)
    p_replay.add_argument("--files-dir", default=None)

    p_serve = sub.add_parser("serve", help="local HTTP session service")
    p_serve.add_argument("--files-dir", required=True)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8765)
    p_serve.add_argument("--transcript-dir", default=None,
                         help="directory for session transcripts "
                              "(defaults to files-dir/transcripts)")

    return parser


# ---------------------------------------------------------------------------
# Subcommands


def _load_election_input(path: str) -> tuple[dict[str, ContestSpec], list[CVR], list[str]]:
    data = json.loads(Path(path).read_text("utf-8"))
    cvrs = []
    locators = []
    for i, record in enumerate(data["cvrs"]):
        selections = tuple(
            Selection(cid, frozenset(chosen))
            for cid, chosen in record["selections"].items()
        )
        cvrs.append(CVR(record["ballot_id"], selections))
        locators.append(record.get("locator") or f"trail position {i + 1}")

    contests: dict[str, ContestSpec] = {}
    for entry in data["contests"]:
        cid = entry["contest_id"]
        winners_allowed = int(entry.get("winners_allowed", 1))
        candidates = tuple(entry["candidates"])
        kind = entry.get("kind", "plurality" if winners_allowed == 1 else "vote-for-up-to")
        in_contest = [
            sel for cvr in cvrs for sel in cvr.selections if sel.contest_id == cid
        ]
        reported_count = int(entry.get("reported_ballot_count", len(in_contest)))
        if "reported_tallies" in entry:
            tallies = {c: int(v) for c, v in entry["reported_tallies"].items()}
        else:
            draft = ContestSpec(cid, kind, winners_allowed, candidates,
                                reported_count, {c: 0 for c in candidates})
            tallies = count_valid_votes(in_contest, draft)
        contests[cid] = ContestSpec(cid, kind, winners_allowed, candidates,
                                    reported_count, tallies)
    return contests, cvrs, locators


def cmd_publish(args: argparse.Namespace) -> int:
    contests, cvrs, locators = _load_election_input(args.election)
    if args.test_salt_seed is not None:
        rand_bytes = random.Random(args.test_salt_seed).randbytes
        print("warning: deterministic test salts in use; unfit for a real election",
              file=sys.stderr)
    else:
        import secrets
        rand_bytes = secrets.token_bytes
    id_lengths = {len(c.ballot_id) for c in cvrs}
    if len(id_lengths) != 1:
        raise MalformedInputError("ballot identifiers must all have the same length")
    ccvr_files, lookup = publish.split_cvrs(cvrs, contests, rand_bytes)
    style = publish.build_ballot_style_file(cvrs, locators)
    manifest = publish.build_manifest(contests, len(cvrs), id_lengths.pop())
    digests = publish.write_publication(args.out_dir, manifest, style, ccvr_files, lookup)
    for name in sorted(digests):
        print(f"{digests[name]}  {name}")
    print(f"secret lookup file written to {Path(args.out_dir) / publish.LOOKUP_FILENAME}; "
          f"do not publish it", file=sys.stderr)
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    publication = publish.load_publication(args.files_dir)
    report = checks.run_static_checks(publication)
    sys.stdout.write(checks.render_report(report))
    if args.json_out:
        Path(args.json_out).write_text(
            json.dumps(checks.report_to_json(report), indent=1, sort_keys=True) + "\n",
            "utf-8",
        )
    action = checks.required_action(report)
    if action.kind == "proceed":
        return EXIT_OK
    if action.kind == "hand-count":
        return EXIT_HAND_COUNT_MANDATED
    return EXIT_BLOCKED


def cmd_params(args: argparse.Namespace) -> int:
    from fractions import Fraction

    total: int | None
    if args.files_dir:
        publication = publish.load_publication(args.files_dir)
        outcomes = compute_ccvr_outcomes(publication)
        total = len(publication.ballot_style.entries)
        mu = diluted_margin(outcomes, total)
    elif args.margin is not None:
        if args.ballots:
            total = args.ballots
            mu = Fraction(round(args.margin * total), total)
        else:
            total = None
            mu = Fraction(str(args.margin))
    else:
        raise ConfigurationError("provide --files-dir or --margin")
    rho = compute_rho(args.risk_limit, args.gamma, args.error_tolerance)
    n0 = initial_sample_size(rho, mu)
    print(f"rho   = {rho:.6f}")
    print(f"mu    = {mu} ({float(mu):.6f})")
    print(f"n0    = {n0}")
    print(f"U     = {2.0 * args.gamma / float(mu):.6f}")
    if total is not None:
        margin_votes = mu * total
        print(f"V     = {int(margin_votes) if margin_votes.denominator == 1 else float(margin_votes)}")
        print(f"D     = {args.max_draws if args.max_draws else default_max_draws(n0, total)}")
    return EXIT_OK


def cmd_draw(args: argparse.Namespace) -> int:
    seed = _seed_from_args(args)
    if args.files_dir:
        publication = publish.load_publication(args.files_dir)
        total = len(publication.ballot_style.entries)
    elif args.ballots:
        total = args.ballots
    else:
        raise ConfigurationError("provide --ballots or --files-dir")
    print("j\tinput\tr\tindex")
    for draw in sampler.draw_sequence(seed, total, args.count, args.start):
        print(f"{draw.j}\t{sampler.draw_input(seed, draw.j)}\t{draw.r}\t{draw.index}")
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    seed = _seed_from_args(args)
    publication = publish.load_publication(args.files_dir)
    lookup_path = Path(args.lookup) if args.lookup else Path(args.files_dir) / publish.LOOKUP_FILENAME
    lookup = publish.parse_lookup(lookup_path.read_text("utf-8"), path=str(lookup_path))
    unresolved = lookup.resolve_contests(publication.ccvr_files)
    if unresolved:
        print(f"warning: {len(unresolved)} lookup rows match no published entry",
              file=sys.stderr)

    raw = json.loads(Path(args.interpretations).read_text("utf-8"))

    def interpreter(ballot_id: str):
        record = raw.get(ballot_id)
        if record is None or not record.get("found", False):
            return False, None
        return True, {
            cid: frozenset(chosen)
            for cid, chosen in record.get("selections", {}).items()
        }

    params = AuditParams(
        risk_limit=args.risk_limit,
        gamma=args.gamma,
        error_tolerance=args.error_tolerance,
        seed=seed,
        max_draws=args.max_draws,
    )
    writer = FileTranscript(args.transcript) if args.transcript else None
    session = AuditSession(publication, params, transcript=writer,
                           compliance_ok=not args.compliance_failed)
    if session.status == BLOCKED:
        print(session.state().guidance)
        return EXIT_BLOCKED

    view = drive_session(session, sim.lookup_revealer(lookup), interpreter)
    print(f"status        : {view.status}")
    print(f"draws         : {view.draws_completed} (initial sample {view.initial_sample_size})")
    print(f"overstatements: two-vote={view.e_counts.get(2, 0)} "
          f"one-vote={view.e_counts.get(1, 0)}")
    print(f"P_KM          : {view.p_km:.6g} (risk limit {view.risk_limit:g})")
    print(view.guidance)
    if view.status == PASSED:
        return EXIT_OK
    if view.status == FULL_HAND_COUNT_REQUIRED:
        return EXIT_FULL_HAND_COUNT
    return EXIT_PROTOCOL


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.coverage:
        reports = sim.fault_case_coverage()
        sys.stdout.write(sim.render_coverage(reports))
        bad = [r for r in reports if r.status not in ("precluded", "detected")]
        return EXIT_OK if not bad else EXIT_DATA_ERROR
    if not args.scenario:
        raise ConfigurationError("provide --scenario (or --coverage)")
    spec = sim.load_scenario(args.scenario)
    if args.trials is not None:
        from dataclasses import replace
        spec = replace(spec, trials=args.trials)
    if args.export_trial_dir:
        info = sim.export_trial(spec, args.export_trial_dir)
        print(json.dumps(info, indent=1, sort_keys=True))
        return EXIT_OK
    _results, summary = sim.run_trials(spec, workers=args.workers)
    sys.stdout.write(sim.render_summary(summary))
    if args.out_csv:
        Path(args.out_csv).write_text(sim.summary_csv([summary]), "utf-8")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    records = read_transcript(args.transcript)
    publication = publish.load_publication(args.files_dir) if args.files_dir else None
    report = verify_transcript(records, publication)
    mode = "with published files" if publication is not None else "transcript-only"
    if report.ok:
        print(f"replay OK ({mode}): {report.draws_verified} draws verified, "
              f"final status {report.final_status}")
        return EXIT_OK
    print(f"replay MISMATCH ({mode}):")
    for issue in report.issues:
        print(f"  - {issue}")
    return EXIT_DATA_ERROR


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    transcript_dir = args.transcript_dir or str(Path(args.files_dir) / "transcripts")
    app = create_app(args.files_dir, transcript_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


_COMMANDS = {
    "publish": cmd_publish,
    "check": cmd_check,
    "params": cmd_params,
    "draw": cmd_draw,
    "audit": cmd_audit,
    "simulate": cmd_simulate,
    "replay": cmd_replay,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ProtocolViolationError as exc:
        print(f"protocol violation: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ParseError, MalformedInputError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR
    except AuditToolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
