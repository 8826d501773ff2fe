"""Acceptance suite: one test per acceptance criterion, each printing a
PASS/FAIL line (run with `pytest tests/test_acceptance.py -v -s`).

The heavy criteria (honest-election behavior, empirical risk) run
thousands of full end-to-end audits and take minutes to tens of minutes.
"""

import math
import secrets
import time
from collections import defaultdict
from fractions import Fraction

import mpmath as mp
import pytest

from shroudaudit import sim
from shroudaudit.audit import (
    FULL_HAND_COUNT_REQUIRED,
    PASSED,
    AuditParams,
    AuditSession,
    compute_rho,
    initial_sample_size,
    verify_transcript,
)
from shroudaudit.commit import commit_to, open_commitment
from shroudaudit.transcript import MemoryTranscript

from conftest import build_election
from test_audit import drive, forced_draws, one_vote_overstatement_election
import test_checks


class _Criterion:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        verdict = "PASS" if exc_type is None else "FAIL"
        print(f"\nACCEPTANCE {verdict} [{elapsed:.1f}s] {self.name}", flush=True)
        return False


# ---------------------------------------------------------------------------
# 1. Sample-size table


def test_criterion_sample_size_table():
    with _Criterion("sample-size table matches the arbitrary-precision oracle"):
        start = time.perf_counter()
        rho = compute_rho(0.1, 1.01, 0.2)
        n0_05 = initial_sample_size(rho, Fraction(1, 20))
        n0_20 = initial_sample_size(rho, Fraction(1, 5))
        elapsed = time.perf_counter() - start
        assert elapsed < 1.0

        mp.mp.dps = 50
        alpha, gamma, lam = mp.mpf("0.1"), mp.mpf("1.01"), mp.mpf("0.2")
        oracle = -mp.log(alpha) / (1 / (2 * gamma) + lam * mp.log(1 - 1 / (2 * gamma)))
        assert abs(rho - float(oracle)) / float(oracle) < 1e-6  # 6 significant digits
        assert int(mp.ceil(oracle / mp.mpf("0.05"))) == n0_05 == 129
        assert int(mp.ceil(oracle / mp.mpf("0.2"))) == n0_20 == 33


# ---------------------------------------------------------------------------
# 2. Honest-election behavior


def test_criterion_honest_elections_stop_at_initial_sample():
    with _Criterion("1000 honest elections (N=10000, margin 5%) all stop at n0"):
        spec = sim.ScenarioSpec(
            name="honest-10k",
            total_ballots=10_000,
            contests=(sim.ContestPlan("mayor", ("alice", "bob"),
                                      {"alice": 5150, "bob": 4650}, 10_000),),
            trials=1000,
            base_seed="honest-criterion",
        )
        results, summary = sim.run_trials(spec)
        assert summary.initial_sample_size == 129
        assert summary.trials == 1000
        assert summary.passed_at_n0 == 1000
        assert all(r.draws_used == 129 for r in results)
        assert all(r.stopped_via == "initial-sample-rule" for r in results)


# ---------------------------------------------------------------------------
# 3. Risk limit


RISK_BOUND = 0.1 + 3 * math.sqrt(0.1 * 0.9 / 1000)  # ~0.1285

RISK_SCENARIOS = [
    sim.ScenarioSpec(
        name="flip-cvr-misread",
        total_ballots=1000,
        contests=(sim.ContestPlan("mayor", ("alice", "bob"),
                                  {"alice": 430, "bob": 500}, 1000),),
        faults=(sim.FaultPlan("cvr-misread", "mayor", 60,
                              from_candidate="bob", to_candidate="alice"),),
        trials=1000, base_seed="risk-misread", expect_wrong_outcome=True,
    ),
    sim.ScenarioSpec(
        name="flip-orphans",
        total_ballots=1000,
        contests=(sim.ContestPlan("mayor", ("alice", "bob"),
                                  {"alice": 430, "bob": 500}, 1000),),
        faults=(sim.FaultPlan("orphan", "mayor", 60,
                              from_candidate="bob", to_candidate="alice"),),
        trials=1000, base_seed="risk-orphan", expect_wrong_outcome=True,
    ),
    sim.ScenarioSpec(
        name="flip-phantom-ballots",
        total_ballots=950,
        contests=(sim.ContestPlan("mayor", ("alice", "bob"),
                                  {"alice": 430, "bob": 500}, 950),),
        faults=(sim.FaultPlan("phantom-ballot", "mayor", 140,
                              to_candidate="alice"),),
        trials=1000, base_seed="risk-phantom", expect_wrong_outcome=True,
    ),
    sim.ScenarioSpec(
        name="flip-missing-records",
        total_ballots=1000,
        contests=(
            sim.ContestPlan("mayor", ("alice", "bob"),
                            {"alice": 450, "bob": 500}, 1000),
            sim.ContestPlan("board", ("carol", "dave"),
                            {"carol": 600, "dave": 300}, 1000),
        ),
        faults=(sim.FaultPlan("missing-ccvr", "mayor", 80,
                              from_candidate="bob"),),
        trials=1000, base_seed="risk-missing", expect_wrong_outcome=True,
    ),
]


@pytest.mark.parametrize("spec", RISK_SCENARIOS, ids=lambda s: s.name)
def test_criterion_risk_limit(spec):
    with _Criterion(f"empirical risk <= {RISK_BOUND:.4f} for {spec.name}"):
        results, summary = sim.run_trials(spec)
        assert summary.wrong_outcome_trials == 1000
        assert summary.empirical_risk is not None
        print(f"\n  {spec.name}: empirical risk {summary.empirical_risk:.4f} "
              f"(n0={summary.initial_sample_size}, D={summary.max_draws})")
        assert summary.empirical_risk <= RISK_BOUND


# ---------------------------------------------------------------------------
# 4. Small-instance exhaustive oracle


def _row_evaluations(election, params):
    """Evaluate every style row through the real engine (one forced draw)."""
    total = len(election.publication.ballot_style.entries)
    revealer = sim.lookup_revealer(election.lookup)
    interpreter = sim.trail_interpreter(election.trail)
    evaluations = []
    for index in range(1, total + 1):
        session = AuditSession(election.publication, params,
                               draw_source=forced_draws([index], total))
        card = session.next_draw()
        session.record_reveal(card.j, revealer(card.ballot_id))
        found, selections = interpreter(card.ballot_id)
        evaluation = session.record_interpretation(card.j, found, selections)
        evaluations.append((evaluation.e, evaluation.epsilon))
    return evaluations


def _exact_stop_probability(class_info, params, derived):
    """Exact probability that the audit stops without a full hand count,
    by dynamic programming over draw-count states (draws are exchangeable:
    both stopping rules depend only on per-class counts).  All arithmetic
    is rational.  Returns (stop probability, smallest relative gap between
    any evaluated running product and the risk limit)."""
    total = sum(count for count, _e, _eps in class_info)
    gamma = Fraction(str(params.gamma))
    alpha = Fraction(str(params.risk_limit))
    lam = Fraction(str(params.error_tolerance))
    mu = derived.diluted_margin
    big_u = 2 * gamma / mu
    v = derived.min_margin_votes
    factors = [
        (1 - 1 / big_u) / (1 - eps * v / (2 * gamma)) for _c, _e, eps in class_info
    ]
    n0 = derived.initial_sample_size
    max_draws = derived.max_draws
    threshold = lam * mu * n0

    k = len(class_info)
    states = {tuple([0] * k): Fraction(1)}
    stopped = Fraction(0)
    full_count = Fraction(0)
    min_gap = None
    for n in range(1, max_draws + 1):
        grown = defaultdict(Fraction)
        for counts, probability in states.items():
            for ci in range(k):
                class_size = class_info[ci][0]
                nxt = list(counts)
                nxt[ci] += 1
                grown[tuple(nxt)] += probability * Fraction(class_size, total)
        states = {}
        for counts, probability in grown.items():
            stop = False
            if n >= n0:
                step8 = False
                if n == n0:
                    e2 = sum(c for ci, c in enumerate(counts) if class_info[ci][1] == 2)
                    e1 = sum(c for ci, c in enumerate(counts) if class_info[ci][1] == 1)
                    step8 = e2 == 0 and Fraction(e1) <= threshold
                if step8:
                    stop = True
                else:
                    p_km = Fraction(1)
                    for ci, count in enumerate(counts):
                        if count:
                            p_km *= factors[ci] ** count
                    gap = abs(p_km - alpha) / alpha
                    if min_gap is None or gap < min_gap:
                        min_gap = gap
                    stop = p_km <= alpha
            if stop:
                stopped += probability
            elif n == max_draws:
                full_count += probability
            else:
                states[counts] = probability
    assert not states
    assert stopped + full_count == 1
    return stopped, min_gap


class _SequenceExhausted(Exception):
    pass


def _run_forced_sequence(election, params, indices, total):
    """Drive a real session along a forced index sequence; returns its
    status once the sequence is consumed (or a terminal state hit)."""
    def source(j):
        if j > len(indices):
            raise _SequenceExhausted
        index = indices[j - 1]
        return forced_draws([index], total)(j)

    session = AuditSession(election.publication, params, draw_source=source)
    revealer = sim.lookup_revealer(election.lookup)
    interpreter = sim.trail_interpreter(election.trail)
    try:
        while session.status not in (PASSED, FULL_HAND_COUNT_REQUIRED):
            card = session.next_draw()
            if card is None:
                break
            session.record_reveal(card.j, revealer(card.ballot_id))
            found, selections = interpreter(card.ballot_id)
            session.record_interpretation(card.j, found, selections)
    except _SequenceExhausted:
        pass
    return session.status, len(session.draws)


def _engine_tree_stop_probability(election, params, classes, max_draws):
    """Exhaustive enumeration over all draw sequences (as class
    representatives), each driven through the real engine; exact stop
    probability with early termination on terminal prefixes."""
    total = len(election.publication.ballot_style.entries)
    stop_probability = Fraction(0)

    def walk(prefix, probability):
        nonlocal stop_probability
        status, _draws = _run_forced_sequence(
            election, params, [classes[ci][1] for ci in prefix], total
        )
        if status == PASSED:
            stop_probability += probability
            return
        if status == FULL_HAND_COUNT_REQUIRED:
            return
        if len(prefix) == max_draws:
            raise AssertionError("sequence of maximum length must be terminal")
        for ci, (size, _rep) in enumerate(classes):
            walk(prefix + [ci], probability * Fraction(size, total))

    walk([], Fraction(1))
    return stop_probability


def _oracle_config(name, spec, expect_classes):
    token = sim._sub_rng(spec.base_seed, "generate")
    election = sim.generate_election(spec, token)
    params = AuditParams(
        risk_limit=spec.risk_limit, gamma=spec.gamma,
        error_tolerance=spec.error_tolerance, seed="oracle", max_draws=spec.max_draws,
    )
    evaluations = _row_evaluations(election, params)
    groups = defaultdict(list)
    for index, key in enumerate(evaluations, start=1):
        groups[key].append(index)
    class_info = [(len(rows), e, eps) for (e, eps), rows in sorted(groups.items())]
    assert sorted((count, e) for count, e, _ in class_info) == sorted(expect_classes), (
        name, class_info)
    probe = AuditSession(election.publication, params)
    return election, params, probe.derived, class_info, groups


ORACLE_CONFIGS = [
    # (name, scenario, expected (class size, e) pairs)
    (
        "misread-2-of-8",
        sim.ScenarioSpec(
            name="oracle-misread", total_ballots=8,
            contests=(sim.ContestPlan("mayor", ("alice", "bob"),
                                      {"alice": 3, "bob": 5}, 8),),
            faults=(sim.FaultPlan("cvr-misread", "mayor", 2,
                                  from_candidate="bob", to_candidate="alice"),),
            trials=1, base_seed="oracle-a", risk_limit=0.5,
            expect_wrong_outcome=True,
        ),
        [(6, 0), (2, 2)],
    ),
    (
        "orphan-2-of-8",
        sim.ScenarioSpec(
            name="oracle-orphan", total_ballots=8,
            contests=(sim.ContestPlan("mayor", ("alice", "bob"),
                                      {"alice": 3, "bob": 5}, 8),),
            faults=(sim.FaultPlan("orphan", "mayor", 2,
                                  from_candidate="bob", to_candidate="alice"),),
            trials=1, base_seed="oracle-b", risk_limit=0.5,
            expect_wrong_outcome=True,
        ),
        [(6, 0), (2, 2)],
    ),
    (
        "misread-3-of-8-wide-margin",
        sim.ScenarioSpec(
            name="oracle-misread-3", total_ballots=8,
            contests=(sim.ContestPlan("mayor", ("alice", "bob"),
                                      {"alice": 3, "bob": 5}, 8),),
            faults=(sim.FaultPlan("cvr-misread", "mayor", 3,
                                  from_candidate="bob", to_candidate="alice"),),
            trials=1, base_seed="oracle-c", risk_limit=0.3,
            expect_wrong_outcome=True,
        ),
        [(5, 0), (3, 2)],
    ),
    (
        "misread-2-of-8-escalation-window",
        sim.ScenarioSpec(
            name="oracle-misread-d12", total_ballots=8,
            contests=(sim.ContestPlan("mayor", ("alice", "bob"),
                                      {"alice": 3, "bob": 5}, 8),),
            faults=(sim.FaultPlan("cvr-misread", "mayor", 2,
                                  from_candidate="bob", to_candidate="alice"),),
            trials=1, base_seed="oracle-d", risk_limit=0.5, max_draws=12,
            expect_wrong_outcome=True,
        ),
        [(6, 0), (2, 2)],
    ),
    (
        "phantom-2-rows",
        sim.ScenarioSpec(
            name="oracle-phantom", total_ballots=6,
            contests=(sim.ContestPlan("mayor", ("alice", "bob"),
                                      {"alice": 2, "bob": 3}, 6),),
            faults=(sim.FaultPlan("phantom-ballot", "mayor", 2,
                                  to_candidate="alice"),),
            trials=1, base_seed="oracle-e", risk_limit=0.7,
            expect_wrong_outcome=True,
        ),
        [(6, 0), (2, 2)],
    ),
]


def test_criterion_small_instance_oracle():
    with _Criterion("exhaustive small-instance oracle: stop probability <= risk limit"):
        for name, spec, expect_classes in ORACLE_CONFIGS:
            election, params, derived, class_info, groups = _oracle_config(
                name, spec, expect_classes
            )
            assert derived.max_draws <= 12
            assert derived.initial_sample_size <= derived.max_draws
            exact, min_gap = _exact_stop_probability(class_info, params, derived)
            print(f"\n  {name}: exact stop probability {float(exact):.6f} "
                  f"(risk limit {params.risk_limit})")
            assert exact <= Fraction(str(params.risk_limit))
            # no evaluated running product sits on the risk-limit boundary,
            # so exact-rational and float-engine decisions cannot diverge
            assert min_gap is None or min_gap > Fraction(1, 10**9)

            if name == "misread-2-of-8":
                classes = [(count, rows[0]) for (key, rows), (count, _e, _eps) in
                           zip(sorted(groups.items()), class_info)]
                tree = _engine_tree_stop_probability(
                    election, params, classes, derived.max_draws
                )
                assert tree == exact  # the real engine agrees sequence by sequence

            if name in ("misread-2-of-8", "orphan-2-of-8"):
                mc_spec = sim.ScenarioSpec(
                    name=spec.name, total_ballots=spec.total_ballots,
                    contests=spec.contests, faults=spec.faults,
                    trials=1500, base_seed=spec.base_seed,
                    risk_limit=spec.risk_limit, max_draws=spec.max_draws,
                    expect_wrong_outcome=True, regenerate_per_trial=False,
                )
                _results, summary = sim.run_trials(mc_spec)
                sigma = math.sqrt(float(exact) * (1 - float(exact)) / 1500)
                assert abs(summary.empirical_risk - float(exact)) <= 4 * sigma + 0.005


# ---------------------------------------------------------------------------
# 5. Static-check corpus


def test_criterion_static_check_corpus():
    with _Criterion("each check 1-5 failed by exactly one minimal mutation; "
                    "honest files pass all five"):
        election = build_election()
        from shroudaudit import publish as publish_mod
        texts = (
            publish_mod.serialize_manifest(election.manifest),
            publish_mod.serialize_ballot_style(election.style),
            {cid: publish_mod.serialize_ccvr(f) for cid, f in election.ccvr_files.items()},
        )
        test_checks.test_honest_files_pass_all_five(texts)
        test_checks.test_check1_entry_count(texts)
        test_checks.test_check2_outcome_mismatch(texts)
        test_checks.test_check3_duplicate_digest_across_files(texts)
        test_checks.test_check4_style_listing_count(texts)
        test_checks.test_check5_duplicate_ballot_id(texts)


# ---------------------------------------------------------------------------
# 6. Commitment round trips and transcript replay


def test_criterion_commitments_and_replay():
    with _Criterion("1e6 commit/open round trips verify; transcript replay "
                    "reproduces the running P-value bit-for-bit"):
        for i in range(1_000_000):
            ballot_id = str(i).zfill(7)
            salt = secrets.token_bytes(16)
            assert open_commitment(commit_to(ballot_id, salt), ballot_id, salt)

        election = build_election()
        writer = MemoryTranscript()
        session = AuditSession(
            election.publication,
            AuditParams(risk_limit=0.1, gamma=1.01, error_tolerance=0.2, seed="replay"),
            transcript=writer,
        )
        drive(session, election)
        assert session.status == PASSED
        with_files = verify_transcript(writer.records, election.publication)
        assert with_files.ok, with_files.issues
        assert with_files.final_log_p_hex == session.log_p_km.hex()
        standalone = verify_transcript(writer.records)
        assert standalone.ok, standalone.issues
        assert standalone.final_log_p_hex == session.log_p_km.hex()


# ---------------------------------------------------------------------------
# 7. Kaplan-Markov monotonicity


def test_criterion_km_monotonicity():
    with _Criterion("every clean draw multiplies the running product by "
                    "exactly (1 - 1/U), to ulp-scale tolerance in log domain"):
        fixture, victim_row = one_vote_overstatement_election()
        total = len(fixture.style.entries)
        clean = [i for i in range(1, total + 1) if i != victim_row]
        session = AuditSession(
            fixture.publication,
            AuditParams(risk_limit=0.3, gamma=1.01, error_tolerance=0.2, seed="mono"),
            draw_source=forced_draws([victim_row] + clean, total),
        )
        drive(session, fixture)
        assert session.status == PASSED
        assert session.stopped_via == "km-p-value"

        factor = math.log1p(-1.0 / session.derived.total_error_bound)
        running = 0.0
        clean_draws = 0
        for evaluation in session.draws:
            before = running
            running += evaluation.log_factor
            if evaluation.e == 0:
                clean_draws += 1
                tolerance = 2 * math.ulp(max(1.0, abs(running)))
                assert abs((running - before) - factor) <= tolerance
        assert clean_draws >= session.derived.initial_sample_size
        assert running == session.log_p_km
