from fractions import Fraction
from itertools import product

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shroudaudit.errors import MalformedInputError, NoUniqueOutcomeError
from shroudaudit.model import (
    Ballot,
    ContestSpec,
    Selection,
    ballot_overstatement,
    compute_outcome,
    count_valid_votes,
    diluted_margin,
)


def spec(candidates=("a", "b"), w=1, n=100, tallies=None):
    tallies = tallies or {c: 0 for c in candidates}
    kind = "plurality" if w == 1 else "vote-for-up-to"
    return ContestSpec("race", kind, w, tuple(candidates), n, tallies)


def sel(*chosen):
    return Selection("race", frozenset(chosen))


class TestCountValidVotes:
    def test_direct_count(self):
        counts = count_valid_votes([sel("a"), sel("a"), sel("b")], spec())
        assert counts == {"a": 2, "b": 1}

    def test_overvote_counts_nothing(self):
        assert count_valid_votes([sel("a", "b")], spec()) == {"a": 0, "b": 0}

    def test_undervote_counts_nothing(self):
        assert count_valid_votes([sel()], spec()) == {"a": 0, "b": 0}

    def test_up_to_two_allows_pairs(self):
        contest = spec(candidates=("a", "b", "c"), w=2)
        assert count_valid_votes([sel("a", "b")], contest) == {"a": 1, "b": 1, "c": 0}

    def test_unknown_candidate_rejected(self):
        with pytest.raises(MalformedInputError):
            count_valid_votes([sel("zed")], spec())

    def test_wrong_contest_rejected(self):
        with pytest.raises(MalformedInputError):
            count_valid_votes([Selection("other", frozenset())], spec())


class TestComputeOutcome:
    def test_two_way(self):
        outcome = compute_outcome({"a": 60, "b": 40}, spec())
        assert outcome.winners == {"a"}
        assert outcome.pairwise_margins[("a", "b")] == 20
        assert outcome.margin_votes == 20

    def test_exact_tie_is_an_error(self):
        with pytest.raises(NoUniqueOutcomeError):
            compute_outcome({"a": 5, "b": 5}, spec(n=10))

    def test_two_winner_contest(self):
        contest = spec(candidates=("a", "b", "c"), w=2)
        outcome = compute_outcome({"a": 50, "b": 30, "c": 20}, contest)
        assert outcome.winners == {"a", "b"}
        assert outcome.pairwise_margins == {("a", "c"): 30, ("b", "c"): 10}
        assert outcome.margin_votes == 10
        assert outcome.weakest_winner == "b"
        assert outcome.runner_up == "c"

    def test_boundary_tie_with_two_winners(self):
        contest = spec(candidates=("a", "b", "c"), w=2)
        with pytest.raises(NoUniqueOutcomeError):
            compute_outcome({"a": 50, "b": 40, "c": 40}, contest)
        # a tie strictly inside the winner set is fine
        outcome = compute_outcome({"a": 50, "b": 50, "c": 40}, contest)
        assert outcome.winners == {"a", "b"}

    def test_runner_up_is_strongest_loser(self):
        outcome = compute_outcome({"a": 60, "b": 25, "c": 15}, spec(candidates=("a", "b", "c")))
        assert outcome.runner_up == "b"
        assert outcome.weakest_winner == "a"

    @given(st.permutations(["a", "b", "c", "d"]))
    def test_candidate_order_irrelevant(self, order):
        tallies = {"a": 40, "b": 30, "c": 20, "d": 10}
        contest = spec(candidates=tuple(order), n=100, tallies={c: tallies[c] for c in order})
        outcome = compute_outcome({c: tallies[c] for c in order}, contest)
        assert outcome.winners == {"a"}
        assert outcome.margin_votes == 10

    def test_brute_force_equivalence_small_plurality(self):
        """Exhaustive agreement with a direct pairwise-comparison oracle on
        every plurality election with <= 4 candidates and <= 6 single-choice
        ballots (0 encodes an undervote)."""
        for k in (2, 3, 4):
            candidates = tuple(f"c{i}" for i in range(k))
            contest = spec(candidates=candidates, n=6)
            for m in (1, 4, 6):
                for votes in product(range(k + 1), repeat=m):
                    tallies = {c: 0 for c in candidates}
                    for vote in votes:
                        if vote > 0:
                            tallies[candidates[vote - 1]] += 1
                    # oracle: the unique candidate beating every other
                    leaders = [
                        c for c in candidates
                        if all(tallies[c] > tallies[o] for o in candidates if o != c)
                    ]
                    if leaders:
                        outcome = compute_outcome(tallies, contest)
                        assert outcome.winners == {leaders[0]}
                    else:
                        with pytest.raises(NoUniqueOutcomeError):
                            compute_outcome(tallies, contest)


class TestDilutedMargin:
    def outcome(self, tallies, contest):
        return compute_outcome(tallies, contest)

    def test_single_contest(self):
        outcomes = {"race": self.outcome({"a": 60, "b": 40}, spec())}
        assert diluted_margin(outcomes, 100) == Fraction(1, 5)

    def test_minimum_rule(self):
        o1 = self.outcome({"a": 60, "b": 40}, spec())
        contest2 = ContestSpec("two", "plurality", 1, ("x", "y"), 100, {"x": 0, "y": 0})
        o2 = compute_outcome({"x": 50, "y": 45}, contest2)
        assert diluted_margin({"race": o1, "two": o2}, 100) == Fraction(1, 20)

    def test_exact_rational(self):
        outcomes = {"race": self.outcome({"a": 6751, "b": 6108}, spec(n=12860))}
        mu = diluted_margin(outcomes, 12860)
        assert mu == Fraction(643, 12860) == Fraction(1, 20)

    def test_requires_positive_population(self):
        with pytest.raises(NoUniqueOutcomeError):
            diluted_margin({}, 0)


class TestBallotOverstatement:
    def setup_method(self):
        self.contest = spec(tallies={"a": 60, "b": 40})
        self.contests = {"race": self.contest}
        self.outcomes = {"race": compute_outcome({"a": 60, "b": 40}, self.contest)}

    def test_record_winner_human_loser_is_two(self):
        e, eps = ballot_overstatement(
            {"race": {"a"}}, {"race": {"b"}}, self.contests, self.outcomes
        )
        assert e == 2
        assert eps == Fraction(2, 20)

    def test_agreement_is_zero(self):
        e, eps = ballot_overstatement(
            {"race": {"a"}}, {"race": {"a"}}, self.contests, self.outcomes
        )
        assert (e, eps) == (0, Fraction(0))

    def test_understatement_sign(self):
        # record shows an undervote, the human reads a winner vote
        e, eps = ballot_overstatement(
            {"race": set()}, {"race": {"a"}}, self.contests, self.outcomes
        )
        assert e == -1
        assert eps == Fraction(-1, 20)

    def test_contest_cover_mismatch_rejected(self):
        with pytest.raises(MalformedInputError):
            ballot_overstatement({"race": {"a"}}, {}, self.contests, self.outcomes)

    def test_empty_cover_is_zero(self):
        assert ballot_overstatement({}, {}, {}, {}) == (0, Fraction(0))

    @settings(max_examples=300)
    @given(st.data())
    def test_bounds_property(self, data):
        """e is always in [-2, 2] and eps * V_min <= 2 for every pair of
        interpretations over a random small contest."""
        k = data.draw(st.integers(2, 4))
        w = data.draw(st.integers(1, min(2, k - 1)))
        candidates = tuple(f"c{i}" for i in range(k))
        tallies = data.draw(
            st.lists(st.integers(0, 50), min_size=k, max_size=k).map(
                lambda xs: dict(zip(candidates, xs))
            )
        )
        contest = ContestSpec(
            "race", "plurality" if w == 1 else "vote-for-up-to", w,
            candidates, 200, tallies,
        )
        try:
            outcome = compute_outcome(tallies, contest)
        except NoUniqueOutcomeError:
            return
        subsets = st.sets(st.sampled_from(candidates), max_size=k).map(frozenset)
        record = data.draw(subsets)
        human = data.draw(subsets)
        e, eps = ballot_overstatement(
            {"race": record}, {"race": human}, {"race": contest}, {"race": outcome}
        )
        assert -2 <= e <= 2
        v_min = min(outcome.pairwise_margins.values())
        assert eps * v_min <= 2


def test_ballot_rejects_duplicate_contest():
    with pytest.raises(MalformedInputError):
        Ballot("0001", (sel("a"), sel("b")))


def test_contest_spec_validation():
    with pytest.raises(MalformedInputError):
        ContestSpec("race", "plurality", 2, ("a", "b", "c"), 10, {"a": 0, "b": 0, "c": 0})
    with pytest.raises(MalformedInputError):
        ContestSpec("race", "plurality", 1, ("a",), 10, {"a": 0})
    with pytest.raises(MalformedInputError):
        ContestSpec("race", "plurality", 1, ("a", "b"), 10, {"a": 11, "b": 0})
    with pytest.raises(MalformedInputError):
        ContestSpec("race", "plurality", 1, ("a", "a"), 10, {"a": 0})
