import type {
  DrawCard,
  Evaluation,
  Meta,
  SessionState,
} from "../src/api.js";

export function makeState(overrides: Partial<SessionState> = {}): SessionState {
  return {
    status: "awaiting-draw",
    terminal: false,
    draws_completed: 0,
    initial_sample_size: 33,
    max_draws: 100,
    e_counts: {},
    two_vote_overstatements: 0,
    one_vote_overstatements: 0,
    p_km: 1.0,
    log_p_km: 0.0,
    risk_limit: 0.1,
    seed: "314159",
    stopped_via: null,
    guidance: "awaiting draw 1 of the initial sample of 33",
    checks_pass: true,
    compliance_ok: true,
    pending_card: null,
    reveal_recorded: false,
    derived: {
      rho: 6.424793381195055,
      diluted_margin: "1/5",
      diluted_margin_value: 0.2,
      total_error_bound: 10.1,
      min_margin_votes: 20,
      total_ballots: 100,
    },
    threshold_e1: 1.32,
    threshold_e1_exact: "33/25",
    remaining_e1_allowance: 1,
    ...overrides,
  };
}

export function makeCard(overrides: Partial<DrawCard> = {}): DrawCard {
  return {
    j: 1,
    r: "1/4",
    index: 25,
    ballot_id: "0025",
    contest_ids: ["mayor"],
    locator: "deck 1 position 25",
    ...overrides,
  };
}

export function makeMeta(overrides: Partial<Meta> = {}): Meta {
  return {
    total_ballots: 100,
    contests: {
      mayor: { candidates: ["alice", "bob"], winners_allowed: 1, reported_ballot_count: 100 },
      board: { candidates: ["carol", "dave"], winners_allowed: 1, reported_ballot_count: 60 },
    },
    file_digests: {},
    ...overrides,
  };
}

export function makeEvaluation(overrides: Partial<Evaluation> = {}): Evaluation {
  return {
    j: 1,
    index: 25,
    ballot_id: "0025",
    ballot_found: true,
    reused: false,
    e: 0,
    epsilon: "0",
    taint: 0,
    contests: [
      {
        contest_id: "mayor",
        tag: "matched",
        shrouded_id: "ab".repeat(32),
        entry_found: true,
        record_side: ["alice"],
        human_side: ["alice"],
        notes: [],
      },
    ],
    ...overrides,
  };
}

export async function until(
  predicate: () => boolean,
  timeoutMs = 10_000,
  stepMs = 10,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (predicate()) return;
    await new Promise((resolve) => setTimeout(resolve, stepMs));
  }
  throw new Error("condition not reached in time");
}
