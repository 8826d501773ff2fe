/**
 * Display formatting only.  Numbers are rendered exactly as the service
 * reported them; the glosses translate protocol outcomes into plain
 * language for observers who are not statisticians.
 */

import type { SessionState } from "./api.js";

export function displayNumber(value: number): string {
  return String(value);
}

export function bannerFor(state: SessionState): { text: string; kind: string } {
  switch (state.status) {
    case "passed":
      return { text: "Audit passed: the sample confirms every outcome", kind: "passed" };
    case "full-hand-count-required":
      return {
        text: "Full hand count required: the sample did not confirm the outcomes",
        kind: "full-hand-count",
      };
    case "blocked":
      return { text: "Audit blocked: preconditions not met", kind: "blocked" };
    case "escalating":
      return { text: "Escalating: drawing additional ballots", kind: "active" };
    case "awaiting-interpretation":
      return { text: "Draw pending: reveal salts, then enter the reading", kind: "active" };
    default:
      return { text: "Awaiting the next draw", kind: "active" };
  }
}

export const TAG_GLOSS: Record<string, string> = {
  "matched": "commitment opened and matched a published entry",
  "orphan-ccvr": "no published entry found: apparent-winner substitution applied",
  "missing-ballot": "ballot not found: runner-up substitution applied",
  "missing-contest-on-ballot":
    "contest absent from the ballot: runner-up substitution applied",
  "extra-contest-on-ballot":
    "contest not in the style entry: apparent-winner substitution applied",
};

export function tagGloss(tag: string): string {
  return TAG_GLOSS[tag] ?? tag;
}

export function allowanceGloss(state: SessionState): string {
  if (state.remaining_e1_allowance === null || state.threshold_e1_exact === null) {
    return "";
  }
  const used = state.one_vote_overstatements;
  const remaining = state.remaining_e1_allowance;
  const noun = remaining === 1 ? "overstatement" : "overstatements";
  return (
    `one-vote overstatements used: ${used}; allowance at the initial sample ` +
    `${state.threshold_e1_exact}; ${remaining} more one-vote ${noun} allowed`
  );
}

export function overstatementBadge(e: number): string {
  if (e === 0) return "e=0 (match)";
  if (e > 0) return `e=${e} (overstatement)`;
  return `e=${e} (understatement)`;
}

export function progressGloss(state: SessionState): string {
  if (state.initial_sample_size === null) return "";
  return `${state.draws_completed} of ${state.initial_sample_size} initial draws complete`;
}
