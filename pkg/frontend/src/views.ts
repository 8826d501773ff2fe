/**
 * DOM rendering.  Every view is a pure function of the server state (plus
 * the election metadata); reloading mid-session reproduces the identical
 * view from the API alone.
 */

import type {
  DrawCard,
  Evaluation,
  Meta,
  SelectionEntry,
  SessionState,
} from "./api.js";
import {
  allowanceGloss,
  bannerFor,
  displayNumber,
  overstatementBadge,
  progressGloss,
  tagGloss,
} from "./format.js";

function el(
  tag: string,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElement {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  for (const child of children) {
    node.append(child);
  }
  return node;
}

export function renderBanner(state: SessionState): HTMLElement {
  const banner = bannerFor(state);
  return el("div", { id: "banner", class: `banner ${banner.kind}` }, [banner.text]);
}

export function renderProgressPanel(state: SessionState): HTMLElement {
  const rows: (Node | string)[] = [];
  rows.push(el("div", { id: "progress-gloss" }, [progressGloss(state)]));
  rows.push(
    el("div", {}, [
      "draws completed: ",
      el("span", { id: "draws-done" }, [displayNumber(state.draws_completed)]),
      " / initial sample ",
      el("span", { id: "n0" }, [
        state.initial_sample_size === null ? "-" : displayNumber(state.initial_sample_size),
      ]),
      " / budget ",
      el("span", { id: "max-draws" }, [
        state.max_draws === null ? "-" : displayNumber(state.max_draws),
      ]),
    ]),
  );
  rows.push(
    el("div", {}, [
      "running P-value: ",
      el("span", { id: "p-km" }, [displayNumber(state.p_km)]),
      " vs risk limit ",
      el("span", { id: "risk-limit" }, [displayNumber(state.risk_limit)]),
    ]),
  );
  rows.push(
    el("div", {}, [
      "two-vote overstatements: ",
      el("span", { id: "count-e2" }, [displayNumber(state.two_vote_overstatements)]),
      ", one-vote overstatements: ",
      el("span", { id: "count-e1" }, [displayNumber(state.one_vote_overstatements)]),
    ]),
  );
  rows.push(el("div", { id: "allowance-gloss" }, [allowanceGloss(state)]));
  rows.push(el("div", { id: "guidance" }, [state.guidance]));

  const gauge = el("div", { id: "p-gauge", class: "gauge" });
  const ratio = Math.max(
    0,
    Math.min(1, Math.log(Math.max(state.p_km, 1e-12)) / Math.log(state.risk_limit)),
  );
  const fill = el("div", { class: "gauge-fill" });
  fill.style.width = `${(ratio * 100).toFixed(1)}%`;
  gauge.append(fill);
  rows.push(gauge);
  return el("section", { id: "progress", class: "panel" }, rows);
}

export function renderDrawCard(card: DrawCard | null): HTMLElement {
  if (card === null) {
    return el("section", { id: "draw-card", class: "panel empty" }, [
      "no draw pending",
    ]);
  }
  return el("section", { id: "draw-card", class: "panel" }, [
    el("h2", {}, [`Draw ${card.j}`]),
    el("div", {}, [
      "ballot row ",
      el("span", { id: "card-index" }, [displayNumber(card.index)]),
      ", identifier ",
      el("span", { id: "card-ballot-id" }, [card.ballot_id]),
    ]),
    el("div", {}, ["retrieve: ", el("span", { id: "card-locator" }, [card.locator])]),
    el("div", {}, [
      "expected contests: ",
      el("span", { id: "card-contests" }, [card.contest_ids.join(", ")]),
    ]),
  ]);
}

export interface RevealHandler {
  (entries: { contest_id: string; salt_hex: string }[]): void;
}

export function renderRevealForm(
  card: DrawCard,
  revealRecorded: boolean,
  onSubmit: RevealHandler,
): HTMLElement {
  const form = el("form", { id: "reveal-form", class: "panel" });
  form.append(el("h2", {}, ["Official: reveal salts"]));
  if (revealRecorded) {
    form.append(el("div", { id: "reveal-done" }, ["salts revealed for this draw"]));
    return form;
  }
  for (const contestId of card.contest_ids) {
    form.append(
      el("label", {}, [
        `${contestId} salt (hex): `,
        el("input", {
          type: "text",
          "data-reveal-contest": contestId,
          placeholder: "32 hex characters, blank if no record exists",
        }),
      ]),
    );
  }
  const button = el("button", { type: "submit", id: "reveal-submit" }, ["reveal"]);
  form.append(button);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const entries: { contest_id: string; salt_hex: string }[] = [];
    form
      .querySelectorAll<HTMLInputElement>("input[data-reveal-contest]")
      .forEach((input) => {
        const value = input.value.trim().toLowerCase();
        if (value) {
          entries.push({
            contest_id: input.getAttribute("data-reveal-contest")!,
            salt_hex: value,
          });
        }
      });
    onSubmit(entries);
  });
  return form;
}

export interface InterpretationResult {
  ballotFound: boolean;
  selections: SelectionEntry[] | null;
}

export function readInterpretationForm(
  form: HTMLElement,
): { result?: InterpretationResult; error?: string } {
  const notFound = form.querySelector<HTMLInputElement>("#ballot-not-found");
  if (notFound?.checked) {
    return { result: { ballotFound: false, selections: null } };
  }
  const selections: SelectionEntry[] = [];
  for (const section of form.querySelectorAll<HTMLElement>("[data-contest-section]")) {
    const contestId = section.getAttribute("data-contest-section")!;
    const absent = section.querySelector<HTMLInputElement>(
      "input[data-role=not-on-ballot]",
    );
    if (absent?.checked) continue;
    const chosen: string[] = [];
    section
      .querySelectorAll<HTMLInputElement>("input[data-candidate]")
      .forEach((input) => {
        if (input.checked) chosen.push(input.getAttribute("data-candidate")!);
      });
    if (chosen.length === 0) {
      const confirm = section.querySelector<HTMLInputElement>(
        "input[data-role=confirm-undervote]",
      );
      if (!confirm?.checked) {
        return {
          error:
            `contest ${contestId}: no candidate selected; tick ` +
            `"confirm undervote" (or "not on ballot") to proceed`,
        };
      }
    }
    selections.push({ contest_id: contestId, chosen });
  }
  return { result: { ballotFound: true, selections } };
}

export function renderInterpretationForm(
  card: DrawCard,
  meta: Meta,
  revealRecorded: boolean,
  onSubmit: (result: InterpretationResult) => void,
  onError: (message: string) => void,
): HTMLElement {
  const form = el("form", { id: "interpretation-form", class: "panel" });
  form.append(el("h2", {}, ["Auditor: human reading"]));
  if (!revealRecorded) {
    form.append(
      el("div", { id: "interpretation-wait" }, [
        "waiting for the official's salt reveal",
      ]),
    );
  }
  form.append(
    el("label", { class: "ballot-not-found" }, [
      el("input", { type: "checkbox", id: "ballot-not-found" }),
      " ballot could not be retrieved",
    ]),
  );
  const expected = new Set(card.contest_ids);
  const contestIds = [
    ...card.contest_ids,
    ...Object.keys(meta.contests).filter((cid) => !expected.has(cid)),
  ];
  for (const contestId of contestIds) {
    const contestMeta = meta.contests[contestId];
    if (!contestMeta) continue;
    const section = el("fieldset", { "data-contest-section": contestId });
    const unexpected = !expected.has(contestId);
    section.append(
      el("legend", {}, [
        unexpected ? `${contestId} (not in the style entry)` : contestId,
      ]),
    );
    for (const candidate of contestMeta.candidates) {
      section.append(
        el("label", {}, [
          el("input", { type: "checkbox", "data-candidate": candidate }),
          ` ${candidate}`,
        ]),
      );
    }
    section.append(
      el("label", {}, [
        el("input", { type: "checkbox", "data-role": "confirm-undervote" }),
        " confirm undervote (no valid selection)",
      ]),
    );
    const notOnBallot = el("input", {
      type: "checkbox",
      "data-role": "not-on-ballot",
    }) as HTMLInputElement;
    if (unexpected) notOnBallot.checked = true;
    section.append(el("label", {}, [notOnBallot, " contest not on ballot"]));
    form.append(section);
  }
  form.append(el("button", { type: "submit", id: "interpretation-submit" }, ["record reading"]));
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const outcome = readInterpretationForm(form);
    if (outcome.error) {
      onError(outcome.error);
      return;
    }
    onSubmit(outcome.result!);
  });
  return form;
}

export function renderEvaluation(evaluation: Evaluation | null): HTMLElement {
  if (evaluation === null) {
    return el("section", { id: "evaluation", class: "panel empty" }, [
      "no evaluation yet",
    ]);
  }
  const rows: (Node | string)[] = [
    el("h2", {}, [`Draw ${evaluation.j} evaluated`]),
    el("div", {}, [
      el("span", { id: "eval-e", class: `badge e${evaluation.e}` }, [
        overstatementBadge(evaluation.e),
      ]),
      " relative overstatement ",
      el("span", { id: "eval-epsilon" }, [evaluation.epsilon]),
    ]),
  ];
  for (const contest of evaluation.contests) {
    rows.push(
      el("div", { class: "verify-indicator", "data-contest": contest.contest_id }, [
        el("strong", {}, [contest.contest_id]),
        `: ${tagGloss(contest.tag)}`,
        el("span", { class: "sides" }, [
          ` record side [${contest.record_side.join(", ")}]`,
          ` vs reading [${contest.human_side.join(", ")}]`,
        ]),
      ]),
    );
  }
  return el("section", { id: "evaluation", class: "panel" }, rows);
}

export function renderTranscriptLog(text: string, limit = 12): HTMLElement {
  const lines = text.trimEnd().split("\n").filter(Boolean);
  const shown = lines.slice(-limit);
  return el("section", { id: "transcript-log", class: "panel" }, [
    el("h2", {}, [`Transcript (${lines.length} records)`]),
    el("pre", {}, [shown.join("\n")]),
  ]);
}

export function renderError(message: string | null): HTMLElement {
  return el(
    "div",
    { id: "error-box", class: message ? "error visible" : "error" },
    message ? [message] : [],
  );
}

export function renderStaleWarning(stale: boolean): HTMLElement {
  return el(
    "div",
    { id: "stale-warning", class: stale ? "warning visible" : "warning" },
    stale ? ["connection lost: showing the last known state"] : [],
  );
}
