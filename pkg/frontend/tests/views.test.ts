import { beforeEach, describe, expect, it } from "vitest";

import {
  readInterpretationForm,
  renderBanner,
  renderDrawCard,
  renderEvaluation,
  renderInterpretationForm,
  renderProgressPanel,
  renderRevealForm,
} from "../src/views.js";
import { allowanceGloss, bannerFor, overstatementBadge } from "../src/format.js";
import { makeCard, makeEvaluation, makeMeta, makeState } from "./helpers.js";

beforeEach(() => {
  document.body.innerHTML = "";
});

describe("banner", () => {
  it("shows the passed banner on a passed session", () => {
    const node = renderBanner(makeState({ status: "passed", terminal: true }));
    expect(node.textContent).toContain("Audit passed");
    expect(node.className).toContain("passed");
  });

  it("shows the full-hand-count banner", () => {
    const node = renderBanner(
      makeState({ status: "full-hand-count-required", terminal: true }),
    );
    expect(node.textContent).toContain("Full hand count required");
    expect(node.className).toContain("full-hand-count");
  });

  it("flips on the threshold crossing", () => {
    expect(bannerFor(makeState({ status: "escalating" })).kind).toBe("active");
    expect(bannerFor(makeState({ status: "passed" })).kind).toBe("passed");
  });
});

describe("progress panel", () => {
  it("displays the exact server values", () => {
    const state = makeState({
      draws_completed: 12,
      p_km: 0.7346060975609757,
      one_vote_overstatements: 1,
      two_vote_overstatements: 0,
    });
    const node = renderProgressPanel(state);
    document.body.append(node);
    expect(document.querySelector("#draws-done")!.textContent).toBe("12");
    expect(document.querySelector("#n0")!.textContent).toBe("33");
    expect(document.querySelector("#p-km")!.textContent).toBe(
      String(0.7346060975609757),
    );
    expect(document.querySelector("#risk-limit")!.textContent).toBe("0.1");
    expect(document.querySelector("#count-e1")!.textContent).toBe("1");
    expect(document.querySelector("#count-e2")!.textContent).toBe("0");
  });

  it("explains the one-vote allowance in plain language", () => {
    const gloss = allowanceGloss(
      makeState({ one_vote_overstatements: 0, remaining_e1_allowance: 1 }),
    );
    expect(gloss).toContain("1 more one-vote overstatement allowed");
    expect(gloss).toContain("33/25");
  });
});

describe("draw card", () => {
  it("shows the row, identifier, locator and expected contests", () => {
    const node = renderDrawCard(makeCard());
    document.body.append(node);
    expect(document.querySelector("#card-index")!.textContent).toBe("25");
    expect(document.querySelector("#card-ballot-id")!.textContent).toBe("0025");
    expect(document.querySelector("#card-locator")!.textContent).toBe(
      "deck 1 position 25",
    );
    expect(document.querySelector("#card-contests")!.textContent).toBe("mayor");
  });
});

describe("reveal form", () => {
  it("collects non-empty salt entries per contest", () => {
    let received: { contest_id: string; salt_hex: string }[] | null = null;
    const form = renderRevealForm(
      makeCard({ contest_ids: ["mayor", "board"] }),
      false,
      (entries) => {
        received = entries;
      },
    );
    document.body.append(form);
    const inputs = form.querySelectorAll<HTMLInputElement>(
      "input[data-reveal-contest]",
    );
    inputs[0]!.value = "AB".repeat(16); // upper case is normalized
    form.dispatchEvent(new Event("submit", { cancelable: true }));
    expect(received).toEqual([
      { contest_id: "mayor", salt_hex: "ab".repeat(16) },
    ]);
  });
});

describe("interpretation form", () => {
  function mount(card = makeCard()) {
    const form = renderInterpretationForm(
      card,
      makeMeta(),
      true,
      () => {},
      () => {},
    );
    document.body.append(form);
    return form;
  }

  it("submits the checked candidates", () => {
    const form = mount();
    const alice = form.querySelector<HTMLInputElement>(
      "[data-contest-section=mayor] input[data-candidate=alice]",
    )!;
    alice.checked = true;
    const outcome = readInterpretationForm(form);
    expect(outcome.error).toBeUndefined();
    expect(outcome.result).toEqual({
      ballotFound: true,
      selections: [{ contest_id: "mayor", chosen: ["alice"] }],
    });
  });

  it("requires explicit confirmation for an undervote", () => {
    const form = mount();
    const blank = readInterpretationForm(form);
    expect(blank.error).toContain("confirm undervote");

    const confirm = form.querySelector<HTMLInputElement>(
      "[data-contest-section=mayor] input[data-role=confirm-undervote]",
    )!;
    confirm.checked = true;
    const confirmed = readInterpretationForm(form);
    expect(confirmed.error).toBeUndefined();
    expect(confirmed.result!.selections).toEqual([
      { contest_id: "mayor", chosen: [] },
    ]);
  });

  it("supports overvote entry (more choices than allowed)", () => {
    const form = mount();
    for (const candidate of ["alice", "bob"]) {
      form.querySelector<HTMLInputElement>(
        `[data-contest-section=mayor] input[data-candidate=${candidate}]`,
      )!.checked = true;
    }
    const outcome = readInterpretationForm(form);
    expect(outcome.result!.selections).toEqual([
      { contest_id: "mayor", chosen: ["alice", "bob"] },
    ]);
  });

  it("marks unexpected contests as not-on-ballot by default", () => {
    const form = mount();
    const mayorAlice = form.querySelector<HTMLInputElement>(
      "[data-contest-section=mayor] input[data-candidate=alice]",
    )!;
    mayorAlice.checked = true;
    const outcome = readInterpretationForm(form);
    // the board contest is not in the style entry and stays excluded
    expect(outcome.result!.selections).toEqual([
      { contest_id: "mayor", chosen: ["alice"] },
    ]);

    const include = form.querySelector<HTMLInputElement>(
      "[data-contest-section=board] input[data-role=not-on-ballot]",
    )!;
    include.checked = false;
    form.querySelector<HTMLInputElement>(
      "[data-contest-section=board] input[data-candidate=carol]",
    )!.checked = true;
    const extended = readInterpretationForm(form);
    expect(extended.result!.selections).toEqual([
      { contest_id: "mayor", chosen: ["alice"] },
      { contest_id: "board", chosen: ["carol"] },
    ]);
  });

  it("ballot-not-found wins over everything else", () => {
    const form = mount();
    form.querySelector<HTMLInputElement>("#ballot-not-found")!.checked = true;
    const outcome = readInterpretationForm(form);
    expect(outcome.result).toEqual({ ballotFound: false, selections: null });
  });
});

describe("evaluation view", () => {
  it("shows the overstatement badge and the verification indicator", () => {
    const node = renderEvaluation(makeEvaluation());
    document.body.append(node);
    expect(document.querySelector("#eval-e")!.textContent).toBe("e=0 (match)");
    const indicator = document.querySelector(
      ".verify-indicator[data-contest=mayor]",
    )!;
    expect(indicator.textContent).toContain("commitment opened and matched");
  });

  it("surfaces the runner-up substitution for a missing ballot", () => {
    const node = renderEvaluation(
      makeEvaluation({
        ballot_found: false,
        e: 2,
        epsilon: "1/10",
        contests: [
          {
            contest_id: "mayor",
            tag: "missing-ballot",
            shrouded_id: null,
            entry_found: false,
            record_side: ["alice"],
            human_side: ["bob"],
            notes: [],
          },
        ],
      }),
    );
    document.body.append(node);
    expect(document.querySelector("#eval-e")!.textContent).toBe(
      "e=2 (overstatement)",
    );
    expect(
      document.querySelector(".verify-indicator[data-contest=mayor]")!.textContent,
    ).toContain("runner-up substitution applied");
  });

  it("labels understatements", () => {
    expect(overstatementBadge(-1)).toBe("e=-1 (understatement)");
  });
});
