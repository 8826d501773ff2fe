/**
 * Application shell: wires the session API to the views and serializes
 * mutations (at most one in-flight request that changes state).
 */

import {
  ApiError,
  Evaluation,
  Meta,
  SessionApi,
  SessionState,
} from "./api.js";
import {
  renderBanner,
  renderDrawCard,
  renderError,
  renderEvaluation,
  renderInterpretationForm,
  renderProgressPanel,
  renderRevealForm,
  renderStaleWarning,
  renderTranscriptLog,
  InterpretationResult,
} from "./views.js";

export class AuditApp {
  sessionId: string | null = null;
  state: SessionState | null = null;
  evaluation: Evaluation | null = null;
  meta: Meta | null = null;
  transcript = "";
  errorMessage: string | null = null;
  stale = false;
  private busy = false;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: SessionApi,
  ) {}

  async start(options: {
    seed: string;
    risk_limit?: number;
    gamma?: number;
    error_tolerance?: number;
    max_draws?: number | null;
    transcript_name?: string | null;
    resume?: boolean;
  }): Promise<void> {
    this.meta = await this.api.meta();
    const created = await this.api.createSession(options);
    this.sessionId = created.session_id;
    this.state = created.state;
    this.evaluation = null;
    await this.refreshTranscript();
    this.render();
  }

  startPolling(intervalMs = 2000): void {
    this.stopPolling();
    this.timer = setInterval(() => {
      void this.refresh();
    }, intervalMs);
  }

  stopPolling(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  async refresh(): Promise<void> {
    if (this.sessionId === null || this.busy) return;
    try {
      const response = await this.api.state(this.sessionId);
      this.state = response.state;
      this.stale = false;
    } catch (error) {
      // lost connection: keep the last known state, warn, never extrapolate
      this.stale = true;
    }
    this.render();
  }

  private async mutate<T>(action: () => Promise<T>): Promise<T | null> {
    if (this.busy) return null;
    this.busy = true;
    this.errorMessage = null;
    try {
      const result = await action();
      this.stale = false;
      return result;
    } catch (error) {
      if (error instanceof ApiError) {
        this.errorMessage = error.detail;
      } else {
        this.stale = true;
        this.errorMessage = "request failed: connection problem";
      }
      return null;
    } finally {
      this.busy = false;
      this.render();
    }
  }

  async nextDraw(): Promise<void> {
    await this.mutate(async () => {
      const response = await this.api.nextDraw(this.sessionId!);
      this.state = response.state;
      await this.refreshTranscript();
    });
  }

  async submitReveal(entries: { contest_id: string; salt_hex: string }[]): Promise<void> {
    const j = this.state?.pending_card?.j;
    if (j === undefined) return;
    await this.mutate(async () => {
      const response = await this.api.postReveal(this.sessionId!, j, entries);
      this.state = response.state;
      await this.refreshTranscript();
    });
  }

  async submitInterpretation(result: InterpretationResult): Promise<void> {
    const j = this.state?.pending_card?.j;
    if (j === undefined) return;
    await this.mutate(async () => {
      const response = await this.api.postInterpretation(
        this.sessionId!,
        j,
        result.ballotFound,
        result.selections,
      );
      this.evaluation = response.evaluation;
      this.state = response.state;
      await this.refreshTranscript();
    });
  }

  private async refreshTranscript(): Promise<void> {
    if (this.sessionId === null) return;
    try {
      this.transcript = await this.api.transcript(this.sessionId);
    } catch {
      // transcript display is best-effort; state rendering carries on
    }
  }

  showError(message: string): void {
    this.errorMessage = message;
    this.render();
  }

  render(): void {
    const state = this.state;
    this.root.replaceChildren();
    if (state === null || this.meta === null) {
      this.root.append(renderError(this.errorMessage));
      return;
    }
    this.root.append(renderStaleWarning(this.stale));
    this.root.append(renderBanner(state));
    this.root.append(renderError(this.errorMessage));
    this.root.append(renderProgressPanel(state));

    const card = state.pending_card;
    this.root.append(renderDrawCard(card));
    if (!state.terminal && state.status !== "blocked") {
      if (card === null) {
        const button = document.createElement("button");
        button.id = "next-draw";
        button.textContent = "draw next ballot";
        button.addEventListener("click", () => {
          void this.nextDraw();
        });
        this.root.append(button);
      } else {
        this.root.append(
          renderRevealForm(card, state.reveal_recorded, (entries) => {
            void this.submitReveal(entries);
          }),
        );
        if (state.reveal_recorded) {
          this.root.append(
            renderInterpretationForm(
              card,
              this.meta,
              state.reveal_recorded,
              (result) => {
                void this.submitInterpretation(result);
              },
              (message) => this.showError(message),
            ),
          );
        }
      }
    }
    this.root.append(renderEvaluation(this.evaluation));
    this.root.append(renderTranscriptLog(this.transcript));
  }
}
