/**
 * Typed client for the local audit session service.
 *
 * The UI performs no audit math: every number it shows comes verbatim from
 * these responses.
 */

export interface DrawCard {
  j: number;
  r: string;
  index: number;
  ballot_id: string;
  contest_ids: string[];
  locator: string;
}

export interface DerivedView {
  rho: number;
  diluted_margin: string;
  diluted_margin_value: number;
  total_error_bound: number;
  min_margin_votes: number;
  total_ballots: number;
}

export interface SessionState {
  status: string;
  terminal: boolean;
  draws_completed: number;
  initial_sample_size: number | null;
  max_draws: number | null;
  e_counts: Record<string, number>;
  two_vote_overstatements: number;
  one_vote_overstatements: number;
  p_km: number;
  log_p_km: number;
  risk_limit: number;
  seed: string;
  stopped_via: string | null;
  guidance: string;
  checks_pass: boolean;
  compliance_ok: boolean;
  pending_card: DrawCard | null;
  reveal_recorded: boolean;
  derived: DerivedView | null;
  threshold_e1: number | null;
  threshold_e1_exact: string | null;
  remaining_e1_allowance: number | null;
}

export interface EvaluationContest {
  contest_id: string;
  tag: string;
  shrouded_id: string | null;
  entry_found: boolean;
  record_side: string[];
  human_side: string[];
  notes: string[];
}

export interface Evaluation {
  j: number;
  index: number;
  ballot_id: string;
  ballot_found: boolean;
  reused: boolean;
  e: number;
  epsilon: string;
  taint: number;
  contests: EvaluationContest[];
}

export interface ContestMeta {
  candidates: string[];
  winners_allowed: number;
  reported_ballot_count: number;
}

export interface Meta {
  total_ballots: number;
  contests: Record<string, ContestMeta>;
  file_digests: Record<string, string>;
}

export interface CreateSessionOptions {
  seed: string;
  risk_limit?: number;
  gamma?: number;
  error_tolerance?: number;
  max_draws?: number | null;
  compliance_ok?: boolean;
  transcript_name?: string | null;
  resume?: boolean;
}

export interface RevealEntry {
  contest_id: string;
  salt_hex: string;
}

export interface SelectionEntry {
  contest_id: string;
  chosen: string[];
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`${status}: ${detail}`);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, detail);
}

export class SessionApi {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  meta(): Promise<Meta> {
    return this.request<Meta>("/meta");
  }

  createSession(
    options: CreateSessionOptions,
  ): Promise<{ session_id: string; transcript: string; state: SessionState }> {
    return this.post("/sessions", options);
  }

  state(sessionId: string): Promise<{ state: SessionState }> {
    return this.request(`/sessions/${sessionId}`);
  }

  nextDraw(
    sessionId: string,
  ): Promise<{ card: DrawCard | null; state: SessionState }> {
    return this.post(`/sessions/${sessionId}/draws`, {});
  }

  postReveal(
    sessionId: string,
    j: number,
    salts: RevealEntry[],
  ): Promise<{ state: SessionState }> {
    return this.post(`/sessions/${sessionId}/reveals`, { j, salts });
  }

  postInterpretation(
    sessionId: string,
    j: number,
    ballotFound: boolean,
    selections: SelectionEntry[] | null,
  ): Promise<{ evaluation: Evaluation; state: SessionState }> {
    return this.post(`/sessions/${sessionId}/interpretations`, {
      j,
      ballot_found: ballotFound,
      selections,
    });
  }

  async transcript(sessionId: string): Promise<string> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/sessions/${sessionId}/transcript`,
    );
    if (!response.ok) throw await parseError(response);
    return response.text();
  }
}
