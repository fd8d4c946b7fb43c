/** Typed client for the review service's HTTP+JSON API.
 *
 * Every shape here mirrors a documented payload; the client adds nothing
 * beyond transport and error mapping, so the server stays the single source
 * of truth for counters and stop state.
 */

export type Verdict = "vulnerable" | "non_vulnerable";
export type Purpose = "inspect" | "double_check";

export interface QueueItem {
  doc_id: number;
  path: string;
  excerpt: string;
  purpose: Purpose;
}

export interface QueuePayload {
  session_id: string;
  stopped: boolean;
  stop_reason?: string | null;
  positives?: number;
  estimate?: number | null;
  estimated_recall?: number;
  items: QueueItem[];
  retry_after?: number | null;
}

export interface RoundInfo {
  round_index: number;
  labeled: number;
  positives: number;
  r_e: number | null;
  stopped: boolean;
  stop_reason: string | null;
  new_events: number;
  total_events: number;
}

export interface SessionStatus {
  session_id: string;
  corpus: string;
  features: string;
  round: number;
  pool_size: number;
  labeled: number;
  positives: number;
  estimate: number | null;
  estimated_recall: number;
  no_positives_yet: boolean;
  cost: number;
  queued: number;
  stopped: boolean;
  stop_reason: string | null;
  rounds: RoundInfo[];
}

export interface TracePayload {
  session_id: string;
  pool_size: number;
  rounds: RoundInfo[];
  recall_curve: [number, number][];
  stopped: boolean;
}

export interface VerdictAck {
  session_id: string;
  seq: number;
  doc_id: number;
  labeled: number;
  positives: number;
  estimate: number | null;
  stopped: boolean;
  round: number;
}

export interface DocumentPayload {
  doc_id: number;
  path: string;
  body: string;
  crash_count: number;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

/** Injectable transport so tests can run against an in-process double. */
export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class Client {
  private readonly base: string;
  private readonly fetcher: FetchLike;

  constructor(baseUrl: string, fetcher?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.fetcher = fetcher ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetcher(this.base + path, init);
    if (!response.ok) {
      let detail = `${response.status}`;
      try {
        const body = await response.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  createSession(
    corpus: string,
    features: string,
    config: Record<string, unknown> = {},
  ): Promise<{ session_id: string }> {
    return this.request("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ corpus, features, config }),
    });
  }

  status(sessionId: string): Promise<SessionStatus> {
    return this.request(`/sessions/${sessionId}`);
  }

  queue(sessionId: string, reviewer: string, limit = 1): Promise<QueuePayload> {
    const params = new URLSearchParams({ reviewer, limit: String(limit) });
    return this.request(`/sessions/${sessionId}/queue?${params}`);
  }

  trace(sessionId: string): Promise<TracePayload> {
    return this.request(`/sessions/${sessionId}/trace`);
  }

  submit(
    sessionId: string,
    docId: number,
    reviewer: string,
    verdict: Verdict,
  ): Promise<VerdictAck> {
    return this.request(`/sessions/${sessionId}/verdicts`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ doc_id: docId, reviewer, verdict }),
    });
  }

  document(docId: number, corpus: string): Promise<DocumentPayload> {
    const params = new URLSearchParams({ corpus });
    return this.request(`/documents/${docId}?${params}`);
  }
}
