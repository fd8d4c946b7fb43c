/** In-process doubles of the review service speaking only its documented
 * JSON payloads, plus small DOM helpers shared by the flow tests.
 */

import type {
  FetchLike,
  Purpose,
  QueueItem,
  QueuePayload,
  RoundInfo,
  SessionStatus,
  TracePayload,
  Verdict,
  VerdictAck,
} from "../src/api.js";

export const SID = "fake-session-1";
export const POOL = 50;
export const TRUE_POSITIVES = 10;

export interface SubmitRecord {
  doc_id: number;
  reviewer: string;
  verdict: Verdict;
}

function reply(status: number, body: unknown): Response {
  const double = {
    ok: status < 400,
    status,
    json: async () => JSON.parse(JSON.stringify(body)),
  };
  return double as unknown as Response;
}

function vulnerableBody(id: number): string {
  return [
    "#include <string.h>",
    "",
    `static int copy_record_${id}(char *dst, const char *src) {`,
    "    /* no bounds check before the copy */",
    "    strcpy(dst, src);",
    "    return 0;",
    "}",
    "",
  ].join("\n");
}

function cleanBody(id: number): string {
  return [
    "#include <string.h>",
    "",
    `static int copy_record_${id}(char *dst, size_t cap, const char *src) {`,
    "    if (strlen(src) + 1 > cap) {",
    "        return -1;",
    "    }",
    "    memcpy(dst, src, strlen(src) + 1);",
    "    return 0;",
    "}",
    "",
  ].join("\n");
}

export function isVulnerable(docId: number): boolean {
  return docId % 5 === 3;
}

/** Stateful double for the full review round trip over a 50 document pool.
 *
 * Ten documents are vulnerable. One of them (doc 23) arrives pre-labeled by
 * reviewer "bob" so the session can later hand the browser reviewer a
 * double check it is allowed to see. The session stops once every
 * vulnerable document carries a vulnerable verdict.
 */
export class FakeService {
  createdWith: Record<string, unknown> | null = null;
  submits: SubmitRecord[] = [];
  private labels = new Map<number, { reviewer: string; verdict: Verdict }>();
  private events = 0;
  private leased: number | null = null;
  private leasePurpose: Purpose = "inspect";
  private offeredDoubleCheck = false;
  private rounds: RoundInfo[] = [];
  private readonly inspectOrder: number[];

  constructor() {
    const positives = [];
    const negatives = [];
    for (let id = 0; id < POOL; id++) {
      if (id === 23) continue;
      (isVulnerable(id) ? positives : negatives).push(id);
    }
    this.inspectOrder = [...positives, ...negatives];
  }

  private positiveCount(): number {
    let count = 0;
    for (const label of this.labels.values()) {
      if (label.verdict === "vulnerable") count++;
    }
    return count;
  }

  private isStopped(): boolean {
    return this.positiveCount() >= TRUE_POSITIVES;
  }

  private estimate(): number | null {
    const positives = this.positiveCount();
    if (positives === 0) return null;
    if (positives >= TRUE_POSITIVES) return TRUE_POSITIVES;
    return TRUE_POSITIVES + 2.5 / (1 + this.rounds.length);
  }

  private recordEvent(): void {
    this.events++;
    if (this.events % 3 === 0) {
      this.rounds.push({
        round_index: this.rounds.length,
        labeled: this.labels.size,
        positives: this.positiveCount(),
        r_e: this.estimate(),
        stopped: this.isStopped(),
        stop_reason: this.isStopped() ? "target_recall" : null,
        new_events: 3,
        total_events: this.events,
      });
    }
  }

  private statusPayload(): SessionStatus {
    const positives = this.positiveCount();
    const estimate = this.estimate();
    return {
      session_id: SID,
      corpus: "default",
      features: "default",
      round: this.rounds.length,
      pool_size: POOL,
      labeled: this.labels.size,
      positives,
      estimate,
      estimated_recall: estimate ? Math.min(positives / estimate, 1) : 0,
      no_positives_yet: positives === 0,
      cost: this.events / POOL,
      queued: this.leased === null ? 0 : 1,
      stopped: this.isStopped(),
      stop_reason: this.isStopped() ? "target_recall" : null,
      rounds: [...this.rounds],
    };
  }

  private queuePayload(): QueuePayload {
    if (this.isStopped()) {
      const estimate = this.estimate();
      const positives = this.positiveCount();
      return {
        session_id: SID,
        stopped: true,
        stop_reason: "target_recall",
        positives,
        estimate,
        estimated_recall: estimate ? Math.min(positives / estimate, 1) : 0,
        items: [],
        retry_after: null,
      };
    }
    if (this.leased === null) {
      if (!this.offeredDoubleCheck && this.submits.length >= 5) {
        this.offeredDoubleCheck = true;
        this.leased = 23;
        this.leasePurpose = "double_check";
      } else {
        const next = this.inspectOrder.find((id) => !this.labels.has(id));
        if (next === undefined) throw new Error("pool exhausted before stop");
        this.leased = next;
        this.leasePurpose = "inspect";
      }
    }
    const body = isVulnerable(this.leased)
      ? vulnerableBody(this.leased)
      : cleanBody(this.leased);
    const item: QueueItem = {
      doc_id: this.leased,
      path: `src/module_${this.leased}.c`,
      excerpt: body.slice(0, 120),
      purpose: this.leasePurpose,
    };
    return {
      session_id: SID,
      stopped: false,
      stop_reason: null,
      items: [item],
      retry_after: 5,
    };
  }

  private verdictPayload(body: {
    doc_id: number;
    reviewer: string;
    verdict: Verdict;
  }): Response {
    if (this.leased !== body.doc_id) {
      return reply(409, { detail: "no active lease for this document" });
    }
    this.labels.set(body.doc_id, {
      reviewer: body.reviewer,
      verdict: body.verdict,
    });
    this.submits.push({ ...body });
    this.leased = null;
    this.recordEvent();
    const ack: VerdictAck = {
      session_id: SID,
      seq: this.events,
      doc_id: body.doc_id,
      labeled: this.labels.size,
      positives: this.positiveCount(),
      estimate: this.estimate(),
      stopped: this.isStopped(),
      round: this.rounds.length,
    };
    return reply(200, ack);
  }

  fetch: FetchLike = async (input, init) => {
    const url = new URL(input);
    const method = init?.method ?? "GET";
    const path = url.pathname;

    if (method === "POST" && path === "/sessions") {
      const body = JSON.parse(String(init?.body)) as Record<string, unknown>;
      for (const key of ["corpus", "features", "config"]) {
        if (!(key in body)) return reply(422, { detail: `missing ${key}` });
      }
      this.createdWith = body;
      // doc 23 arrives labeled by a second reviewer
      this.labels.set(23, { reviewer: "bob", verdict: "vulnerable" });
      this.events = 1;
      return reply(201, { session_id: SID });
    }
    if (method === "GET" && path === `/sessions/${SID}`) {
      return reply(200, this.statusPayload());
    }
    if (method === "GET" && path === `/sessions/${SID}/queue`) {
      if (!url.searchParams.get("reviewer")) {
        return reply(422, { detail: "reviewer is required" });
      }
      return reply(200, this.queuePayload());
    }
    if (method === "GET" && path === `/sessions/${SID}/trace`) {
      const payload: TracePayload = {
        session_id: SID,
        pool_size: POOL,
        rounds: [...this.rounds],
        recall_curve: this.rounds.map((round) => [
          round.total_events / POOL,
          round.r_e ? Math.min(round.positives / round.r_e, 1) : 0,
        ]),
        stopped: this.isStopped(),
      };
      return reply(200, payload);
    }
    if (method === "POST" && path === `/sessions/${SID}/verdicts`) {
      return this.verdictPayload(JSON.parse(String(init?.body)));
    }
    const docMatch = path.match(/^\/documents\/(\d+)$/);
    if (method === "GET" && docMatch) {
      const docId = Number(docMatch[1]);
      if (docId < 0 || docId >= POOL) {
        return reply(404, { detail: "unknown document" });
      }
      return reply(200, {
        doc_id: docId,
        path: `src/module_${docId}.c`,
        body: isVulnerable(docId) ? vulnerableBody(docId) : cleanBody(docId),
        crash_count: 0,
      });
    }
    return reply(404, { detail: `no route for ${method} ${path}` });
  };
}

/** Scripted double: queue responses come from a fixed list (the last entry
 * repeats), verdicts can be told to fail, every other endpoint answers with
 * a plausible minimal payload. Used to exercise one edge path per test.
 */
export class ScriptedService {
  submits: SubmitRecord[] = [];
  submitAttempts = 0;
  queueCalls = 0;
  private networkFailuresLeft: number;
  private readonly failSubmits: Array<{ status: number; detail: string }>;

  constructor(
    private readonly script: QueuePayload[],
    options: {
      failSubmits?: Array<{ status: number; detail: string }>;
      networkFailures?: number;
    } = {},
  ) {
    this.failSubmits = options.failSubmits ?? [];
    this.networkFailuresLeft = options.networkFailures ?? 0;
  }

  private statusPayload(): SessionStatus {
    const positives = this.submits.filter(
      (record) => record.verdict === "vulnerable",
    ).length;
    return {
      session_id: SID,
      corpus: "default",
      features: "default",
      round: 1,
      pool_size: 10,
      labeled: this.submits.length,
      positives,
      estimate: positives || null,
      estimated_recall: positives > 0 ? 1 : 0,
      no_positives_yet: positives === 0,
      cost: this.submits.length / 10,
      queued: 0,
      stopped: false,
      stop_reason: null,
      rounds: [],
    };
  }

  fetch: FetchLike = async (input, init) => {
    const url = new URL(input);
    const method = init?.method ?? "GET";
    const path = url.pathname;

    if (method === "GET" && path === `/sessions/${SID}/queue`) {
      const index = Math.min(this.queueCalls, this.script.length - 1);
      this.queueCalls++;
      return reply(200, this.script[index]);
    }
    if (method === "GET" && path === `/sessions/${SID}`) {
      return reply(200, this.statusPayload());
    }
    if (method === "GET" && path === `/sessions/${SID}/trace`) {
      const payload: TracePayload = {
        session_id: SID,
        pool_size: 10,
        rounds: [],
        recall_curve: [],
        stopped: false,
      };
      return reply(200, payload);
    }
    if (method === "POST" && path === `/sessions/${SID}/verdicts`) {
      this.submitAttempts++;
      if (this.networkFailuresLeft > 0) {
        this.networkFailuresLeft--;
        throw new TypeError("fetch failed");
      }
      const failure = this.failSubmits.shift();
      if (failure) return reply(failure.status, { detail: failure.detail });
      const body = JSON.parse(String(init?.body)) as SubmitRecord;
      this.submits.push(body);
      const ack: VerdictAck = {
        session_id: SID,
        seq: this.submits.length,
        doc_id: body.doc_id,
        labeled: this.submits.length,
        positives: this.submits.filter((r) => r.verdict === "vulnerable").length,
        estimate: null,
        stopped: false,
        round: 1,
      };
      return reply(200, ack);
    }
    const docMatch = path.match(/^\/documents\/(\d+)$/);
    if (method === "GET" && docMatch) {
      const docId = Number(docMatch[1]);
      return reply(200, {
        doc_id: docId,
        path: `src/module_${docId}.c`,
        body: vulnerableBody(docId),
        crash_count: 0,
      });
    }
    return reply(404, { detail: `no route for ${method} ${path}` });
  };
}

export function running(items: QueueItem[]): QueuePayload {
  return {
    session_id: SID,
    stopped: false,
    stop_reason: null,
    items,
    retry_after: items.length === 0 ? 0.001 : 5,
  };
}

export function stoppedQueue(positives: number): QueuePayload {
  return {
    session_id: SID,
    stopped: true,
    stop_reason: "target_recall",
    positives,
    estimate: positives,
    estimated_recall: 1.0,
    items: [],
    retry_after: null,
  };
}

export function inspectItem(docId: number, purpose: Purpose = "inspect"): QueueItem {
  return {
    doc_id: docId,
    path: `src/module_${docId}.c`,
    excerpt: "static int",
    purpose,
  };
}

export function waitForEvent(
  target: EventTarget,
  name: string,
  timeoutMs = 8000,
): Promise<CustomEvent> {
  return new Promise((resolve, reject) => {
    const timer = setTimeout(
      () => reject(new Error(`timed out waiting for "${name}"`)),
      timeoutMs,
    );
    target.addEventListener(
      name,
      (event) => {
        clearTimeout(timer);
        resolve(event as CustomEvent);
      },
      { once: true },
    );
  });
}

export interface ShownRecord {
  doc_id: number;
  purpose: Purpose;
  badge: string;
  codeHtml: string;
}

/** Infallible scripted reviewer: whenever an item is shown, it reads the
 * ground truth and clicks the matching verdict button.
 */
export function scriptHuman(
  root: HTMLElement,
  truth: (docId: number) => boolean,
  log: ShownRecord[],
): void {
  root.addEventListener("item-shown", (event) => {
    const item = (event as CustomEvent).detail as QueueItem;
    log.push({
      doc_id: item.doc_id,
      purpose: item.purpose,
      badge: root.querySelector(".badge")?.textContent ?? "",
      codeHtml: root.querySelector(".code")?.innerHTML ?? "",
    });
    const selector = truth(item.doc_id)
      ? ".verdict-vulnerable"
      : ".verdict-clean";
    (root.querySelector(selector) as HTMLButtonElement).click();
  });
}
