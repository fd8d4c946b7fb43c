/** Review loop controller: pull the next queue item, render it, submit the
 * verdict, and keep the counters, progress bar, and trajectory chart in sync
 * with the server's acknowledged state. The server owns every number shown;
 * this class never extrapolates counters client-side.
 */

import {
  ApiError,
  Client,
  type QueueItem,
  type QueuePayload,
  type Verdict,
} from "./api.js";
import { buildChart } from "./chart.js";
import { escapeHtml, highlight } from "./highlight.js";

export interface AppOptions {
  /** Delay before re-polling when the queue is momentarily empty. */
  pollDelayMs?: number;
  /** Delay before retrying a verdict after a network failure. */
  retryDelayMs?: number;
}

const COUNTER_FIELDS = [
  ["labeled", "labeled"],
  ["positives", "found"],
  ["estimate", "estimated total"],
  ["estimated_recall", "estimated recall"],
  ["cost", "cost"],
  ["round", "round"],
  ["queued", "queued"],
] as const;

export class ReviewApp {
  private readonly pollDelayMs: number;
  private readonly retryDelayMs: number;
  private current: QueueItem | null = null;
  private submitted = new Set<number>();
  private stopped = false;
  private busy = false;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: Client,
    private readonly sessionId: string,
    private readonly corpus: string,
    private readonly reviewer: string,
    options: AppOptions = {},
  ) {
    this.pollDelayMs = options.pollDelayMs ?? 800;
    this.retryDelayMs = options.retryDelayMs ?? 1500;
  }

  async start(): Promise<void> {
    this.renderSkeleton();
    await this.refreshCounters();
    await this.nextItem();
  }

  // -- rendering ---------------------------------------------------------

  private renderSkeleton(): void {
    const counters = COUNTER_FIELDS.map(
      ([field, label]) =>
        `<div class="counter"><span class="counter-label">${label}</span>` +
        `<span class="counter-value" data-field="${field}">-</span></div>`,
    ).join("");
    this.root.innerHTML = `
      <div class="session-line">session <code>${escapeHtml(this.sessionId)}</code>
        reviewing as <code>${escapeHtml(this.reviewer)}</code></div>
      <div class="counters">${counters}</div>
      <div class="progress"><div class="progress-fill" style="width:0%"></div></div>
      <div class="chart-box"></div>
      <div class="banner hidden"></div>
      <div class="notice"></div>
      <div class="item-panel hidden">
        <div class="item-header">
          <span class="badge"></span>
          <span class="item-path"></span>
        </div>
        <pre class="code"></pre>
        <div class="verdict-row">
          <button class="verdict-vulnerable" type="button">vulnerable</button>
          <button class="verdict-clean" type="button">not vulnerable</button>
        </div>
      </div>`;
    this.button("vulnerable").addEventListener("click", () =>
      void this.submitVerdict("vulnerable"),
    );
    this.button("non_vulnerable").addEventListener("click", () =>
      void this.submitVerdict("non_vulnerable"),
    );
  }

  private select<T extends HTMLElement>(selector: string): T {
    const node = this.root.querySelector(selector);
    if (!node) throw new Error(`missing ${selector}`);
    return node as T;
  }

  private button(verdict: Verdict): HTMLButtonElement {
    return this.select(
      verdict === "vulnerable" ? ".verdict-vulnerable" : ".verdict-clean",
    );
  }

  private setNotice(text: string): void {
    this.select(".notice").textContent = text;
  }

  private setButtonsEnabled(enabled: boolean): void {
    this.button("vulnerable").disabled = !enabled;
    this.button("non_vulnerable").disabled = !enabled;
  }

  private emit(name: string, detail?: unknown): void {
    this.root.dispatchEvent(new CustomEvent(name, { detail }));
  }

  // -- server state ------------------------------------------------------

  private async refreshCounters(): Promise<void> {
    const status = await this.client.status(this.sessionId);
    for (const [field] of COUNTER_FIELDS) {
      const value = status[field];
      let text: string;
      if (value === null) {
        text = "-";
      } else if (field === "estimate") {
        text = (value as number).toFixed(1);
      } else if (field === "estimated_recall" || field === "cost") {
        text = `${(100 * (value as number)).toFixed(1)}%`;
      } else {
        text = String(value);
      }
      this.select(`[data-field="${field}"]`).textContent = text;
    }
    const fill = Math.min(100, 100 * status.cost);
    this.select<HTMLElement>(".progress-fill").style.width = `${fill.toFixed(1)}%`;
    if (!this.stopped) {
      // the chart freezes at the final trace once the session stops
      const trace = await this.client.trace(this.sessionId);
      this.select(".chart-box").innerHTML = buildChart(trace);
    }
    this.emit("counters-updated", status);
  }

  // -- review loop ---------------------------------------------------------

  private async nextItem(): Promise<void> {
    if (this.stopped || this.busy) return;
    this.busy = true;
    try {
      const queue = await this.client.queue(this.sessionId, this.reviewer, 1);
      if (queue.stopped) {
        await this.showStop(queue);
        return;
      }
      const item = queue.items[0];
      if (!item) {
        this.setNotice("queue momentarily empty; waiting for work");
        const delay = (queue.retry_after ?? 0) * 1000 || this.pollDelayMs;
        setTimeout(() => void this.nextItem(), delay);
        return;
      }
      if (item.purpose === "double_check" && this.submitted.has(item.doc_id)) {
        // the server withholds own-authored double checks; hide defensively
        this.setNotice("skipping a double check of this reviewer's own verdict");
        setTimeout(() => void this.nextItem(), this.pollDelayMs);
        return;
      }
      await this.showItem(item);
    } finally {
      this.busy = false;
    }
  }

  private async showItem(item: QueueItem): Promise<void> {
    this.current = item;
    let body = item.excerpt;
    try {
      const doc = await this.client.document(item.doc_id, this.corpus);
      body = doc.body;
    } catch {
      this.setNotice("full body unavailable; showing the excerpt");
    }
    const panel = this.select(".item-panel");
    panel.classList.remove("hidden");
    const badge = this.select(".badge");
    badge.textContent = item.purpose === "double_check" ? "double check" : "inspect";
    badge.className = `badge badge-${item.purpose}`;
    this.select(".item-path").textContent = item.path;
    this.select(".code").innerHTML = highlight(body);
    this.setButtonsEnabled(true);
    this.setNotice("");
    this.emit("item-shown", item);
  }

  private async submitVerdict(verdict: Verdict): Promise<void> {
    const item = this.current;
    if (!item || this.stopped) return;
    this.setButtonsEnabled(false);
    try {
      const ack = await this.client.submit(
        this.sessionId,
        item.doc_id,
        this.reviewer,
        verdict,
      );
      this.submitted.add(item.doc_id);
      this.current = null;
      await this.refreshCounters();
      this.emit("verdict-acknowledged", ack);
      if (ack.stopped) {
        const queue = await this.client.queue(this.sessionId, this.reviewer, 1);
        await this.showStop(queue);
      } else {
        await this.nextItem();
      }
    } catch (error) {
      if (error instanceof ApiError) {
        // lease lost or duplicate conflict: drop the item, fetch fresh work
        this.current = null;
        this.setNotice(`item reassigned (${error.message}); fetching the next one`);
        await this.refreshCounters();
        await this.nextItem();
      } else {
        // network failure: the lease is still ours, retry the same verdict
        this.setNotice("network failure; retrying this verdict");
        setTimeout(() => void this.submitVerdict(verdict), this.retryDelayMs);
      }
    }
  }

  private async showStop(queue: QueuePayload): Promise<void> {
    this.stopped = true;
    this.current = null;
    const trace = await this.client.trace(this.sessionId);
    this.select(".chart-box").innerHTML = buildChart(trace);
    await this.refreshCounters();
    this.select(".item-panel").classList.add("hidden");
    this.setButtonsEnabled(false);
    const banner = this.select(".banner");
    banner.classList.remove("hidden");
    const recall = queue.estimated_recall ?? 0;
    const reason =
      queue.stop_reason === "target_recall"
        ? "Target recall reached"
        : `Session stopped (${queue.stop_reason ?? "done"})`;
    banner.textContent =
      `${reason}: ${queue.positives ?? 0} vulnerable files found, ` +
      `estimated recall ${(100 * recall).toFixed(1)}%`;
    this.setNotice("");
    this.emit("stopped", queue);
  }
}
