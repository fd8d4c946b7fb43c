/** Page bootstrap: a small setup form that either opens a new review session
 * or attaches to an existing one, then hands the page over to ReviewApp.
 */

import { ApiError, Client, type FetchLike } from "./api.js";
import { type AppOptions, ReviewApp } from "./app.js";

export interface MountOptions {
  /** Transport override so tests can drive an in-process service double. */
  fetcher?: FetchLike;
  app?: AppOptions;
}

function field(form: HTMLFormElement, name: string): string {
  const input = form.elements.namedItem(name) as HTMLInputElement | null;
  return input ? input.value.trim() : "";
}

export function mount(page: HTMLElement, options: MountOptions = {}): void {
  page.innerHTML = `
    <h1>Vulnerability review</h1>
    <form class="setup">
      <label>service <input name="base" value="http://127.0.0.1:8000" size="28"></label>
      <label>reviewer <input name="reviewer" value="reviewer-1" size="12"></label>
      <fieldset>
        <legend>attach to a running session</legend>
        <label>session id <input name="session" size="30"></label>
      </fieldset>
      <fieldset>
        <legend>or start a new one</legend>
        <label>corpus <input name="corpus" value="default" size="12"></label>
        <label>features <input name="features" value="default" size="12"></label>
        <label>settings (JSON) <input name="config" value="{}" size="24"></label>
      </fieldset>
      <button type="submit">open session</button>
      <span class="setup-error"></span>
    </form>
    <div class="review-root"></div>`;

  const form = page.querySelector("form.setup") as HTMLFormElement;
  const errorBox = page.querySelector(".setup-error") as HTMLElement;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    void openSession();
  });

  async function openSession(): Promise<void> {
    errorBox.textContent = "";
    const client = new Client(field(form, "base"), options.fetcher);
    const reviewer = field(form, "reviewer") || "reviewer-1";
    try {
      let sessionId = field(form, "session");
      if (!sessionId) {
        let config: Record<string, unknown>;
        try {
          config = JSON.parse(field(form, "config") || "{}");
        } catch {
          throw new Error("settings must be valid JSON");
        }
        const created = await client.createSession(
          field(form, "corpus") || "default",
          field(form, "features") || "default",
          config,
        );
        sessionId = created.session_id;
      }
      const status = await client.status(sessionId);
      form.classList.add("hidden");
      const root = page.querySelector(".review-root") as HTMLElement;
      const app = new ReviewApp(
        root,
        client,
        sessionId,
        status.corpus,
        reviewer,
        options.app ?? {},
      );
      await app.start();
    } catch (error) {
      const message =
        error instanceof ApiError || error instanceof Error
          ? error.message
          : String(error);
      errorBox.textContent = `could not open session: ${message}`;
    }
  }
}

const pageRoot = typeof document !== "undefined" ? document.getElementById("page") : null;
if (pageRoot) mount(pageRoot);
