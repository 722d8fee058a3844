// Unknown-process triage queue.  Mark-benign updates optimistically and
// reverts with the server's reason when admission rejects.

import { ApiClient, ApiRequestError } from "./api.js";
import { escapeHtml } from "./feed.js";
import type { UnknownItem } from "./types.js";

export class TriageView {
  private readonly api: ApiClient;
  private readonly root: HTMLElement;
  private items: UnknownItem[] = [];
  private banner = "";
  private annotator = "";

  constructor(root: HTMLElement, api: ApiClient) {
    this.root = root;
    this.api = api;
  }

  async mount(): Promise<void> {
    this.items = await this.api.unknowns();
    this.render();
  }

  async refresh(): Promise<void> {
    this.items = await this.api.unknowns();
    this.render();
  }

  currentItems(): UnknownItem[] {
    return [...this.items];
  }

  get bannerText(): string {
    return this.banner;
  }

  async markBenign(subject: string): Promise<void> {
    if (!this.annotator) {
      this.banner = "enter your analyst name first";
      this.render();
      return;
    }
    const index = this.items.findIndex((item) => item.subject === subject);
    if (index < 0) return;
    const [removed] = this.items.splice(index, 1); // optimistic
    this.banner = "";
    this.render();
    try {
      await this.api.markBenign(subject, this.annotator);
    } catch (error) {
      this.items.splice(index, 0, removed); // revert, surface the reason
      this.banner = error instanceof ApiRequestError
        ? `${error.code}: ${error.message}`
        : String(error);
      this.render();
    }
  }

  private render(): void {
    const rows = this.items.map((item) => `
      <tr data-subject="${escapeHtml(item.subject)}">
        <td><span class="badge level-${item.level.toLowerCase()}">${item.level}</span></td>
        <td><code>${escapeHtml(item.label)}</code>
            <div class="sub">${escapeHtml(item.subject)}</div></td>
        <td>${escapeHtml(item.host)}</td>
        <td>${Object.entries(item.hashes).map(([a, h]) =>
          `<div class="sub">${a}: <code>${escapeHtml(h)}</code></div>`).join("") || "—"}</td>
        <td>${item.ancestry.map((i) => escapeHtml(basename(i))).join(" ← ")}</td>
        <td><button class="benign" data-subject="${escapeHtml(item.subject)}">mark benign</button></td>
      </tr>`).join("");
    this.root.innerHTML = `
      <div class="toolbar">
        <label>analyst <input data-role="annotator" placeholder="your name"
               value="${escapeHtml(this.annotator)}" /></label>
        <button data-role="refresh">refresh</button>
      </div>
      ${this.banner ? `<div class="banner error" data-role="banner">${escapeHtml(this.banner)}</div>` : ""}
      ${this.items.length === 0
        ? '<div class="empty" data-role="empty">nothing awaiting triage</div>'
        : `<table class="feed-table">
             <thead><tr><th>Level</th><th>Subject</th><th>Host</th><th>Hashes</th>
                        <th>Ancestry</th><th></th></tr></thead>
             <tbody>${rows}</tbody></table>`}`;
    const annotatorInput = this.root.querySelector('[data-role="annotator"]') as HTMLInputElement;
    annotatorInput.addEventListener("input", () => {
      this.annotator = annotatorInput.value.trim();
    });
    this.root.querySelector('[data-role="refresh"]')
      ?.addEventListener("click", () => void this.refresh());
    for (const button of this.root.querySelectorAll("button.benign")) {
      button.addEventListener("click", () => {
        void this.markBenign((button as HTMLElement).dataset.subject ?? "");
      });
    }
  }
}

function basename(path: string): string {
  const parts = path.split("\\");
  return parts[parts.length - 1] || path;
}
