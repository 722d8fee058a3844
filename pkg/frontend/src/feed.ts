// Live verdict feed: newest first, level filter chips, no client-side
// synthesis — every row is a server feed record.

import type { ApiClient, FeedSubscription } from "./api.js";
import type { ThreatLevel, VerdictRow } from "./types.js";

const LEVELS: ThreatLevel[] = ["High", "Medium", "Low", "Unknown"];

export class FeedView {
  private readonly api: ApiClient;
  private readonly root: HTMLElement;
  private rows: VerdictRow[] = [];
  private activeLevels = new Set<ThreatLevel>(LEVELS);
  private subscription: FeedSubscription | null = null;
  private lastCursor = 0;

  constructor(root: HTMLElement, api: ApiClient) {
    this.root = root;
    this.api = api;
  }

  async mount(): Promise<void> {
    this.root.innerHTML = `
      <div class="filter-chips" data-role="chips"></div>
      <div class="feed-status" data-role="status"></div>
      <table class="feed-table">
        <thead><tr>
          <th>Level</th><th>Subject</th><th>Host</th><th>Rules</th><th>Time</th>
        </tr></thead>
        <tbody data-role="rows"></tbody>
      </table>`;
    this.renderChips();
    const backlog = await this.api.verdictsAfter(0);
    for (const record of backlog.verdicts) {
      this.accept(record);
    }
    this.renderRows();
    this.subscribe();
  }

  unmount(): void {
    this.subscription?.stop();
    this.subscription = null;
  }

  /** Exposed for tests: push one record as the stream would. */
  accept(record: VerdictRow): void {
    if (record.cursor <= this.lastCursor) return; // replay protection
    this.lastCursor = record.cursor;
    this.rows.unshift(record);
    if (this.root.isConnected || this.root.childElementCount) this.renderRows();
  }

  get cursor(): number {
    return this.lastCursor;
  }

  visibleRows(): VerdictRow[] {
    return this.rows.filter((row) => this.activeLevels.has(row.level));
  }

  toggleLevel(level: ThreatLevel): void {
    if (this.activeLevels.has(level) && this.activeLevels.size === 1) {
      // last active chip toggles back to all
      this.activeLevels = new Set(LEVELS);
    } else if (this.activeLevels.size === LEVELS.length) {
      this.activeLevels = new Set([level]);
    } else if (this.activeLevels.has(level)) {
      this.activeLevels.delete(level);
    } else {
      this.activeLevels.add(level);
    }
    this.renderChips();
    this.renderRows();
  }

  private subscribe(): void {
    const status = this.root.querySelector('[data-role="status"]') as HTMLElement;
    this.subscription = this.api.subscribeFeed(this.lastCursor, {
      onRecord: (record) => this.accept(record),
      onStatus: (state) => {
        status.textContent = state === "reconnecting" ? "reconnecting…" : "";
      },
    });
  }

  private renderChips(): void {
    const holder = this.root.querySelector('[data-role="chips"]') as HTMLElement;
    holder.innerHTML = "";
    for (const level of LEVELS) {
      const chip = document.createElement("button");
      chip.className = `chip level-${level.toLowerCase()}` +
        (this.activeLevels.has(level) ? " active" : "");
      chip.textContent = level;
      chip.dataset.level = level;
      chip.addEventListener("click", () => this.toggleLevel(level));
      holder.appendChild(chip);
    }
  }

  private renderRows(): void {
    const body = this.root.querySelector('[data-role="rows"]') as HTMLElement;
    if (!body) return;
    body.innerHTML = "";
    for (const row of this.visibleRows()) {
      const tr = document.createElement("tr");
      tr.dataset.subject = row.subject;
      tr.innerHTML = `
        <td><span class="badge level-${row.level.toLowerCase()}">${row.level}</span>
            ${row.case_raised ? '<span class="badge case">case</span>' : ""}</td>
        <td><code>${escapeHtml(row.label)}</code><div class="sub">${escapeHtml(row.subject)}</div></td>
        <td>${escapeHtml(row.host)}</td>
        <td>${row.fired_rules.map((r) => `<code>${escapeHtml(r)}</code>`).join(" ") || "—"}</td>
        <td>${escapeHtml(row.assessed_at)}</td>`;
      body.appendChild(tr);
    }
  }
}

export function escapeHtml(text: string): string {
  return text.replace(/[&<>"']/g, (ch) => (
    { "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;", "'": "&#39;" }[ch] as string));
}
