// Pending course-of-action approvals: pretty-printed OpenC2 command bodies
// with approve/deny controls; conflicts (already-resolved records) surface
// as a banner instead of breaking the view.

import { ApiClient, ApiRequestError } from "./api.js";
import { escapeHtml } from "./feed.js";
import type { ApprovalItem } from "./types.js";

export class ApprovalsView {
  private readonly api: ApiClient;
  private readonly root: HTMLElement;
  private pending: ApprovalItem[] = [];
  private resolved: ApprovalItem[] = [];
  private banner = "";
  private approver = "";

  constructor(root: HTMLElement, api: ApiClient) {
    this.root = root;
    this.api = api;
  }

  async mount(): Promise<void> {
    this.pending = await this.api.approvals();
    this.render();
  }

  async refresh(): Promise<void> {
    this.pending = await this.api.approvals();
    this.render();
  }

  pendingItems(): ApprovalItem[] {
    return [...this.pending];
  }

  resolvedItems(): ApprovalItem[] {
    return [...this.resolved];
  }

  get bannerText(): string {
    return this.banner;
  }

  async decide(recordId: string, decision: "approve" | "deny"): Promise<void> {
    if (!this.approver) {
      this.banner = "enter your approver name first";
      this.render();
      return;
    }
    this.banner = "";
    try {
      const record = await this.api.decide(recordId, decision, this.approver);
      this.pending = this.pending.filter((item) => item.record_id !== recordId);
      this.resolved.unshift(record);
    } catch (error) {
      if (error instanceof ApiRequestError && error.status === 409) {
        this.banner = `record already resolved: ${error.message}`;
        await this.refreshQuietly();
      } else {
        this.banner = error instanceof ApiRequestError
          ? `${error.code}: ${error.message}` : String(error);
      }
    }
    this.render();
  }

  private async refreshQuietly(): Promise<void> {
    try {
      this.pending = await this.api.approvals();
    } catch {
      // keep the stale list; the banner already explains the state
    }
  }

  private render(): void {
    const card = (item: ApprovalItem, controls: boolean) => `
      <div class="approval-card" data-record="${escapeHtml(item.record_id)}">
        <div class="approval-head">
          <code>${escapeHtml(item.record_id)}</code>
          <span class="badge status-${escapeHtml(item.status)}">${escapeHtml(item.status)}</span>
          ${item.approver ? `<span class="sub">by ${escapeHtml(item.approver)}</span>` : ""}
          ${item.decided_at ? `<span class="sub">${escapeHtml(item.decided_at)}</span>` : ""}
        </div>
        <pre class="command">${escapeHtml(JSON.stringify(item.command, null, 2))}</pre>
        ${controls ? `
          <div class="approval-actions">
            <button class="approve" data-record="${escapeHtml(item.record_id)}">approve</button>
            <button class="deny" data-record="${escapeHtml(item.record_id)}">deny</button>
          </div>` : ""}
      </div>`;
    this.root.innerHTML = `
      <div class="toolbar">
        <label>approver <input data-role="approver" placeholder="your name"
               value="${escapeHtml(this.approver)}" /></label>
        <button data-role="refresh">refresh</button>
      </div>
      ${this.banner ? `<div class="banner error" data-role="banner">${escapeHtml(this.banner)}</div>` : ""}
      ${this.pending.length === 0
        ? '<div class="empty" data-role="empty">no pending approvals</div>'
        : this.pending.map((item) => card(item, true)).join("")}
      ${this.resolved.length
        ? `<h3>recently resolved</h3>${this.resolved.map((item) => card(item, false)).join("")}`
        : ""}`;
    const approverInput = this.root.querySelector('[data-role="approver"]') as HTMLInputElement;
    approverInput.addEventListener("input", () => {
      this.approver = approverInput.value.trim();
    });
    this.root.querySelector('[data-role="refresh"]')
      ?.addEventListener("click", () => void this.refresh());
    for (const button of this.root.querySelectorAll("button.approve, button.deny")) {
      const recordId = (button as HTMLElement).dataset.record ?? "";
      const decision = button.classList.contains("approve") ? "approve" : "deny";
      button.addEventListener("click", () => void this.decide(recordId, decision));
    }
  }
}
