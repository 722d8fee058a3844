// Shared test doubles: canned fetch responses and a controllable feed stub.

import { vi } from "vitest";
import type { ApiClient } from "../src/api.js";
import type { ApprovalItem, UnknownItem, VerdictRow } from "../src/types.js";

export function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export function verdictRow(overrides: Partial<VerdictRow> = {}): VerdictRow {
  return {
    cursor: 1,
    subject: "{G-0001}",
    subject_kind: "process",
    host: "WS-1",
    label: "C:\\tools\\a.exe",
    level: "Unknown",
    fired_rules: [],
    case_raised: false,
    evidence: [],
    assessed_at: "2024-03-07 09:00:00",
    ...overrides,
  };
}

export function unknownItem(overrides: Partial<UnknownItem> = {}): UnknownItem {
  return {
    subject: "{G-0001}",
    subject_kind: "process",
    host: "WS-1",
    label: "C:\\tools\\a.exe",
    level: "Unknown",
    hashes: { SHA256: "ab".repeat(32) },
    ancestry: ["C:\\tools\\a.exe", "C:\\Windows\\explorer.exe"],
    assessed_at: "2024-03-07 09:00:00",
    ...overrides,
  };
}

export function approvalItem(overrides: Partial<ApprovalItem> = {}): ApprovalItem {
  return {
    record_id: "d-0001",
    coa_id: "coa--wcry-restore",
    command: {
      action: "restore",
      target: { device: { hostname: "WS-042" } },
      args: { response_requested: "complete" },
    },
    disposition: "recommend",
    status: "pending-approval",
    created_at: "2017-05-12 07:44:01",
    ...overrides,
  };
}

/** Structural stub standing in for ApiClient in view tests. */
export interface FeedHandle {
  emit(record: VerdictRow): void;
}

export function stubApi(parts: Partial<Record<keyof ApiClient, unknown>> = {}):
    { api: ApiClient; feed: FeedHandle } {
  let onRecord: ((r: VerdictRow) => void) | null = null;
  const base = {
    verdictsAfter: vi.fn(async () => ({ verdicts: [], cursor: 0 })),
    subscribeFeed: vi.fn((_after: number, callbacks: { onRecord(r: VerdictRow): void }) => {
      onRecord = callbacks.onRecord;
      return { stop: vi.fn() };
    }),
    unknowns: vi.fn(async () => []),
    markBenign: vi.fn(async () => ({ level: "Low" })),
    approvals: vi.fn(async () => []),
    decide: vi.fn(async () => approvalItem({ status: "executed" })),
    query: vi.fn(async () => []),
    neighborhood: vi.fn(async () => []),
    describe: vi.fn(async () => ({ id: "x", kind: "Malware", props: {} })),
    resolveHash: vi.fn(async () => null),
    stats: vi.fn(async () => ({})),
    setToken: vi.fn(),
  };
  const api = { ...base, ...parts } as unknown as ApiClient;
  return {
    api,
    feed: {
      emit(record: VerdictRow) {
        if (!onRecord) throw new Error("feed not subscribed yet");
        onRecord(record);
      },
    },
  };
}

export function flushMicrotasks(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}
