// Thin client over the sentinel service API.  All console state lives on
// the server; this module only moves JSON and keeps the feed cursor.

import type {
  ApprovalItem, EntityView, TripleRow, UnknownItem, VerdictRow,
} from "./types.js";

export class ApiRequestError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.status = status;
    this.code = code;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface FeedSubscription {
  stop(): void;
}

export interface FeedCallbacks {
  onRecord(record: VerdictRow): void;
  onStatus?(state: "stream" | "poll" | "reconnecting"): void;
}

interface EventSourceLike {
  onmessage: ((event: MessageEvent) => void) | null;
  onerror: ((event: unknown) => void) | null;
  close(): void;
}

export interface ApiClientOptions {
  fetchFn?: FetchLike;
  eventSourceFactory?: ((url: string) => EventSourceLike) | null;
  pollIntervalMs?: number;
  pollWaitS?: number;
}

export class ApiClient {
  readonly baseUrl: string;
  private token: string;
  private readonly fetchFn: FetchLike;
  private readonly eventSourceFactory: ((url: string) => EventSourceLike) | null;
  private readonly pollIntervalMs: number;
  private readonly pollWaitS: number;

  constructor(baseUrl: string, token: string, options: ApiClientOptions = {}) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.token = token;
    this.fetchFn = options.fetchFn ?? ((input, init) => fetch(input, init));
    // EventSource cannot send an Authorization header, so the live feed
    // defaults to long-polling; a factory is injectable for tests/proxies.
    this.eventSourceFactory = options.eventSourceFactory ?? null;
    this.pollIntervalMs = options.pollIntervalMs ?? 250;
    this.pollWaitS = options.pollWaitS ?? 20;
  }

  setToken(token: string): void {
    this.token = token;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = {
      method,
      headers: { Authorization: `Bearer ${this.token}` },
    };
    if (body !== undefined) {
      init.headers = { ...init.headers, "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    const text = await response.text();
    let payload: unknown = null;
    try {
      payload = text ? JSON.parse(text) : null;
    } catch {
      payload = null;
    }
    if (!response.ok) {
      const error = (payload as { error?: { code?: string; message?: string } })?.error;
      throw new ApiRequestError(
        response.status,
        error?.code ?? `http-${response.status}`,
        error?.message ?? `request failed with ${response.status}`,
      );
    }
    return payload as T;
  }

  // -- feed -----------------------------------------------------------------

  async verdictsAfter(cursor: number, waitS = 0): Promise<{ verdicts: VerdictRow[]; cursor: number }> {
    return this.request("GET", `/verdicts?after=${cursor}&wait=${waitS}`);
  }

  /** Live feed: server-sent events when a factory is provided, long-poll
   * otherwise.  Resumes from `after` so reconnects never duplicate rows. */
  subscribeFeed(after: number, callbacks: FeedCallbacks): FeedSubscription {
    let cursor = after;
    let stopped = false;

    const startPolling = () => {
      callbacks.onStatus?.("poll");
      const loop = async () => {
        while (!stopped) {
          try {
            const page = await this.verdictsAfter(cursor, this.pollWaitS);
            for (const record of page.verdicts) {
              if (record.cursor > cursor) {
                cursor = record.cursor;
                callbacks.onRecord(record);
              }
            }
          } catch {
            callbacks.onStatus?.("reconnecting");
            await sleep(this.pollIntervalMs * 4);
          }
          await sleep(this.pollIntervalMs);
        }
      };
      void loop();
    };

    if (this.eventSourceFactory) {
      const url = `${this.baseUrl}/verdicts/stream?after=${cursor}`;
      const source = this.eventSourceFactory(url);
      callbacks.onStatus?.("stream");
      source.onmessage = (event) => {
        const record = JSON.parse(event.data) as VerdictRow;
        if (record.cursor > cursor) {
          cursor = record.cursor;
          callbacks.onRecord(record);
        }
      };
      source.onerror = () => {
        if (!stopped) {
          source.close();
          callbacks.onStatus?.("reconnecting");
          startPolling();
        }
      };
      return {
        stop() {
          stopped = true;
          source.close();
        },
      };
    }

    startPolling();
    return {
      stop() {
        stopped = true;
      },
    };
  }

  // -- triage -----------------------------------------------------------------

  async unknowns(): Promise<UnknownItem[]> {
    const payload = await this.request<{ unknowns: UnknownItem[] }>("GET", "/unknowns");
    return payload.unknowns;
  }

  async markBenign(subject: string, annotator: string): Promise<{ level: string }> {
    return this.request("POST", `/unknowns/${encodeURIComponent(subject)}/benign`, { annotator });
  }

  // -- approvals ----------------------------------------------------------------

  async approvals(): Promise<ApprovalItem[]> {
    const payload = await this.request<{ approvals: ApprovalItem[] }>("GET", "/approvals");
    return payload.approvals;
  }

  async decide(recordId: string, decision: "approve" | "deny", approver: string): Promise<ApprovalItem> {
    return this.request("POST", `/approvals/${encodeURIComponent(recordId)}`, { decision, approver });
  }

  // -- knowledge ------------------------------------------------------------------

  async query(patterns: (string | number)[][], filters: { var: string; regex: string }[] = []):
      Promise<Record<string, string>[]> {
    const payload = await this.request<{ bindings: Record<string, string>[] }>(
      "POST", "/query", { patterns, filters });
    return payload.bindings;
  }

  async neighborhood(id: string, depth: number): Promise<TripleRow[]> {
    const payload = await this.request<{ triples: TripleRow[] }>(
      "GET", `/kb/neighborhood?id=${encodeURIComponent(id)}&depth=${depth}`);
    return payload.triples;
  }

  async describe(id: string): Promise<EntityView> {
    return this.request("GET", `/kb/describe?id=${encodeURIComponent(id)}`);
  }

  async stats(): Promise<Record<string, unknown>> {
    return this.request("GET", "/stats");
  }

  /** Resolve a bare lowercase hash to the entity holding it, if any. */
  async resolveHash(hex: string): Promise<string | null> {
    const algorithm = { 32: "md5", 40: "sha1", 64: "sha256" }[hex.length];
    if (!algorithm) return null;
    const rows = await this.query([["?e", `hash.${algorithm}`, hex.toLowerCase()]]);
    return rows.length ? rows[0]["?e"] : null;
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
