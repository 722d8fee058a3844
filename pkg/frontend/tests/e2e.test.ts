// Full round trip against the real service: the console's client talking to
// a spawned `sentinel run` over plain HTTP.  Covers the analyst loop:
// unknown appears -> mark benign flips the live feed to Low -> a known-bad
// hash is rejected with the server's reason -> the pending restore executes
// on approval.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, writeFileSync, readFileSync, existsSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import type { VerdictRow } from "../src/types.js";

const REPO_ROOT = resolve(fileURLToPath(import.meta.url), "../../..");
const FIXTURES = join(REPO_ROOT, "tests", "fixtures");
const TOKEN = "e2e-frontend-token";

let service: ChildProcess | null = null;
let baseUrl = "";
let workDir = "";

async function waitForBanner(child: ChildProcess): Promise<string> {
  return new Promise((resolvePromise, rejectPromise) => {
    const timer = setTimeout(() => rejectPromise(new Error("service did not start")), 20000);
    let buffer = "";
    child.stdout?.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const match = buffer.match(/listening on 127\.0\.0\.1:(\d+)/);
      if (match) {
        clearTimeout(timer);
        resolvePromise(match[1]);
      }
    });
    child.on("exit", (code) => {
      clearTimeout(timer);
      rejectPromise(new Error(`service exited early (${code}): ${buffer}`));
    });
  });
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "sentinel-e2e-"));
  const config = {
    kb_bundles: [join(FIXTURES, "wannacry_bundle.json"),
                 join(FIXTURES, "whitelist_bundle.json")],
    journal_dir: join(workDir, "journal"),
    listen: "127.0.0.1:0",
    token: TOKEN,
  };
  const configPath = join(workDir, "config.json");
  writeFileSync(configPath, JSON.stringify(config));
  service = spawn("python3", ["-m", "sentinel.cli", "run", "--config", configPath], {
    cwd: REPO_ROOT,
    stdio: ["ignore", "pipe", "pipe"],
  });
  const port = await waitForBanner(service);
  baseUrl = `http://127.0.0.1:${port}`;
}, 30000);

afterAll(() => {
  service?.kill("SIGTERM");
});

function eventLine(guid: string, sha: string, image: string): string {
  return JSON.stringify({
    event_id: 1,
    utc_time: "2024-03-07 12:00:00",
    host: "WS-E2E",
    user: "CORP\\dana",
    process_guid: guid,
    process_id: 4000,
    image,
    command_line: image,
    hashes: { SHA256: sha },
  });
}

async function postEvents(body: string): Promise<void> {
  const response = await fetch(`${baseUrl}/events`, {
    method: "POST",
    headers: { Authorization: `Bearer ${TOKEN}` },
    body,
  });
  expect(response.status).toBe(200);
}

describe("analyst round trip against the live service", () => {
  it("walks the full triage loop", async () => {
    const api = new ApiClient(baseUrl, TOKEN, { pollIntervalMs: 50, pollWaitS: 2 });

    // an unknown process appears in the queue
    await postEvents(eventLine("{E2E-U1}", "feedc0de".repeat(8), "C:\\tools\\helper.exe"));
    const unknowns = await api.unknowns();
    expect(unknowns.map((u) => u.subject)).toContain("{E2E-U1}");

    // subscribe to the live feed, then mark benign: the Low lands without any reload
    const page = await api.verdictsAfter(0);
    const liveRows: VerdictRow[] = [];
    const subscription = api.subscribeFeed(page.cursor, {
      onRecord: (record) => liveRows.push(record),
    });
    const outcome = await api.markBenign("{E2E-U1}", "analyst-e2e");
    expect(outcome.level).toBe("Low");
    const deadline = Date.now() + 8000;
    while (Date.now() < deadline &&
           !liveRows.some((r) => r.subject === "{E2E-U1}" && r.level === "Low")) {
      await new Promise((resolvePromise) => setTimeout(resolvePromise, 100));
    }
    subscription.stop();
    const flips = liveRows.filter((r) => r.subject === "{E2E-U1}");
    expect(flips.map((r) => r.level)).toEqual(["Low"]);
    expect((await api.unknowns()).map((u) => u.subject)).not.toContain("{E2E-U1}");

    // a known-malicious hash is refused with the server's reason
    await postEvents(eventLine("{E2E-U2}", "5ca1ab1e".repeat(8), "C:\\Windows\\tasksche.exe"));
    // that hash is the WannaCry indicator: the subject is High, so triage refuses;
    // the dedicated known-malicious rejection needs an Unknown subject whose hash
    // only later becomes an IoC, which the server-side suite covers. Here we
    // assert the console-visible behavior: the error envelope surfaces.
    const error = await api.markBenign("{E2E-U2}", "analyst-e2e").catch((e) => e);
    expect(error.status).toBeGreaterThanOrEqual(400);
    expect(String(error.message)).not.toBe("");

    // the High verdict queued a restore for approval; approving journals it
    const approvals = await api.approvals();
    expect(approvals).toHaveLength(1);
    expect(approvals[0].command.action).toBe("restore");
    const resolved = await api.decide(approvals[0].record_id, "approve", "analyst-e2e");
    expect(resolved.status).toBe("executed");
    expect(resolved.decided_at).toBeTruthy();
    const journalPath = join(workDir, "journal", "host-restore.jsonl");
    expect(existsSync(journalPath)).toBe(true);
    const entries = readFileSync(journalPath, "utf-8").trim().split("\n").map(
      (line) => JSON.parse(line));
    expect(entries).toHaveLength(1);
    expect(entries[0].command.action).toBe("restore");
    expect(entries[0].command.target.device.hostname).toBe("WS-E2E");

    // double approval is a clean 409 for the console to surface
    const conflict = await api.decide(approvals[0].record_id, "approve", "x").catch((e) => e);
    expect(conflict.status).toBe(409);

    // pivot data flows through query + neighborhood
    const entity = await api.resolveHash("5ca1ab1e".repeat(8));
    expect(entity).toBe("indicator--wcry-hash");
    const triples = await api.neighborhood(entity!, 2);
    expect(triples.length).toBeGreaterThan(20);
  }, 40000);
});
