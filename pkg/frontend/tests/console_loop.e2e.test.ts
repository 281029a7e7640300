/** End-to-end console loop against a real simulator process.
 *
 * Spawns `python3 -m fednet run scenarios/console.json --serve` and
 * drives it through the same client the UI uses.  The demo scenario
 * probes the admin->files flow every 1000 virtual ms, holds a sensor
 * for manual onboarding, and leaves a resident free to roam — one
 * handle for each console action under test.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { dirname, resolve } from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, beforeAll, describe, expect, test } from "vitest";

import { ApiError, ConsoleClient } from "../src/client.js";
import type { EventRecord, SessionView } from "../src/types.js";

const here = dirname(fileURLToPath(import.meta.url));
const repoRoot = resolve(here, "../..");
const scenarioPath = resolve(repoRoot, "scenarios", "console.json");

const PORT = 18100 + (process.pid % 500);
const BASE = `http://127.0.0.1:${PORT}/api/v1`;
const ACTOR = "console-e2e";

const ADMIN = "001900000000001";
const RESIDENT = "001900000000002";
const SENSOR = "001900000000003";
const FILES_IP = "10.50.0.10";
const PROBE_INTERVAL_MS = 1000; // virtual ms between probes of the covered pair

const client = new ConsoleClient(BASE, { actor: ACTOR });
const sleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

let server: ChildProcess;
let serverOutput = "";

// One shared feed cursor: tests run in file order and accumulate the log.
let cursor = 0;
const log: EventRecord[] = [];

async function drain(timeoutMs = 1500): Promise<void> {
  const batch = await client.pollEvents(cursor, timeoutMs);
  if (batch.next > cursor) {
    log.push(...batch.records.slice(batch.records.length - (batch.next - cursor)));
    cursor = batch.next;
  }
}

async function waitForRecord(
  what: string,
  pred: (r: EventRecord) => boolean,
  deadlineMs = 20_000,
): Promise<EventRecord> {
  const seen = log.find(pred);
  if (seen !== undefined) {
    return seen;
  }
  const deadline = Date.now() + deadlineMs;
  while (Date.now() < deadline) {
    const before = log.length;
    await drain();
    const found = log.slice(before).find(pred);
    if (found !== undefined) {
      return found;
    }
  }
  throw new Error(`no ${what} within ${deadlineMs}ms (${log.length} records seen)`);
}

async function waitForView(
  what: string,
  pred: (view: SessionView) => boolean,
  deadlineMs = 20_000,
): Promise<SessionView> {
  const deadline = Date.now() + deadlineMs;
  for (;;) {
    const view = await client.getSessions();
    if (pred(view)) {
      return view;
    }
    if (Date.now() > deadline) {
      throw new Error(`sessions never showed ${what}: ${JSON.stringify(view.sessions)}`);
    }
    await sleep(100);
  }
}

const active = (view: SessionView) => view.sessions.filter((s) => s.state === "active");

beforeAll(async () => {
  server = spawn(
    "python3",
    ["-m", "fednet", "run", scenarioPath, "--serve", "--port", String(PORT), "--speed", "4"],
    { cwd: repoRoot, stdio: ["ignore", "pipe", "pipe"] },
  );
  server.stdout?.on("data", (chunk: Buffer) => (serverOutput += chunk.toString()));
  server.stderr?.on("data", (chunk: Buffer) => (serverOutput += chunk.toString()));

  const deadline = Date.now() + 30_000;
  for (;;) {
    try {
      await client.getPolicies();
      break;
    } catch {
      if (Date.now() > deadline || server.exitCode !== null) {
        throw new Error(`server did not come up on :${PORT}\n${serverOutput}`);
      }
      await sleep(100);
    }
  }
  // All three timeline attaches land within the first second of virtual time.
  await waitForView("three subscribers", (view) => view.sessions.length === 3);
});

afterAll(async () => {
  if (server === undefined || server.exitCode !== null) {
    return;
  }
  const exited = new Promise<void>((r) => server.once("exit", () => r()));
  server.kill("SIGINT");
  await Promise.race([exited, sleep(10_000)]);
  if (server.exitCode === null) {
    server.kill("SIGKILL");
  }
});

describe("console loop", () => {
  let denyVersion = 0;

  test("a deny rule flips the covered pair's next flow decision within one probe interval", async () => {
    const baseline = await waitForRecord(
      "baseline files probe",
      (r) => r.event === "flow_decision" && r.fields.dst === FILES_IP,
    );
    expect(baseline.fields.action).toBe("permit");
    expect(baseline.fields.src).toBe("10.42.0.2"); // the admin's session address

    const stamp = await client.addRule({
      rule_id: "ui-deny-files",
      priority: 1,
      subject: { roles: ["admin"] },
      action: "access",
      resource: "files",
      effect: "deny",
      scope: "any",
    });
    denyVersion = stamp.version;
    expect(denyVersion).toBeGreaterThan(1);

    const ack = await waitForRecord(
      `push ack for v${denyVersion}`,
      (r) =>
        r.event === "push_acked" &&
        r.fields.domain === "private" &&
        r.fields.version === denyVersion,
    );
    const next = await waitForRecord(
      "first files probe after the ack",
      (r) => r.event === "flow_decision" && r.fields.dst === FILES_IP && r.ts > ack.ts,
    );
    expect(next.fields.action).toBe("deny");
    expect(next.ts - ack.ts).toBeLessThanOrEqual(PROBE_INTERVAL_MS);
  });

  test("approving the pending onboarding yields exactly one new active session row", async () => {
    const pending = (await client.getOnboarding()).pending;
    expect(pending).toHaveLength(1);
    const item = pending[0]!;
    expect(item.imsi).toBe(SENSOR);
    expect(item.rule).toBe("r-attach-iot");

    const before = await client.getSessions();
    const activeBefore = active(before).length;

    await client.resolveOnboarding(item.session_id, "approve");
    const after = await waitForView(
      "one more active row",
      (view) => active(view).length === activeBefore + 1,
    );
    expect(after.sessions).toHaveLength(before.sessions.length);
    const sensor = after.sessions.find((s) => s.imsi === SENSOR);
    expect(sensor?.state).toBe("active");
    expect(sensor?.slice_id).toBe("s-iot");
    expect(sensor?.permitted).toContain("access:iot-hub");
    expect((await client.getOnboarding()).pending).toHaveLength(0);

    // The confirmation is single-use: replaying it changes nothing.
    const replay = await client
      .resolveOnboarding(item.session_id, "approve")
      .catch((error) => error as ApiError);
    expect(replay).toBeInstanceOf(ApiError);
    expect((replay as ApiError).status).toBe(404);
    expect((replay as ApiError).code).toBe("unknown_onboarding");
    const unchanged = await client.getSessions();
    expect(active(unchanged)).toHaveLength(activeBefore + 1);
    expect(unchanged.sessions).toHaveLength(before.sessions.length);
  });

  test("a triggered roam re-homes the subscriber and keeps the service session", async () => {
    const before = await client.getSessions();
    const resident = before.sessions.find((s) => s.imsi === RESIDENT);
    expect(resident?.domain).toBe("private");
    const continuity = resident?.service_session_id;
    expect(continuity).not.toBeNull();

    const result = await client.triggerRoam(RESIDENT, "public");
    expect(result.from_domain).toBe("private");
    expect(result.to_domain).toBe("public");

    const switched = await waitForRecord(
      "sim switch",
      (r) => r.event === "sim_switched" && r.fields.imsi === RESIDENT,
    );
    const admitted = await waitForRecord(
      "re-attach in the target domain",
      (r) =>
        r.event === "attach_admitted" &&
        r.fields.imsi === RESIDENT &&
        r.fields.domain === "public",
    );
    expect(admitted.ts).toBe(switched.ts); // make-before-break: same virtual instant

    const view = await waitForView(
      "the resident active in public",
      (v) => v.sessions.some((s) => s.imsi === RESIDENT && s.domain === "public" && s.state === "active"),
    );
    const moved = view.sessions.find((s) => s.imsi === RESIDENT && s.domain === "public");
    expect(moved?.service_session_id).toBe(continuity);
    expect(view.sessions.filter((s) => s.imsi === RESIDENT)).toHaveLength(1);
  });

  test("every console-initiated change has a matching audit record in the feed", async () => {
    const all = (await client.pollEvents(0, 0)).records;

    const policyAudit = all.filter(
      (r) => r.event === "policy_updated" && r.fields.actor === ACTOR,
    );
    expect(policyAudit).toHaveLength(1);
    expect(policyAudit[0]?.fields.version).toBe(denyVersion);
    expect(policyAudit[0]?.fields.op).toBe("add_rule");

    const onboardingAudit = all.filter(
      (r) => r.event === "onboarding_resolved" && r.fields.actor === ACTOR,
    );
    expect(onboardingAudit).toHaveLength(1);
    expect(onboardingAudit[0]?.fields.imsi).toBe(SENSOR);
    expect(onboardingAudit[0]?.fields.approved).toBe(true);

    const roamAudit = all.filter(
      (r) => r.event === "sim_switched" && r.fields.imsi === RESIDENT,
    );
    expect(roamAudit).toHaveLength(1);
    expect(roamAudit[0]?.fields.to_domain).toBe("public");

    // The console's actor is distinguishable from the scenario's own load.
    const initial = all.find((r) => r.event === "policy_updated" && r.fields.version === 1);
    expect(initial?.fields.actor).toBe("scenario-load");
  });

  test("a stale conditional write is refused with a version conflict", async () => {
    const current = await client.getPolicies();
    const error = await client
      .replacePolicies(current.rules, { version: current.version - 1 })
      .catch((e) => e as ApiError);
    expect(error).toBeInstanceOf(ApiError);
    expect((error as ApiError).status).toBe(409);
    expect((error as ApiError).code).toBe("version_conflict");
    expect((await client.getPolicies()).version).toBe(current.version);
  });
});
