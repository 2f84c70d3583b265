import { spawn, type ChildProcess } from "node:child_process";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { DashboardClient } from "../src/api.js";
import { FEEDBACK_OPTIONS } from "../src/feedback.js";
import { renderFeed } from "../src/render.js";
import { FeedStore } from "../src/store.js";
import { groupIntoThreads } from "../src/threads.js";
import { MINUTE } from "./helpers.js";

// These run against a live service instance, not a fake fetch.

const PORT = 18000 + Math.floor(Math.random() * 20000);
const BASE = `http://127.0.0.1:${PORT}`;
let server: ChildProcess | undefined;

async function waitForServer(timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  let lastError: unknown;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/v1/status`);
      if (response.ok) return;
    } catch (error) {
      lastError = error;
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error(`fixture api never came up on ${BASE}: ${lastError}`);
}

beforeAll(async () => {
  const script = fileURLToPath(new URL("./fixture_server.py", import.meta.url));
  server = spawn("python3", [script, String(PORT)], {
    stdio: ["ignore", "ignore", "pipe"],
  });
  let stderr = "";
  server.stderr?.on("data", (chunk: Buffer) => (stderr += chunk.toString()));
  server.on("exit", (code) => {
    if (code) console.error(`fixture api exited ${code}:\n${stderr}`);
  });
  await waitForServer(45_000);
});

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("thread grouping against the live feed", () => {
  it("collapses the five-minute pair into one thread and keeps the distant alert separate", async () => {
    const client = new DashboardClient({ baseUrl: BASE });
    const alerts = await client.listAlerts();
    expect(alerts).toHaveLength(3);

    const threads = groupIntoThreads(alerts);
    expect(threads).toHaveLength(2);
    const pair = threads.find((t) => t.alerts.length === 2);
    const lone = threads.find((t) => t.alerts.length === 1);
    expect(pair).toBeDefined();
    expect(lone).toBeDefined();
    expect(pair!.alerts[1].windowStart - pair!.alerts[0].windowStart).toBe(
      5 * MINUTE,
    );
    expect(
      lone!.alerts[0].windowStart - pair!.alerts[1].windowStart,
    ).toBe(11 * MINUTE);

    const html = renderFeed({
      alerts,
      offline: false,
      lastSyncMs: null,
      notice: null,
    });
    expect(html.match(/<details class="thread"/g)).toHaveLength(1);
    expect(html).not.toContain("<details open");
    expect(html).toContain(`data-alert-id="${pair!.alerts[0].alertId}"`);
    expect(html).toContain(`data-alert-id="${pair!.alerts[1].alertId}"`);
    expect(html.match(/<article class="alert"/g)).toHaveLength(3);
  });
});

describe("feedback loop against the live service", () => {
  it("each of the four options posts its label and the view echoes the stored record", async () => {
    const client = new DashboardClient({ baseUrl: BASE });
    const store = new FeedStore(client, { user: "rami", pollMs: 3_600_000 });
    await store.refresh();
    const lone = groupIntoThreads(store.snapshot().alerts).find(
      (t) => t.alerts.length === 1,
    )!.alerts[0];

    for (const option of FEEDBACK_OPTIONS) {
      const accepted = await store.submitFeedback(lone.alertId, option.label);
      expect(accepted).toBe(true);
      const shown = store
        .snapshot()
        .alerts.find((a) => a.alertId === lone.alertId)!;
      expect(shown.latestFeedback?.label).toBe(option.label);
      expect(shown.latestFeedback?.submitter).toBe("rami");
    }

    const fromServer = (await client.listAlerts()).find(
      (a) => a.alertId === lone.alertId,
    )!;
    expect(fromServer.feedbackCount).toBe(4);
    expect(fromServer.latestFeedback?.label).toBe("NotSure");
  });

  it("a resubmission moves the latest label and originator while both records persist", async () => {
    const client = new DashboardClient({ baseUrl: BASE });
    const rami = new FeedStore(client, { user: "rami", pollMs: 3_600_000 });
    await rami.refresh();
    const target = groupIntoThreads(rami.snapshot().alerts).find(
      (t) => t.alerts.length === 2,
    )!.alerts[0];

    expect(await rami.submitFeedback(target.alertId, "NotAnomaly")).toBe(true);

    const vera = new FeedStore(client, { user: "vera", pollMs: 3_600_000 });
    await vera.refresh();
    expect(
      await vera.submitFeedback(target.alertId, "AnomalyImpactingClient"),
    ).toBe(true);

    const shown = vera
      .snapshot()
      .alerts.find((a) => a.alertId === target.alertId)!;
    expect(shown.latestFeedback).toMatchObject({
      label: "AnomalyImpactingClient",
      submitter: "vera",
    });

    const fromServer = (await client.listAlerts()).find(
      (a) => a.alertId === target.alertId,
    )!;
    expect(fromServer.feedbackCount).toBe(2); // history retained server-side
    expect(fromServer.latestFeedback).toMatchObject({
      label: "AnomalyImpactingClient",
      submitter: "vera",
    });
  });

  it("the report behind an alert resolves through its reportLink", async () => {
    const client = new DashboardClient({ baseUrl: BASE });
    const [first] = await client.listAlerts();
    const report = await client.getReport(first.reportLink);
    expect(report.alertId).toBe(first.alertId);
    expect(report.text).toContain("likelihood");
    expect(report.series).toHaveLength(1);
  });
});
