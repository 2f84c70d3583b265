import { describe, expect, it } from "vitest";

import { DashboardClient } from "../src/api.js";
import { FEEDBACK_OPTIONS } from "../src/feedback.js";
import { renderAlertEntry } from "../src/render.js";
import { FeedStore } from "../src/store.js";
import type { FeedbackRecord } from "../src/types.js";
import {
  Deferred,
  jsonResponse,
  makeAlert,
  recordingFetch,
} from "./helpers.js";

const BASE = "http://example.test:8000";

function feedbackDoc(
  alertId: string,
  label: string,
  submitter: string,
  seq: number,
): FeedbackRecord {
  return {
    alertId,
    label: label as FeedbackRecord["label"],
    submitter,
    submittedAt: 1_700_000_000_000 + seq,
    seq,
  };
}

async function storeWith(
  responses: Array<Response | Promise<Response>>,
  user = "maria",
) {
  const alert = makeAlert();
  const { fetchFn, calls } = recordingFetch([jsonResponse([alert]), ...responses]);
  const client = new DashboardClient({ baseUrl: BASE, fetchFn });
  const store = new FeedStore(client, { user, pollMs: 3_600_000 });
  await store.refresh();
  return { store, calls, alert };
}

describe("feedback options", () => {
  it("are exactly the four wire labels", () => {
    expect(FEEDBACK_OPTIONS.map((o) => o.label)).toEqual([
      "AnomalyImpactingClient",
      "AnomalyNoImpact",
      "NotAnomaly",
      "NotSure",
    ]);
  });

  it("every alert entry renders all four buttons and nothing else", () => {
    const html = renderAlertEntry(makeAlert());
    const buttons = [...html.matchAll(/data-label="([^"]+)"/g)].map((m) => m[1]);
    expect(buttons).toEqual(FEEDBACK_OPTIONS.map((o) => o.label));
  });

  it.each(FEEDBACK_OPTIONS.map((o) => [o.label] as const))(
    "clicking %s posts exactly that label",
    async (label) => {
      const { store, calls, alert } = await storeWith([
        jsonResponse(feedbackDoc("a", label, "maria", 1)),
      ]);
      const accepted = await store.submitFeedback(alert.alertId, label);
      expect(accepted).toBe(true);
      const post = calls.find((c) => c.method === "POST")!;
      expect(post.url).toBe(`${BASE}/v1/alerts/${alert.alertId}/feedback`);
      expect(post.body).toEqual({ label, submitter: "maria" });
    },
  );
});

describe("optimistic updates", () => {
  it("flips the badge before the server answers", async () => {
    const gate = new Deferred<Response>();
    const { store, alert } = await storeWith([gate.promise]);
    const pending = store.submitFeedback(alert.alertId, "NotAnomaly");
    const shown = store.snapshot().alerts[0];
    expect(shown.latestFeedback).toMatchObject({
      label: "NotAnomaly",
      submitter: "maria",
    });
    expect(shown.feedbackCount).toBe(1);
    gate.resolve(jsonResponse(feedbackDoc(alert.alertId, "NotAnomaly", "maria", 1)));
    expect(await pending).toBe(true);
    expect(store.snapshot().alerts[0].latestFeedback?.label).toBe("NotAnomaly");
  });

  it("rolls back the badge and surfaces a notice when the post fails", async () => {
    const { store, alert } = await storeWith([jsonResponse({ detail: "down" }, 503)]);
    const accepted = await store.submitFeedback(alert.alertId, "NotSure");
    expect(accepted).toBe(false);
    const shown = store.snapshot().alerts[0];
    expect(shown.latestFeedback).toBeNull();
    expect(shown.feedbackCount).toBe(0);
    expect(store.snapshot().notice).toContain("feedback failed");
  });

  it("restores the previous label, not an empty badge, on rollback", async () => {
    const previous = {
      label: "NotAnomaly" as const,
      submitter: "rami",
      submittedAt: 1,
    };
    const alert = makeAlert({ latestFeedback: previous, feedbackCount: 1 });
    const { fetchFn } = recordingFetch([
      jsonResponse([alert]),
      jsonResponse({ detail: "down" }, 500),
    ]);
    const store = new FeedStore(new DashboardClient({ baseUrl: BASE, fetchFn }), {
      user: "maria",
      pollMs: 3_600_000,
    });
    await store.refresh();
    await store.submitFeedback(alert.alertId, "AnomalyNoImpact");
    expect(store.snapshot().alerts[0].latestFeedback).toEqual(previous);
    expect(store.snapshot().alerts[0].feedbackCount).toBe(1);
  });

  it("serializes posts for the same alert", async () => {
    const first = new Deferred<Response>();
    const { store, calls, alert } = await storeWith([
      first.promise,
      jsonResponse(feedbackDoc("a", "NotSure", "maria", 2)),
    ]);
    const one = store.submitFeedback(alert.alertId, "NotAnomaly");
    const two = store.submitFeedback(alert.alertId, "NotSure");
    await Promise.resolve();
    // second POST must wait for the first to settle
    expect(calls.filter((c) => c.method === "POST")).toHaveLength(1);
    first.resolve(jsonResponse(feedbackDoc(alert.alertId, "NotAnomaly", "maria", 1)));
    expect(await one).toBe(true);
    expect(await two).toBe(true);
    expect(calls.filter((c) => c.method === "POST")).toHaveLength(2);
  });

  it("a second submission replaces the displayed label and originator", async () => {
    // someone else labeled it earlier; vera overrides
    const alert = makeAlert({
      latestFeedback: { label: "NotAnomaly", submitter: "rami", submittedAt: 1 },
      feedbackCount: 1,
    });
    const { fetchFn } = recordingFetch([
      jsonResponse([alert]),
      jsonResponse(feedbackDoc(alert.alertId, "AnomalyImpactingClient", "vera", 2)),
    ]);
    const store = new FeedStore(new DashboardClient({ baseUrl: BASE, fetchFn }), {
      user: "vera",
      pollMs: 3_600_000,
    });
    await store.refresh();
    await store.submitFeedback(alert.alertId, "AnomalyImpactingClient");
    const shown = store.snapshot().alerts[0];
    expect(shown.latestFeedback).toMatchObject({
      label: "AnomalyImpactingClient",
      submitter: "vera",
    });
    const html = renderAlertEntry(shown);
    expect(html).toContain("Anomaly (impacting client) by vera");
  });
});
