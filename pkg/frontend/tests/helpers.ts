import type { AlertSummary } from "../src/types.js";

export const T0 = 1_600_000_200_000;
export const MINUTE = 60_000;

export function makeAlert(overrides: Partial<AlertSummary> = {}): AlertSummary {
  const windowStart = overrides.windowStart ?? T0;
  return {
    alertId: `a${windowStart}r1`,
    windowStart,
    revision: 1,
    summary: `Anomaly likelihood 0.9900 in window ${windowStart}: 1 anomalous feature(s) across web (1)`,
    counts: { web: 1 },
    likelihood: 0.99,
    reportLink: `/v1/reports/rep${windowStart}r1`,
    threadKey: `t${windowStart}`,
    createdAt: windowStart + MINUTE,
    latestFeedback: null,
    feedbackCount: 0,
    ...overrides,
  };
}

export function jsonResponse(data: unknown, status = 200): Response {
  return new Response(JSON.stringify(data), {
    status,
    headers: { "content-type": "application/json" },
  });
}

/** A promise with its settle handles exposed, for ordering tests. */
export class Deferred<T> {
  readonly promise: Promise<T>;
  resolve!: (value: T) => void;
  reject!: (reason?: unknown) => void;

  constructor() {
    this.promise = new Promise<T>((resolve, reject) => {
      this.resolve = resolve;
      this.reject = reject;
    });
  }
}

/** Fake fetch that records calls and replays queued responses in order. */
export interface RecordedCall {
  url: string;
  method: string;
  headers: Record<string, string>;
  body: unknown;
}

export function recordingFetch(
  responses: Array<Response | Promise<Response>>,
): { fetchFn: typeof fetch; calls: RecordedCall[] } {
  const calls: RecordedCall[] = [];
  const queue = [...responses];
  const fetchFn = (async (input: RequestInfo | URL, init?: RequestInit) => {
    calls.push({
      url: String(input),
      method: init?.method ?? "GET",
      headers: (init?.headers as Record<string, string>) ?? {},
      body: typeof init?.body === "string" ? JSON.parse(init.body) : undefined,
    });
    const next = queue.shift();
    if (!next) throw new Error("recordingFetch: no response queued");
    return next;
  }) as typeof fetch;
  return { fetchFn, calls };
}
