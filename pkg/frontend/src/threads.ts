import type { AlertSummary } from "./types.js";

// Threading is decided server-side: alerts close in time share a threadKey.
// The feed only groups by that key; it never recomputes time gaps.

export interface Thread {
  threadKey: string;
  /** Oldest first, matching the order inside a chat thread. */
  alerts: AlertSummary[];
  newest: AlertSummary;
}

export function groupIntoThreads(alerts: AlertSummary[]): Thread[] {
  const byKey = new Map<string, AlertSummary[]>();
  for (const alert of alerts) {
    const bucket = byKey.get(alert.threadKey);
    if (bucket) bucket.push(alert);
    else byKey.set(alert.threadKey, [alert]);
  }
  const threads: Thread[] = [];
  for (const [threadKey, group] of byKey) {
    group.sort((a, b) => a.windowStart - b.windowStart || a.revision - b.revision);
    threads.push({ threadKey, alerts: group, newest: group[group.length - 1] });
  }
  // freshest incident on top
  threads.sort((a, b) => b.newest.windowStart - a.newest.windowStart);
  return threads;
}
