import { renderSeriesChart } from "./charts.js";
import { FEEDBACK_OPTIONS, describeFeedback } from "./feedback.js";
import { groupIntoThreads, type Thread } from "./threads.js";
import type { FeedState } from "./store.js";
import type { AlertSummary, LatestFeedback, Report } from "./types.js";

// Pure HTML-string renderers; main.ts owns the live DOM. Keeping them pure
// lets the tests assert markup without a browser.

const escapeHtml = (value: unknown): string =>
  String(value).replace(
    /[&<>"']/g,
    (c) =>
      ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;", "'": "&#39;" })[c]!,
  );

const iso = (ms: number): string => new Date(ms).toISOString();

export function renderFeedbackBadge(latest: LatestFeedback | null): string {
  const cls = latest ? "badge" : "badge none";
  return `<span class="${cls}">${escapeHtml(describeFeedback(latest))}</span>`;
}

function renderFeedbackButtons(alert: AlertSummary): string {
  return FEEDBACK_OPTIONS.map(
    (option) =>
      `<button class="fb" data-alert-id="${escapeHtml(alert.alertId)}" data-label="${option.label}">${escapeHtml(option.display)}</button>`,
  ).join("");
}

export function renderAlertEntry(alert: AlertSummary): string {
  const feedbackNote =
    alert.feedbackCount > 1
      ? `<span class="fb-count">${alert.feedbackCount} submissions</span>`
      : "";
  return `<article class="alert" data-alert-id="${escapeHtml(alert.alertId)}">
  <header>
    <time datetime="${iso(alert.windowStart)}">${iso(alert.windowStart)}</time>
    <span class="lik">likelihood ${alert.likelihood.toFixed(4)}</span>
  </header>
  <p class="summary">${escapeHtml(alert.summary)}</p>
  ${renderFeedbackBadge(alert.latestFeedback)}${feedbackNote}
  <nav class="feedback">${renderFeedbackButtons(alert)}</nav>
  <a class="report" href="#report=${escapeHtml(alert.reportLink)}">report</a>
</article>`;
}

export function renderThread(thread: Thread): string {
  if (thread.alerts.length === 1) return renderAlertEntry(thread.alerts[0]);
  // <details> without the open attribute renders collapsed
  const header = `${thread.alerts.length} alerts in thread, latest ${iso(thread.newest.windowStart)}`;
  return `<details class="thread" data-thread-key="${escapeHtml(thread.threadKey)}">
  <summary>${escapeHtml(header)}</summary>
  ${thread.alerts.map(renderAlertEntry).join("\n")}
</details>`;
}

export function renderFeed(state: FeedState): string {
  const parts: string[] = [];
  if (state.offline) {
    const since = state.lastSyncMs ? ` from ${iso(state.lastSyncMs)}` : "";
    parts.push(
      `<div class="banner offline">service unreachable, showing cached alerts${since}</div>`,
    );
  }
  if (state.notice) {
    parts.push(`<div class="banner notice">${escapeHtml(state.notice)}</div>`);
  }
  if (state.alerts.length === 0) {
    parts.push(`<p class="empty">No alerts. All quiet.</p>`);
  } else {
    parts.push(groupIntoThreads(state.alerts).map(renderThread).join("\n"));
  }
  return parts.join("\n");
}

export function renderReport(report: Report): string {
  const charts = report.series
    .map((series) => renderSeriesChart(series, report.anomalousInterval))
    .join("\n");
  const degraded = report.degraded
    ? `<p class="degraded">window history unavailable, text only</p>`
    : "";
  return `<section class="report-view" data-report-id="${escapeHtml(report.reportId)}">
  <pre class="text">${escapeHtml(report.text)}</pre>
  ${degraded}
  ${charts}
</section>`;
}
