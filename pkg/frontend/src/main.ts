import { DashboardClient } from "./api.js";
import { renderFeed, renderReport } from "./render.js";
import { FeedStore } from "./store.js";
import type { FeedbackLabel } from "./types.js";

// Browser entry point. Config comes from query params:
//   ?api=http://host:port  base URL of the service (default same origin)
//   &user=<name>           feedback originator (default "operator")
//   &token=<bearer>        only when the service requires auth

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? window.location.origin;
const user = params.get("user") ?? "operator";
const client = new DashboardClient({
  baseUrl,
  token: params.get("token") ?? undefined,
});
const store = new FeedStore(client, { user });

const feedElement = document.getElementById("feed");
const reportElement = document.getElementById("report");
if (!feedElement || !reportElement) {
  throw new Error("dashboard shell is missing #feed or #report");
}

store.subscribe((state) => {
  feedElement.innerHTML = renderFeed(state);
});

async function openReport(link: string): Promise<void> {
  reportElement!.innerHTML = `<p class="loading">loading report</p>`;
  try {
    const report = await client.getReport(link);
    reportElement!.innerHTML = renderReport(report);
  } catch {
    reportElement!.innerHTML = `<p class="error">report unavailable</p>`;
  }
}

feedElement.addEventListener("click", (event) => {
  const target = event.target as HTMLElement;
  const button = target.closest<HTMLButtonElement>("button.fb");
  if (button) {
    const alertId = button.dataset.alertId;
    const label = button.dataset.label as FeedbackLabel | undefined;
    if (alertId && label) void store.submitFeedback(alertId, label);
    return;
  }
  const link = target.closest<HTMLAnchorElement>("a.report");
  if (link) {
    event.preventDefault();
    const href = link.getAttribute("href") ?? "";
    void openReport(href.replace(/^#report=/, ""));
  }
});

store.start();
