import type {
  AlertSummary,
  FeedbackLabel,
  FeedbackRecord,
  Report,
  StatusInfo,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly path: string,
    detail: string,
  ) {
    super(`HTTP ${status} on ${path}${detail ? `: ${detail}` : ""}`);
    this.name = "ApiError";
  }
}

export interface ClientOptions {
  baseUrl: string;
  token?: string;
  fetchFn?: typeof fetch;
}

/** Thin client over the service's alert, report, and feedback endpoints. */
export class DashboardClient {
  private readonly base: string;
  private readonly token?: string;
  private readonly fetchFn: typeof fetch;

  constructor(options: ClientOptions) {
    this.base = options.baseUrl.replace(/\/+$/, "");
    this.token = options.token;
    // wrap so a bare window.fetch keeps its receiver
    const fn = options.fetchFn;
    this.fetchFn = fn ? fn : (...args) => fetch(...args);
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { accept: "application/json" };
    if (body !== undefined) headers["content-type"] = "application/json";
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    const response = await this.fetchFn(`${this.base}${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      const detail = await response.text().catch(() => "");
      throw new ApiError(response.status, path, detail);
    }
    return (await response.json()) as T;
  }

  listAlerts(sinceMs = 0): Promise<AlertSummary[]> {
    return this.request("GET", `/v1/alerts?since=${sinceMs}`);
  }

  /** Accepts either a bare report id or the reportLink from an alert. */
  getReport(linkOrId: string): Promise<Report> {
    const path = linkOrId.startsWith("/")
      ? linkOrId
      : `/v1/reports/${encodeURIComponent(linkOrId)}`;
    return this.request("GET", path);
  }

  submitFeedback(
    alertId: string,
    label: FeedbackLabel,
    submitter: string,
  ): Promise<FeedbackRecord> {
    return this.request(
      "POST",
      `/v1/alerts/${encodeURIComponent(alertId)}/feedback`,
      { label, submitter },
    );
  }

  status(): Promise<StatusInfo> {
    return this.request("GET", "/v1/status");
  }
}
