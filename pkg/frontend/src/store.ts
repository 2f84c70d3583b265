import type { DashboardClient } from "./api.js";
import type { AlertSummary, FeedbackLabel, LatestFeedback } from "./types.js";

export interface FeedState {
  alerts: AlertSummary[];
  offline: boolean;
  lastSyncMs: number | null;
  notice: string | null;
}

export type Listener = (state: FeedState) => void;

export interface StoreOptions {
  user: string;
  pollMs?: number;
  nowFn?: () => number;
}

/**
 * View state for the alert feed.
 *
 * Polling refreshes are last-write-wins: only the most recently started
 * fetch may update the state, so a slow stale response never clobbers a
 * fresh one. Feedback submissions are optimistic (badge flips immediately,
 * rolls back on failure) and serialized per alert.
 */
export class FeedStore {
  readonly pollMs: number;
  private readonly user: string;
  private readonly nowFn: () => number;
  private state: FeedState = {
    alerts: [],
    offline: false,
    lastSyncMs: null,
    notice: null,
  };
  private listeners: Listener[] = [];
  private fetchSeq = 0;
  private timer: ReturnType<typeof setInterval> | null = null;
  private queues = new Map<string, Promise<unknown>>();
  private optimistic = new Map<string, LatestFeedback>();

  constructor(
    private readonly client: DashboardClient,
    options: StoreOptions,
  ) {
    this.user = options.user;
    this.pollMs = options.pollMs ?? 30_000;
    this.nowFn = options.nowFn ?? Date.now;
  }

  snapshot(): FeedState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  async refresh(): Promise<void> {
    const seq = ++this.fetchSeq;
    try {
      const alerts = await this.client.listAlerts(0);
      if (seq < this.fetchSeq) return; // a newer fetch started; let it win
      // keep in-flight optimistic badges over whatever the poll returned
      const merged = alerts.map((alert) => {
        const hoped = this.optimistic.get(alert.alertId);
        return hoped ? { ...alert, latestFeedback: hoped } : alert;
      });
      this.state = {
        ...this.state,
        alerts: merged,
        offline: false,
        lastSyncMs: this.nowFn(),
      };
    } catch {
      if (seq < this.fetchSeq) return;
      this.state = { ...this.state, offline: true }; // cached view stands
    }
    this.emit();
  }

  start(): void {
    if (this.timer) return;
    void this.refresh();
    this.timer = setInterval(() => void this.refresh(), this.pollMs);
  }

  stop(): void {
    if (this.timer) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** Optimistic submit; resolves true when the server accepted the label. */
  submitFeedback(alertId: string, label: FeedbackLabel): Promise<boolean> {
    const run = async (): Promise<boolean> => {
      const alert = this.state.alerts.find((a) => a.alertId === alertId);
      if (!alert) return false;
      const previous = alert.latestFeedback;
      const hoped: LatestFeedback = {
        label,
        submitter: this.user,
        submittedAt: this.nowFn(),
      };
      this.optimistic.set(alertId, hoped);
      this.patchAlert(alertId, (a) => ({
        ...a,
        latestFeedback: hoped,
        feedbackCount: a.feedbackCount + 1,
      }));
      try {
        const saved = await this.client.submitFeedback(alertId, label, this.user);
        this.optimistic.delete(alertId);
        this.patchAlert(alertId, (a) => ({
          ...a,
          latestFeedback: {
            label: saved.label,
            submitter: saved.submitter,
            submittedAt: saved.submittedAt,
          },
        }));
        return true;
      } catch (error) {
        this.optimistic.delete(alertId);
        this.patchAlert(alertId, (a) => ({
          ...a,
          latestFeedback: previous,
          feedbackCount: Math.max(0, a.feedbackCount - 1),
        }));
        this.state = {
          ...this.state,
          notice: `feedback failed: ${error instanceof Error ? error.message : String(error)}`,
        };
        this.emit();
        return false;
      }
    };
    // start immediately when idle so the optimistic patch lands before
    // this call returns; otherwise wait for the in-flight post to settle
    const prior = this.queues.get(alertId);
    const queued = prior ? prior.then(run, run) : run();
    this.queues.set(alertId, queued.catch(() => undefined));
    return queued;
  }

  dismissNotice(): void {
    if (this.state.notice) {
      this.state = { ...this.state, notice: null };
      this.emit();
    }
  }

  private patchAlert(
    alertId: string,
    patch: (alert: AlertSummary) => AlertSummary,
  ): void {
    this.state = {
      ...this.state,
      alerts: this.state.alerts.map((a) => (a.alertId === alertId ? patch(a) : a)),
    };
    this.emit();
  }
}
