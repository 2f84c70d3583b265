// Wire types for the /v1 endpoints. Field names match the JSON exactly.

export type FeedbackLabel =
  | "AnomalyImpactingClient"
  | "AnomalyNoImpact"
  | "NotAnomaly"
  | "NotSure";

export interface LatestFeedback {
  label: FeedbackLabel;
  submitter: string;
  submittedAt: number;
}

export interface FeedbackRecord extends LatestFeedback {
  alertId: string;
  seq: number;
}

export interface AlertSummary {
  alertId: string;
  windowStart: number;
  revision: number;
  summary: string;
  counts: Record<string, number>;
  likelihood: number;
  reportLink: string;
  threadKey: string;
  createdAt: number;
  latestFeedback: LatestFeedback | null;
  feedbackCount: number;
}

/** [appName, method, statusCode, statistic] */
export type FeatureKeyParts = [string, string, number, string];

/** [epoch ms, value] */
export type SeriesPoint = [number, number];

export interface ReportSeries {
  key: FeatureKeyParts;
  aggregated: SeriesPoint[];
  raw: SeriesPoint[];
}

export interface Report {
  reportId: string;
  alertId: string;
  windowStart: number;
  revision: number;
  text: string;
  features: FeatureKeyParts[];
  anomalousInterval: [number, number];
  degraded: boolean;
  series: ReportSeries[];
}

export interface StatusInfo {
  modelVersion: number | null;
  registryVersion: number | null;
  assessedWindows: number;
  staleDropped: number;
  feedbackLabels: string[];
}
