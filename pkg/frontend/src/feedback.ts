import type { FeedbackLabel, LatestFeedback } from "./types.js";

/** The four options, in display order. Labels are the wire values. */
export const FEEDBACK_OPTIONS: ReadonlyArray<{
  label: FeedbackLabel;
  display: string;
}> = [
  { label: "AnomalyImpactingClient", display: "Anomaly (impacting client)" },
  { label: "AnomalyNoImpact", display: "Anomaly (no impact)" },
  { label: "NotAnomaly", display: "Not an anomaly" },
  { label: "NotSure", display: "Not sure" },
];

export function displayLabel(label: string): string {
  const option = FEEDBACK_OPTIONS.find((o) => o.label === label);
  return option ? option.display : label;
}

export function describeFeedback(latest: LatestFeedback | null): string {
  if (!latest) return "no feedback yet";
  return `${displayLabel(latest.label)} by ${latest.submitter}`;
}
