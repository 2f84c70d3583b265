"""Alert construction, webhook delivery, reports, and human feedback.

A flagged assessment becomes exactly one alert per (window, revision);
alerts landing within ten minutes of the previous one chain into its
thread. Each alert links a report carrying the anomalous features'
recent aggregated series plus raw points. Feedback is append-only with
four fixed labels; displays resolve to the newest submission.

All ids derive from window start and revision so replaying a stream
reproduces identical alerts, threads, and report links.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Sequence

import requests

from .config import AlertingConfig
from .features import AggregationWindow, FeatureKey, FeatureRegistry
from .ingest import LogRecord
from .likelihood import AnomalyAssessment
from .storage import BlobStore, DocumentStore, MAX_DOCUMENT_BYTES

logger = logging.getLogger(__name__)

FEEDBACK_LABELS = (
    "AnomalyImpactingClient",
    "AnomalyNoImpact",
    "NotAnomaly",
    "NotSure",
)

THREAD_WINDOW_MS = 10 * 60 * 1000

ALERTS = "alerts"
REPORTS = "reports"
FEEDBACK = "feedback"
UNDELIVERED = "undelivered"


class AlertingError(ValueError):
    pass


class NotFlagged(AlertingError):
    pass


class WebhookUnreachable(AlertingError):
    pass


class UnknownAlert(AlertingError):
    pass


class InvalidLabel(AlertingError):
    pass


def alert_id_for(window_start: int, revision: int) -> str:
    return f"a{window_start}r{revision}"


def report_id_for(window_start: int, revision: int) -> str:
    return f"rep{window_start}r{revision}"


def thread_key_for(
    window_start: int, previous_time: int | None, previous_key: str | None
) -> str:
    """Chain onto the previous thread when within ten minutes, else start one.

    Times are window starts, not wall clock, so replays thread
    identically; re-scored older windows chain by absolute gap.
    """
    if (
        previous_time is not None
        and previous_key is not None
        and abs(window_start - previous_time) <= THREAD_WINDOW_MS
    ):
        return previous_key
    return f"t{window_start}"


@dataclass(frozen=True)
class Alert:
    alert_id: str
    window_start: int
    revision: int
    summary: str
    counts: dict[str, int]
    likelihood: float
    report_link: str
    thread_key: str
    created_at: int

    def to_doc(self) -> dict[str, Any]:
        return {
            "alertId": self.alert_id,
            "windowStart": self.window_start,
            "revision": self.revision,
            "summary": self.summary,
            "counts": self.counts,
            "likelihood": self.likelihood,
            "reportLink": self.report_link,
            "threadKey": self.thread_key,
            "createdAt": self.created_at,
        }

    def webhook_payload(self) -> dict[str, Any]:
        # wire format: exactly these five keys
        return {
            "summary": self.summary,
            "counts": self.counts,
            "likelihood": self.likelihood,
            "reportLink": self.report_link,
            "threadKey": self.thread_key,
        }


def build_alert(
    assessment: AnomalyAssessment,
    thread_key: str,
    created_at: int,
) -> Alert:
    """Compose the alert for a flagged assessment."""
    if not assessment.flagged:
        raise NotFlagged(
            f"window {assessment.window_start} is not flagged "
            f"(likelihood {assessment.likelihood:.4f})"
        )
    counts: dict[str, int] = {}
    for key in assessment.top_features:
        counts[key.appName] = counts.get(key.appName, 0) + 1
    apps = ", ".join(f"{app} ({n})" for app, n in sorted(counts.items()))
    summary = (
        f"Anomaly likelihood {assessment.likelihood:.4f} in window "
        f"{assessment.window_start}: {len(assessment.top_features)} anomalous "
        f"feature(s)" + (f" across {apps}" if apps else "")
    )
    return Alert(
        alert_id=alert_id_for(assessment.window_start, assessment.revision),
        window_start=assessment.window_start,
        revision=assessment.revision,
        summary=summary,
        counts=counts,
        likelihood=assessment.likelihood,
        report_link=f"/v1/reports/{report_id_for(assessment.window_start, assessment.revision)}",
        thread_key=thread_key,
        created_at=created_at,
    )


def build_report(
    assessment: AnomalyAssessment,
    registry: FeatureRegistry,
    windows: Sequence[AggregationWindow] | None,
    raw_records: Mapping[int, Sequence[LogRecord]] | None,
    retention_ms: int = 48 * 3600 * 1000,
) -> dict[str, Any]:
    """Report document: text plus one series pair per anomalous feature.

    Series cover at most the retention horizon ending at the flagged
    window. Without history the report degrades to text only.
    """
    report_id = report_id_for(assessment.window_start, assessment.revision)
    features = list(assessment.top_features)
    text_lines = [
        f"Window {assessment.window_start} scored likelihood "
        f"{assessment.likelihood:.4f} (mse {assessment.mse:.6g}).",
    ]
    for key in features:
        text_lines.append(
            f"- {key.appName} {key.method} {key.statusCode} {key.statistic}"
        )

    doc: dict[str, Any] = {
        "reportId": report_id,
        "alertId": alert_id_for(assessment.window_start, assessment.revision),
        "windowStart": assessment.window_start,
        "revision": assessment.revision,
        "text": "\n".join(text_lines),
        "features": [k.to_list() for k in features],
        "anomalousInterval": [assessment.window_start, assessment.window_start],
        "degraded": windows is None,
    }
    if windows is None:
        doc["series"] = []
        return doc

    horizon_start = assessment.window_start - retention_ms
    recent = [w for w in windows if horizon_start <= w.start <= assessment.window_start]
    series: list[dict[str, Any]] = []
    for key in features:
        aggregated = [
            [w.start, w.values[key]] for w in recent if key in w.values
        ]
        raw: list[list[float]] = []
        if raw_records:
            for w in recent:
                for record in raw_records.get(w.start, ()):
                    if (
                        record.appName == key.appName
                        and record.method == key.method
                        and record.statusCode == key.statusCode
                    ):
                        raw.append([record.timestamp, record.responseTime])
        series.append({"key": key.to_list(), "aggregated": aggregated, "raw": raw})
    doc["series"] = series
    return doc


def deliver(
    alert: Alert,
    webhook_url: str,
    attempts: int = 3,
    backoff_seconds: float = 1.0,
    post: Callable[[str, dict], int] | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> dict[str, Any]:
    """POST the alert payload; exponential backoff across attempts."""

    def _post(url: str, payload: dict) -> int:
        response = requests.post(url, json=payload, timeout=10)
        return response.status_code

    post = post or _post
    payload = alert.webhook_payload()
    last_error: str = ""
    for attempt in range(1, attempts + 1):
        try:
            status = post(webhook_url, payload)
            if 200 <= status < 300:
                return {"status": status, "attempts": attempt}
            last_error = f"HTTP {status}"
        except Exception as exc:  # network failures retry like bad statuses
            last_error = str(exc)
        if attempt < attempts:
            sleep(backoff_seconds * (2 ** (attempt - 1)))
    raise WebhookUnreachable(
        f"alert {alert.alert_id} undelivered after {attempts} attempts: {last_error}"
    )


class AlertingService:
    """Stateful front half: dedupe, thread, persist, deliver, take feedback."""

    def __init__(
        self,
        docs: DocumentStore,
        blobs: BlobStore,
        config: AlertingConfig | None = None,
        now_ms: Callable[[], int] | None = None,
        post: Callable[[str, dict], int] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.docs = docs
        self.blobs = blobs
        self.config = config or AlertingConfig()
        self._now_ms = now_ms or (lambda: int(time.time() * 1000))
        self._post = post
        self._sleep = sleep
        self._last_thread_time: int | None = None
        self._last_thread_key: str | None = None
        self._restore_thread_state()

    def _restore_thread_state(self) -> None:
        newest: dict[str, Any] | None = None
        for doc in self.docs.all(ALERTS):
            if newest is None or doc["windowStart"] > newest["windowStart"]:
                newest = doc
        if newest is not None:
            self._last_thread_time = newest["windowStart"]
            self._last_thread_key = newest["threadKey"]

    def handle_assessment(
        self,
        assessment: AnomalyAssessment,
        registry: FeatureRegistry,
        history: Callable[
            [], tuple[Sequence[AggregationWindow], Mapping[int, Sequence[LogRecord]]]
        ]
        | None = None,
    ) -> Alert | None:
        """Create, persist, and deliver the alert for a flagged assessment.

        `history` is only called when a report is actually built.
        Returns None for unflagged assessments and for (window, revision)
        pairs already alerted. Delivery failures are queued, never raised.
        """
        if not assessment.flagged:
            return None
        alert_id = alert_id_for(assessment.window_start, assessment.revision)
        if self.docs.get(ALERTS, alert_id) is not None:
            return None

        thread_key = thread_key_for(
            assessment.window_start, self._last_thread_time, self._last_thread_key
        )
        alert = build_alert(assessment, thread_key, created_at=self._now_ms())
        windows, raw_records = history() if history is not None else (None, None)
        report = build_report(assessment, registry, windows, raw_records)
        self._persist_report(report)
        self.docs.put(ALERTS, alert.alert_id, alert.to_doc())
        self._last_thread_time = assessment.window_start
        self._last_thread_key = thread_key

        url = self.config.resolved_webhook_url()
        if url:
            try:
                deliver(
                    alert,
                    url,
                    attempts=self.config.delivery_attempts,
                    backoff_seconds=self.config.delivery_backoff_seconds,
                    post=self._post,
                    sleep=self._sleep,
                )
            except WebhookUnreachable as exc:
                logger.warning("%s", exc)
                self.docs.put(
                    UNDELIVERED,
                    alert.alert_id,
                    {"alertId": alert.alert_id, "payload": alert.webhook_payload()},
                )
        return alert

    def _persist_report(self, report: dict[str, Any]) -> None:
        encoded = json.dumps(report, sort_keys=True).encode("utf-8")
        if len(encoded) > MAX_DOCUMENT_BYTES:
            # documents are capped; big series move to the blob store
            blob_key = f"series-{report['reportId']}"
            self.blobs.put_bytes(
                blob_key, json.dumps(report["series"]).encode("utf-8")
            )
            report = dict(report)
            report["series"] = []
            report["seriesBlob"] = blob_key
        self.docs.put(REPORTS, report["reportId"], report)

    def get_report(self, report_id: str) -> dict[str, Any] | None:
        report = self.docs.get(REPORTS, report_id)
        if report is None:
            return None
        if report.get("seriesBlob"):
            blob = self.blobs.get_bytes(report["seriesBlob"])
            if blob is not None:
                report = dict(report)
                report["series"] = json.loads(blob.decode("utf-8"))
        return report

    def submit_feedback(
        self,
        alert_id: str,
        label: str,
        submitter: str,
        submitted_at: int | None = None,
    ) -> dict[str, Any]:
        if label not in FEEDBACK_LABELS:
            raise InvalidLabel(
                f"label must be one of {', '.join(FEEDBACK_LABELS)}; got {label!r}"
            )
        if self.docs.get(ALERTS, alert_id) is None:
            raise UnknownAlert(f"no alert with id {alert_id!r}")
        history = self.feedback_history(alert_id)
        doc = {
            "alertId": alert_id,
            "label": label,
            "submitter": submitter,
            "submittedAt": self._now_ms() if submitted_at is None else submitted_at,
            "seq": len(history) + 1,
        }
        self.docs.put(FEEDBACK, f"{alert_id}:{doc['seq']:06d}", doc)
        return doc

    def feedback_history(self, alert_id: str) -> list[dict[str, Any]]:
        history = [
            doc for doc in self.docs.all(FEEDBACK) if doc["alertId"] == alert_id
        ]
        history.sort(key=lambda d: (d["submittedAt"], d["seq"]))
        return history

    def latest_feedback(self, alert_id: str) -> dict[str, Any] | None:
        history = self.feedback_history(alert_id)
        return history[-1] if history else None

    def list_alerts(self, since_ms: int = 0) -> list[dict[str, Any]]:
        """Alert docs (newest last) with their latest feedback folded in."""
        alerts = [
            doc for doc in self.docs.all(ALERTS) if doc["windowStart"] >= since_ms
        ]
        alerts.sort(key=lambda d: (d["windowStart"], d["revision"]))
        out = []
        for doc in alerts:
            history = self.feedback_history(doc["alertId"])
            entry = dict(doc)
            entry["latestFeedback"] = (
                {
                    "label": history[-1]["label"],
                    "submitter": history[-1]["submitter"],
                    "submittedAt": history[-1]["submittedAt"],
                }
                if history
                else None
            )
            entry["feedbackCount"] = len(history)
            out.append(entry)
        return out

    def undelivered(self) -> list[dict[str, Any]]:
        return self.docs.all(UNDELIVERED)
