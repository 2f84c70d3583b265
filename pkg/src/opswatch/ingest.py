"""Telemetry ingestion: parsing, validation, filtering, and file replay.

One record describes a single HTTP request observed by a service agent.
Records arrive either through the push API or by replaying a
newline-delimited JSON file; both paths share the same parser and
filter rules. Per-record failures are absorbed into counters and never
fail a batch.
"""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator

logger = logging.getLogger(__name__)

STANDARD_METHODS = frozenset(
    {"GET", "POST", "PUT", "DELETE", "PATCH", "HEAD", "OPTIONS"}
)

_REQUIRED_FIELDS = ("appName", "timestamp", "responseTime", "statusCode", "method")


class IngestError(ValueError):
    pass


class MalformedJson(IngestError):
    pass


class MissingField(IngestError):
    def __init__(self, field_name: str) -> None:
        super().__init__(f"missing required field: {field_name}")
        self.field_name = field_name


class RangeViolation(IngestError):
    pass


class PayloadTooLarge(IngestError):
    pass


class FileUnreadable(IngestError):
    pass


@dataclass(frozen=True)
class LogRecord:
    """One parsed telemetry event for an HTTP request."""

    appName: str
    timestamp: int  # ms since epoch, UTC
    responseTime: float  # ms, non-negative
    statusCode: int
    method: str
    eventType: str = ""
    url: str = ""
    groupedUrl: str = ""
    urlCategory: str = ""
    targetEndpoint: str = ""

    @property
    def has_standard_method(self) -> bool:
        return self.method in STANDARD_METHODS

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "eventType": self.eventType,
            "appName": self.appName,
            "url": self.url,
            "groupedUrl": self.groupedUrl,
            "urlCategory": self.urlCategory,
            "targetEndpoint": self.targetEndpoint,
            "timestamp": self.timestamp,
            "responseTime": self.responseTime,
            "statusCode": self.statusCode,
            "method": self.method,
        }

    def serialize(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


@dataclass
class IngestCounters:
    accepted: int = 0
    rejected: int = 0
    unknown_fields: int = 0
    nonstandard_methods: int = 0


_KNOWN_FIELDS = frozenset(LogRecord.__dataclass_fields__)


def parse_log_record(
    raw: str | bytes | dict, counters: IngestCounters | None = None
) -> LogRecord:
    """Parse and validate a single JSON log record.

    Unknown extra fields are ignored (counted when counters are given).
    Raises MalformedJson, MissingField, or RangeViolation.
    """
    if isinstance(raw, (str, bytes)):
        try:
            obj = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise MalformedJson(str(exc)) from exc
    else:
        obj = raw
    if not isinstance(obj, dict):
        raise MalformedJson(f"expected a JSON object, got {type(obj).__name__}")

    for name in _REQUIRED_FIELDS:
        if name not in obj:
            raise MissingField(name)

    extras = set(obj) - _KNOWN_FIELDS
    if extras and counters is not None:
        counters.unknown_fields += len(extras)

    appName = obj["appName"]
    if not isinstance(appName, str) or not appName:
        raise RangeViolation("appName must be a non-empty string")

    timestamp = obj["timestamp"]
    if not isinstance(timestamp, int) or isinstance(timestamp, bool) or timestamp <= 0:
        raise RangeViolation(f"timestamp must be a positive integer, got {timestamp!r}")

    responseTime = obj["responseTime"]
    if not isinstance(responseTime, (int, float)) or isinstance(responseTime, bool):
        raise RangeViolation("responseTime must be a number")
    responseTime = float(responseTime)
    if not responseTime >= 0:
        raise RangeViolation(f"responseTime must be non-negative, got {responseTime}")

    statusCode = obj["statusCode"]
    if not isinstance(statusCode, int) or isinstance(statusCode, bool):
        raise RangeViolation("statusCode must be an integer")
    if not 100 <= statusCode <= 599:
        raise RangeViolation(f"statusCode out of range: {statusCode}")

    method = obj["method"]
    if not isinstance(method, str) or not re.fullmatch(r"[A-Za-z][A-Za-z-]*", method):
        raise RangeViolation(f"method must be a non-empty verb token, got {method!r}")
    method = method.upper()
    if method not in STANDARD_METHODS:
        # Unknown verbs are kept: novelty is handled downstream as a
        # never-seen-before feature key.
        if counters is not None:
            counters.nonstandard_methods += 1
        logger.debug("non-standard HTTP method retained: %s", method)

    def _str(name: str) -> str:
        value = obj.get(name, "")
        return value if isinstance(value, str) else str(value)

    return LogRecord(
        appName=appName,
        timestamp=timestamp,
        responseTime=responseTime,
        statusCode=statusCode,
        method=method,
        eventType=_str("eventType"),
        url=_str("url"),
        groupedUrl=_str("groupedUrl"),
        urlCategory=_str("urlCategory"),
        targetEndpoint=_str("targetEndpoint"),
    )


@dataclass(frozen=True)
class FilterRule:
    """A single total predicate over one LogRecord field."""

    field: str
    op: str  # equals | prefix | regex | in
    value: Any
    _regex: re.Pattern | None = None

    def __post_init__(self) -> None:
        if self.field not in _KNOWN_FIELDS:
            raise IngestError(f"filter references unknown field: {self.field!r}")
        if self.op not in ("equals", "prefix", "regex", "in"):
            raise IngestError(f"unknown filter operator: {self.op!r}")
        if self.op == "regex":
            # compile at construction so evaluation can never raise
            object.__setattr__(self, "_regex", re.compile(str(self.value)))
        if self.op == "in" and not isinstance(self.value, (list, tuple, set, frozenset)):
            raise IngestError("'in' filter value must be a list")

    def matches(self, record: LogRecord) -> bool:
        actual = getattr(record, self.field)
        try:
            if self.op == "equals":
                return actual == self.value or str(actual) == str(self.value)
            if self.op == "prefix":
                return str(actual).startswith(str(self.value))
            if self.op == "regex":
                assert self._regex is not None
                return self._regex.search(str(actual)) is not None
            if self.op == "in":
                members = self.value
                return actual in members or str(actual) in {str(v) for v in members}
        except Exception:  # predicates are total by contract
            return False
        return False


@dataclass(frozen=True)
class FilterRuleSet:
    """Ordered predicates applied as an allow-list or a deny-list.

    Allow mode keeps a record iff it matches at least one rule (an empty
    allow-list therefore drops everything); deny mode drops a record iff
    it matches at least one rule.
    """

    mode: str = "deny"
    rules: tuple[FilterRule, ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in ("allow", "deny"):
            raise IngestError(f"filter mode must be allow or deny, got {self.mode!r}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FilterRuleSet":
        rules = tuple(
            FilterRule(field=r["field"], op=r["op"], value=r["value"])
            for r in data.get("rules", [])
        )
        return cls(mode=data.get("mode", "deny"), rules=rules)


def apply_filters(record: LogRecord, rules: FilterRuleSet) -> bool:
    """Return True to keep the record, False to drop it."""
    matched = any(rule.matches(record) for rule in rules.rules)
    return matched if rules.mode == "allow" else not matched


@dataclass
class Acknowledgment:
    accepted: int = 0
    rejected: int = 0

    def to_dict(self) -> dict[str, int]:
        return {"accepted": self.accepted, "rejected": self.rejected}


def ingest_push(
    body: str | bytes,
    source_id: str,
    rules: FilterRuleSet,
    sink: Callable[[str, LogRecord], None],
    max_body_bytes: int = 1_048_576,
    counters: IngestCounters | None = None,
) -> Acknowledgment:
    """Accept a pushed record or array of records.

    Each record that parses and passes the filters is handed to `sink`
    with its source id; every other element is counted as rejected.
    Raises PayloadTooLarge when the body exceeds the configured cap;
    all per-record errors are absorbed into the counts.
    """
    raw = body.encode("utf-8") if isinstance(body, str) else body
    if len(raw) > max_body_bytes:
        raise PayloadTooLarge(f"body is {len(raw)} bytes; cap is {max_body_bytes}")

    ack = Acknowledgment()
    try:
        payload = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError):
        ack.rejected = 1
        if counters is not None:
            counters.rejected += 1
        return ack

    items = payload if isinstance(payload, list) else [payload]
    for item in items:
        try:
            record = parse_log_record(item, counters)
        except IngestError as exc:
            ack.rejected += 1
            logger.debug("rejected record from %s: %s", source_id, exc)
            continue
        if apply_filters(record, rules):
            sink(source_id, record)
            ack.accepted += 1
        else:
            ack.rejected += 1
    if counters is not None:
        counters.accepted += ack.accepted
        counters.rejected += ack.rejected
    return ack


@dataclass
class ReplayStats:
    emitted: int = 0
    skipped: int = 0


def replay_file(
    path: str | Path,
    speed: float | None = None,
    stats: ReplayStats | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> Iterator[LogRecord]:
    """Replay a newline-delimited JSON file as a record stream.

    `speed` is a wall-clock multiplier applied to inter-record timestamp
    gaps; None means as fast as possible. Records are emitted in file
    order; unparsable lines are skipped and counted in `stats`.
    """
    path = Path(path)
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(str(exc)) from exc

    def _stream() -> Iterator[LogRecord]:
        previous_ts: int | None = None
        with fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    record = parse_log_record(line)
                except IngestError:
                    if stats is not None:
                        stats.skipped += 1
                    continue
                if speed is not None and speed > 0 and previous_ts is not None:
                    gap_s = max(0, record.timestamp - previous_ts) / 1000.0
                    if gap_s > 0:
                        sleep(gap_s / speed)
                previous_ts = record.timestamp
                if stats is not None:
                    stats.emitted += 1
                yield record

    return _stream()
