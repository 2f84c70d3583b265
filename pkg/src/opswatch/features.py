"""Fixed-interval feature extraction over request telemetry.

Records are bucketed into astronomical-time windows (floor of the
timestamp to the interval). Within one window, response times are
grouped by (appName, method, statusCode) and summarised by seven
statistics; eight trigonometric seasonality terms describe the window's
position inside hourly, daily, weekly, and monthly cycles. A versioned
registry pins the column order and min-max normalization bounds so that
vectors stay comparable across the lifetime of one trained model.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .storage import MAX_DOCUMENT_BYTES, DocumentTooLarge
from .ingest import LogRecord

STATISTICS = ("min", "max", "count", "median", "mean", "std", "skewness")

# (label, period in seconds): hour, day, week, 30-day month
SEASONAL_PERIODS: tuple[tuple[str, int], ...] = (
    ("hourly", 3_600),
    ("daily", 86_400),
    ("weekly", 604_800),
    ("monthly", 2_592_000),
)

DEFAULT_WINDOW_MS = 300_000


class FeatureError(ValueError):
    pass


class EmptyTrainingSet(FeatureError):
    pass


class RegistryEmpty(FeatureError):
    pass


@dataclass(frozen=True, order=True)
class FeatureKey:
    """One aggregated statistic of one request group."""

    appName: str
    method: str
    statusCode: int
    statistic: str

    def __post_init__(self) -> None:
        if self.statistic not in STATISTICS:
            raise FeatureError(f"unknown statistic: {self.statistic!r}")

    def to_list(self) -> list:
        return [self.appName, self.method, self.statusCode, self.statistic]

    @classmethod
    def from_list(cls, data: Sequence) -> "FeatureKey":
        return cls(str(data[0]), str(data[1]), int(data[2]), str(data[3]))


@dataclass(frozen=True)
class SeasonalColumn:
    period: str  # hourly | daily | weekly | monthly
    fn: str  # sin | cos

    def to_list(self) -> list:
        return [self.period, self.fn]


SEASONAL_COLUMNS: tuple[SeasonalColumn, ...] = tuple(
    SeasonalColumn(label, fn) for label, _ in SEASONAL_PERIODS for fn in ("sin", "cos")
)


def window_of(timestamp_ms: int, window_ms: int = DEFAULT_WINDOW_MS) -> int:
    """Floor a millisecond timestamp to its window start."""
    if timestamp_ms <= 0:
        raise FeatureError(f"timestamp must be positive, got {timestamp_ms}")
    return (timestamp_ms // window_ms) * window_ms


def group_statistics(values: Sequence[float]) -> dict[str, float]:
    """Seven summary statistics of one group's response times.

    Sample standard deviation needs n >= 2 and adjusted Fisher-Pearson
    skewness needs n >= 3 with nonzero variance; below that they are 0.
    """
    arr = np.asarray(values, dtype=np.float64)
    n = arr.size
    if n == 0:
        raise FeatureError("cannot summarise an empty group")
    # a constant group has zero variance by definition; computing it
    # leaves rounding noise that the skewness ratio blows up to O(1)
    varies = float(arr.min()) != float(arr.max())
    out = {
        "min": float(arr.min()),
        "max": float(arr.max()),
        "count": float(n),
        "median": float(np.median(arr)),
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if n >= 2 and varies else 0.0,
    }
    skew = 0.0
    if n >= 3 and varies:
        centered = arr - arr.mean()
        m2 = float(np.mean(centered**2))
        denom = m2**1.5  # underflows for sub-1e-205 variance: degenerate, keep 0
        if denom > 0.0:
            m3 = float(np.mean(centered**3))
            skew = (m3 / denom) * math.sqrt(n * (n - 1)) / (n - 2)
    out["skewness"] = skew
    return out


@dataclass(frozen=True)
class AggregationWindow:
    """Summary statistics of all records inside one time window."""

    start: int
    end: int
    values: dict[FeatureKey, float] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.values

    def to_doc(self) -> dict[str, Any]:
        return {
            "start": self.start,
            "end": self.end,
            "values": [[*k.to_list(), v] for k, v in sorted(self.values.items())],
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "AggregationWindow":
        values = {
            FeatureKey.from_list(entry[:4]): float(entry[4])
            for entry in doc["values"]
        }
        return cls(start=int(doc["start"]), end=int(doc["end"]), values=values)


def aggregate_window(
    records: Iterable[LogRecord], window_start: int, window_ms: int = DEFAULT_WINDOW_MS
) -> AggregationWindow:
    """Group records by (appName, method, statusCode) and summarise each group."""
    window_end = window_start + window_ms
    groups: dict[tuple[str, str, int], list[float]] = {}
    for record in records:
        if not window_start <= record.timestamp < window_end:
            raise FeatureError(
                f"record at {record.timestamp} outside window "
                f"[{window_start}, {window_end})"
            )
        key = (record.appName, record.method, record.statusCode)
        groups.setdefault(key, []).append(record.responseTime)

    values: dict[FeatureKey, float] = {}
    for (app, method, status), response_times in groups.items():
        for statistic, value in group_statistics(response_times).items():
            values[FeatureKey(app, method, status, statistic)] = value
    return AggregationWindow(start=window_start, end=window_end, values=values)


def seasonal_features(window_start_ms: int) -> tuple[float, ...]:
    """Eight (sin, cos) cycle positions of the window start.

    Pairs are ordered hourly, daily, weekly, monthly; each phase is
    2*pi * (seconds-since-epoch mod period) / period.
    """
    t = window_start_ms / 1000.0
    out: list[float] = []
    for _, period in SEASONAL_PERIODS:
        phase = 2.0 * math.pi * (t % period) / period
        out.append(math.sin(phase))
        out.append(math.cos(phase))
    return tuple(out)


def normalize(value: float, bounds: tuple[float, float]) -> float:
    """Min-max scale a value; out-of-range inputs stay unclamped.

    Degenerate bounds (min == max) map everything to 0.
    """
    lo, hi = bounds
    if lo > hi:
        raise FeatureError(f"invalid bounds: ({lo}, {hi})")
    if lo == hi:
        return 0.0
    return (value - lo) / (hi - lo)


@dataclass(frozen=True)
class FeatureRegistry:
    """Versioned column order plus per-column normalization bounds.

    Feature columns come first in sorted key order; the eight
    seasonality columns always follow with fixed (-1, 1) bounds.
    """

    version: int
    feature_keys: tuple[FeatureKey, ...]
    bounds: tuple[tuple[float, float], ...]  # one pair per column, seasonality included

    def __post_init__(self) -> None:
        if len(self.bounds) != self.width:
            raise FeatureError(
                f"registry has {self.width} columns but {len(self.bounds)} bounds"
            )
        for lo, hi in self.bounds:
            if lo > hi:
                raise FeatureError(f"registry bounds inverted: ({lo}, {hi})")

    @property
    def width(self) -> int:
        return len(self.feature_keys) + len(SEASONAL_COLUMNS)

    @property
    def columns(self) -> tuple[Any, ...]:
        return self.feature_keys + SEASONAL_COLUMNS

    def key_set(self) -> frozenset[FeatureKey]:
        return frozenset(self.feature_keys)

    def to_doc(self) -> dict[str, Any]:
        doc = {
            "version": self.version,
            "columns": [c.to_list() for c in self.columns],
            "bounds": [list(b) for b in self.bounds],
        }
        encoded = json.dumps(doc, sort_keys=True).encode("utf-8")
        if len(encoded) > MAX_DOCUMENT_BYTES:
            raise DocumentTooLarge(
                f"registry document is {len(encoded)} bytes; cap is {MAX_DOCUMENT_BYTES}"
            )
        return doc

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "FeatureRegistry":
        keys = tuple(
            FeatureKey.from_list(col) for col in doc["columns"] if len(col) == 4
        )
        bounds = tuple((float(lo), float(hi)) for lo, hi in doc["bounds"])
        return cls(version=int(doc["version"]), feature_keys=keys, bounds=bounds)


def register_features(
    training_windows: Sequence[AggregationWindow], previous_version: int = 0
) -> FeatureRegistry:
    """Build a registry from training windows.

    Columns are the sorted union of keys seen anywhere in training;
    bounds are per-column (min, max) over the zero-filled training
    matrix, so a key absent from any window contributes a 0.
    """
    if not training_windows:
        raise EmptyTrainingSet("need at least one training window")
    keys = sorted({key for w in training_windows for key in w.values})
    bounds: list[tuple[float, float]] = []
    for key in keys:
        column = [w.values.get(key, 0.0) for w in training_windows]
        bounds.append((min(column), max(column)))
    bounds.extend((-1.0, 1.0) for _ in SEASONAL_COLUMNS)
    return FeatureRegistry(
        version=previous_version + 1, feature_keys=tuple(keys), bounds=tuple(bounds)
    )


class Policy(enum.Enum):
    PREDICT = "Predict"
    PREDICT_WITH_WARNING = "PredictWithWarning"
    SKIP_WITH_WARNING = "SkipWithWarning"


@dataclass(frozen=True)
class FeatureVector:
    """One normalized model input row for a single window."""

    window_start: int
    registry_version: int
    values: np.ndarray
    unseen_keys: tuple[FeatureKey, ...]
    policy: Policy


def build_vector(
    agg: AggregationWindow,
    registry: FeatureRegistry,
    consecutive_empty_before: int = 0,
    skip_after_empty_windows: int = 4,
) -> FeatureVector:
    """Project a window onto the registry columns and normalize.

    Registry columns missing from the window read as raw 0 before
    normalization; window keys the registry has never seen are reported
    as unseen and excluded. An empty window still predicts (with a
    warning) unless it closes a run of `skip_after_empty_windows`
    consecutive empties, which downgrades the policy to skip.
    """
    if not registry.feature_keys:
        raise RegistryEmpty("registry has no feature columns")

    if agg.empty:
        if consecutive_empty_before + 1 >= skip_after_empty_windows:
            policy = Policy.SKIP_WITH_WARNING
        else:
            policy = Policy.PREDICT_WITH_WARNING
    else:
        policy = Policy.PREDICT

    values = np.zeros(registry.width, dtype=np.float64)
    for i, key in enumerate(registry.feature_keys):
        values[i] = normalize(agg.values.get(key, 0.0), registry.bounds[i])
    season = seasonal_features(agg.start)
    offset = len(registry.feature_keys)
    for j, s in enumerate(season):
        values[offset + j] = normalize(s, registry.bounds[offset + j])

    unseen = tuple(sorted(set(agg.values) - registry.key_set()))
    return FeatureVector(
        window_start=agg.start,
        registry_version=registry.version,
        values=values,
        unseen_keys=unseen,
        policy=policy,
    )


class WindowAssembler:
    """Owns in-flight raw records and turns them into aggregation windows.

    A record landing in an already-finalized window marks that window
    dirty instead of mutating anything a reader might hold; the caller
    re-aggregates dirty windows and re-scores them.
    """

    def __init__(self, window_ms: int = DEFAULT_WINDOW_MS) -> None:
        self.window_ms = window_ms
        self._records: dict[int, list[LogRecord]] = {}
        self._finalized: set[int] = set()
        self._dirty: set[int] = set()

    def add(self, record: LogRecord) -> int:
        start = window_of(record.timestamp, self.window_ms)
        self._records.setdefault(start, []).append(record)
        if start in self._finalized:
            self._dirty.add(start)
        return start

    def pending_starts(self) -> list[int]:
        return sorted(set(self._records) - self._finalized)

    def aggregate(self, window_start: int) -> AggregationWindow:
        return aggregate_window(
            self._records.get(window_start, []), window_start, self.window_ms
        )

    def finalize(self, window_start: int) -> AggregationWindow:
        self._finalized.add(window_start)
        return self.aggregate(window_start)

    def mark_finalized(self, window_start: int) -> None:
        self._finalized.add(window_start)

    def pop_dirty(self) -> list[int]:
        dirty = sorted(self._dirty)
        self._dirty.clear()
        return dirty

    def records(self) -> dict[int, list[LogRecord]]:
        """Read-only view of buffered raw records by window start."""
        return self._records

    def evict_before(self, cutoff_ms: int) -> int:
        stale = [s for s in self._records if s < cutoff_ms]
        for s in stale:
            del self._records[s]
            self._finalized.discard(s)
            self._dirty.discard(s)
        return len(stale)
