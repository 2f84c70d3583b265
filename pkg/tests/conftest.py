import numpy as np
import pytest

from opswatch.features import (
    AggregationWindow,
    FeatureKey,
    aggregate_window,
    register_features,
)
from opswatch.ingest import LogRecord

WINDOW_MS = 300_000
T0 = 1_600_000_200_000  # aligned to a 5-minute boundary


def record(
    ts: int,
    app: str = "web",
    method: str = "GET",
    status: int = 200,
    rt: float = 120.0,
) -> LogRecord:
    return LogRecord(
        appName=app, timestamp=ts, responseTime=rt, statusCode=status, method=method
    )


def window_records(
    start: int, response_times, app: str = "web", method: str = "GET", status: int = 200
) -> list[LogRecord]:
    """Spread records evenly inside [start, start + 5 min)."""
    n = len(response_times)
    step = WINDOW_MS // max(n, 1)
    return [
        record(start + i * step, app=app, method=method, status=status, rt=float(rt))
        for i, rt in enumerate(response_times)
    ]


@pytest.fixture
def small_registry():
    rng = np.random.default_rng(0)
    windows = []
    for i in range(12):
        start = T0 + i * WINDOW_MS
        recs = window_records(start, rng.uniform(50, 250, size=8))
        recs += window_records(
            start, rng.uniform(5, 50, size=4), app="auth", method="POST", status=201
        )
        windows.append(aggregate_window(recs, start))
    return register_features(windows), windows


@pytest.fixture
def single_key_window():
    recs = window_records(T0, [100.0, 150.0, 200.0, 250.0])
    return aggregate_window(recs, T0)


def make_windows(n: int, seed: int = 0, start: int = T0) -> list[AggregationWindow]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        s = start + i * WINDOW_MS
        recs = window_records(s, rng.uniform(50, 250, size=6))
        out.append(aggregate_window(recs, s))
    return out


def key(app="web", method="GET", status=200, stat="mean") -> FeatureKey:
    return FeatureKey(appName=app, method=method, statusCode=status, statistic=stat)
