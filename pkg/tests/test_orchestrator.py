"""Engine lifecycle: training, ticking, late data, retraining, restore."""

from __future__ import annotations

import threading

import numpy as np
import pytest

from opswatch.autoencoder import InsufficientData
from opswatch.config import EngineConfig
from opswatch.features import Policy
from opswatch.orchestrator import Engine, NoModel
from opswatch.storage import MemoryBlobStore, MemoryDocumentStore

from conftest import T0, WINDOW_MS, record, window_records


class Clock:
    def __init__(self, t: int) -> None:
        self.t = t

    def __call__(self) -> int:
        return self.t

    def advance(self, ms: int) -> None:
        self.t += ms


def small_config() -> EngineConfig:
    cfg = EngineConfig()
    cfg.model.lookback = 3
    cfg.model.hidden = 8
    cfg.model.epochs = 3
    cfg.model.batch_size = 8
    cfg.model.online_learning_rate = 0.01
    cfg.likelihood.window_w = 50
    cfg.likelihood.short_window = 3
    cfg.retrain.training_horizon_windows = 40
    return cfg


def feed_windows(engine: Engine, n: int, start: int = T0, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    for i in range(n):
        s = start + i * WINDOW_MS
        for rec in window_records(s, rng.uniform(80, 120, size=6)):
            engine.submit("test", rec)


def booted_engine(n_windows: int = 30):
    """Engine trained on the leading slice of `n_windows` complete windows."""
    clock = Clock(T0)
    engine = Engine(small_config(), now_ms=clock)
    feed_windows(engine, n_windows)
    clock.t = T0 + n_windows * WINDOW_MS
    engine.bootstrap()
    return engine, clock


def events_named(engine: Engine, name: str) -> list[dict]:
    return [e for e in engine.events if e["event"] == name]


class TestBootstrap:
    def test_trains_on_leading_slice_and_scores_the_rest(self):
        engine, _ = booted_engine(30)
        pub = engine.published
        assert pub is not None
        assert pub.registry.version == 1
        assert pub.model.model_version == 1
        assert pub.consistent()
        # 30 windows, 15% rule -> 5 training rows; the other 25 stay pending
        out = engine.tick()
        assert [a.window_start for a in out] == [
            T0 + i * WINDOW_MS for i in range(5, 30)
        ]
        assert all(a.revision == 1 for a in out)

    def test_loss_per_epoch(self):
        clock = Clock(T0)
        engine = Engine(small_config(), now_ms=clock)
        feed_windows(engine, 30)
        clock.t = T0 + 30 * WINDOW_MS
        losses = engine.bootstrap()
        assert len(losses) == engine.config.model.epochs
        assert all(np.isfinite(l) for l in losses)

    def test_requires_enough_complete_windows(self):
        clock = Clock(T0)
        engine = Engine(small_config(), now_ms=clock)
        feed_windows(engine, 3)
        clock.t = T0 + 3 * WINDOW_MS
        with pytest.raises(InsufficientData):
            engine.bootstrap()

    def test_persists_registry_model_and_training_windows(self):
        engine, _ = booted_engine(30)
        assert engine.docs.get("registry", "active") is not None
        assert engine.docs.get("registry", "v1") is not None
        assert engine.blobs.get_bytes("model-active") is not None
        assert engine.blobs.get_bytes("model-v1") is not None
        assert len(engine.docs.ids("windows")) == 5

    def test_error_buffer_primed_from_training_errors(self):
        engine, _ = booted_engine(30)
        # 5 training rows with lookback 3 -> 3 sliding samples
        assert engine.published.likelihood.count == 3


class TestTick:
    def test_tick_before_training_raises(self):
        engine = Engine(small_config(), now_ms=Clock(T0))
        with pytest.raises(NoModel):
            engine.tick()

    def test_assessments_recorded_and_persisted(self):
        engine, _ = booted_engine(30)
        out = engine.tick()
        first = out[0]
        assert engine.assessments[first.window_start] is first
        doc = engine.docs.get("assessments", f"{first.window_start}:1")
        assert doc is not None
        assert doc["mse"] == pytest.approx(first.mse)

    def test_incomplete_window_is_not_scored(self):
        engine, clock = booted_engine(30)
        engine.tick()
        # records for the window that is still open at `now`
        for rec in window_records(clock.t, [100.0, 110.0]):
            engine.submit("test", rec)
        assert engine.tick() == []

    def test_live_scores_advance_the_error_buffer(self):
        engine, _ = booted_engine(30)
        before = engine.published.likelihood.count
        out = engine.tick()
        assert engine.published.likelihood.count == before + len(out)


class TestMissingData:
    def test_empty_windows_scored_with_warning_until_skip(self):
        engine, clock = booted_engine(30)
        engine.tick()
        count_before = engine.published.likelihood.count
        # windows 30-31 live, 32-35 silent, traffic resumes at 36
        rng = np.random.default_rng(5)
        for i in (30, 31, 36):
            s = T0 + i * WINDOW_MS
            for rec in window_records(s, rng.uniform(80, 120, size=6)):
                engine.submit("test", rec)
        clock.t = T0 + 37 * WINDOW_MS
        out = engine.tick()
        by_start = {a.window_start: a for a in out}

        assert by_start[T0 + 30 * WINDOW_MS].policy is Policy.PREDICT
        for i in (32, 33, 34):
            assert by_start[T0 + i * WINDOW_MS].policy is Policy.PREDICT_WITH_WARNING
        # the fourth consecutive empty window is skipped entirely
        assert T0 + 35 * WINDOW_MS not in by_start
        assert by_start[T0 + 36 * WINDOW_MS].policy is Policy.PREDICT

        assert [e["windowStart"] for e in events_named(engine, "window_skipped")] == [
            T0 + 35 * WINDOW_MS
        ]
        assert [e["windowStart"] for e in events_named(engine, "empty_window")] == [
            T0 + i * WINDOW_MS for i in (32, 33, 34)
        ]
        # six scored windows advanced the buffer; the skipped one did not
        assert engine.published.likelihood.count == count_before + 6

    def test_online_update_only_on_clean_windows(self):
        engine, clock = booted_engine(30)
        engine.tick()
        model_before = engine.published.model
        clock.advance(WINDOW_MS)  # window 30 closes empty
        out = engine.tick()
        assert out[0].policy is Policy.PREDICT_WITH_WARNING
        assert engine.published.model is model_before

        for rec in window_records(T0 + 31 * WINDOW_MS, [90.0] * 6):
            engine.submit("test", rec)
        clock.advance(WINDOW_MS)
        out = engine.tick()
        assert out[0].policy is Policy.PREDICT
        assert engine.published.model is not model_before


class TestLateRecords:
    def test_late_record_triggers_rescore_without_buffer_mutation(self):
        engine, _ = booted_engine(30)
        engine.tick()
        target = T0 + 10 * WINDOW_MS
        first = engine.assessments[target]
        count_before = engine.published.likelihood.count

        engine.submit("test", record(target + 1000, rt=500.0))
        out = engine.tick()
        assert [a.window_start for a in out] == [target]
        redone = out[0]
        assert redone.revision == 2
        assert redone.mse != first.mse
        # the re-score peeks; the rolling distribution is not rewound
        assert engine.published.likelihood.count == count_before
        # both revisions stay on record, the newest wins in memory
        assert engine.docs.get("assessments", f"{target}:1") is not None
        assert engine.docs.get("assessments", f"{target}:2") is not None
        assert engine.assessments[target].revision == 2
        rescored = events_named(engine, "window_rescored")
        assert rescored and rescored[-1]["windowStart"] == target

    def test_stale_record_dropped(self):
        engine, clock = booted_engine(30)
        old = record(clock.t - engine.config.retention.ms - WINDOW_MS)
        engine.submit("test", old)
        assert engine.stale_dropped == 1
        assert len(events_named(engine, "stale_record_dropped")) == 1

    def test_windows_beyond_retention_are_evicted(self):
        clock = Clock(T0)
        cfg = small_config()
        cfg.retention.hours = 1
        engine = Engine(cfg, now_ms=clock)
        feed_windows(engine, 30)
        clock.t = T0 + 30 * WINDOW_MS
        engine.bootstrap()
        engine.tick()
        cutoff = clock.t - cfg.retention.ms  # T0 + 18 windows
        kept = sorted(int(i) for i in engine.docs.ids("windows"))
        assert kept == [T0 + i * WINDOW_MS for i in range(18, 30)]
        assert all(s >= cutoff for s in engine.assessments)


class TestRetraining:
    def test_not_due_right_after_training(self):
        engine, clock = booted_engine(30)
        assert engine.retrain_due(clock.t) is False
        assert engine.schedule_retrain() is False
        clock.advance(int(6.5 * 3_600_000))
        assert engine.retrain_due(clock.t) is True

    def test_retrain_now_swaps_a_consistent_triple(self):
        engine, _ = booted_engine(30)
        engine.tick()
        assert engine.retrain_now() is True
        assert engine.published.registry.version == 2
        assert engine.published.consistent()
        assert engine.docs.get("registry", "active")["version"] == 2
        assert events_named(engine, "model_swapped")

    def test_background_retrain_never_blocks_scoring(self):
        engine, clock = booted_engine(30)
        engine.tick()
        release = threading.Event()
        started = threading.Event()
        real = engine._train_fn

        def stalled(model, matrix, cfg, trained_at_ms=None):
            started.set()
            assert release.wait(timeout=30)
            return real(model, matrix, cfg, trained_at_ms=trained_at_ms)

        engine._train_fn = stalled
        assert engine.schedule_retrain(force=True) is True
        assert started.wait(timeout=10)
        assert engine.schedule_retrain(force=True) is False  # one at a time

        # scoring keeps flowing while the trainer is stalled
        for rec in window_records(T0 + 30 * WINDOW_MS, [95.0] * 6):
            engine.submit("test", rec)
        clock.advance(WINDOW_MS)
        out = engine.tick()
        assert [a.window_start for a in out] == [T0 + 30 * WINDOW_MS]
        assert engine.published.registry.version == 1  # not swapped yet

        release.set()
        engine._retrain_thread.join(timeout=30)
        clock.advance(WINDOW_MS)
        out = engine.tick()  # swap lands before this tick scores
        assert engine.published.registry.version == 2
        assert out[0].registry_version == 2

    def test_unseen_keys_warn_once_then_absorb_on_retrain(self):
        engine, clock = booted_engine(30)
        engine.tick()
        s = T0 + 30 * WINDOW_MS
        for rec in window_records(s, [50.0, 60.0], app="svc", status=500):
            engine.submit("test", rec)
        for rec in window_records(s, [40.0, 45.0], app="edge", status=404):
            engine.submit("test", rec)
        for rec in window_records(s, [100.0] * 4):
            engine.submit("test", rec)
        clock.advance(WINDOW_MS)
        engine.tick()

        entries = engine.unseen_keys()
        assert {e.key.appName for e in entries} == {"svc", "edge"}
        by_priority = {e.key.appName: e.priority for e in entries}
        assert by_priority["svc"] == "HIGH"
        assert by_priority["edge"] == "NORMAL"
        warns = events_named(engine, "unseen_features")
        assert {w["priority"] for w in warns} == {"HIGH", "NORMAL"}
        assert len(warns) == 2

        # repeat traffic counts occurrences but never re-warns
        for rec in window_records(T0 + 31 * WINDOW_MS, [52.0], app="svc", status=500):
            engine.submit("test", rec)
        clock.advance(WINDOW_MS)
        engine.tick()
        assert len(events_named(engine, "unseen_features")) == 2
        svc_counts = {e.key.statistic: e.count for e in engine.unseen_keys()
                      if e.key.appName == "svc"}
        assert svc_counts["mean"] == 2

        # retraining folds the keys into the registry and clears the queue
        assert engine.retrain_now() is True
        assert engine.unseen_keys() == []
        swap = events_named(engine, "model_swapped")[-1]
        absorbed_apps = {k[0] for k in swap["absorbedKeys"]}
        assert {"svc", "edge"} <= absorbed_apps

        for rec in window_records(T0 + 32 * WINDOW_MS, [51.0], app="svc", status=500):
            engine.submit("test", rec)
        clock.advance(WINDOW_MS)
        engine.tick()
        assert len(events_named(engine, "unseen_features")) == 2


class TestRestore:
    def test_restore_resumes_from_persisted_state(self):
        docs, blobs = MemoryDocumentStore(), MemoryBlobStore()
        clock = Clock(T0)
        engine = Engine(small_config(), docs=docs, blobs=blobs, now_ms=clock)
        feed_windows(engine, 30)
        clock.t = T0 + 30 * WINDOW_MS
        engine.bootstrap()
        engine.tick()

        restored = Engine.restore(small_config(), docs, blobs, now_ms=clock)
        assert restored.published is not None
        assert restored.published.registry.version == 1
        assert restored.published.consistent()
        assert list(restored.published.likelihood.buffer) == list(
            engine.published.likelihood.buffer
        )
        assert set(restored.assessments) == set(engine.assessments)

        # scoring continues where the old process stopped
        s = T0 + 30 * WINDOW_MS
        for rec in window_records(s, [100.0] * 6):
            restored.submit("test", rec)
        clock.advance(WINDOW_MS)
        out = restored.tick()
        assert [a.window_start for a in out] == [s]

    def test_restore_keeps_newest_assessment_revision(self):
        docs, blobs = MemoryDocumentStore(), MemoryBlobStore()
        clock = Clock(T0)
        engine = Engine(small_config(), docs=docs, blobs=blobs, now_ms=clock)
        feed_windows(engine, 30)
        clock.t = T0 + 30 * WINDOW_MS
        engine.bootstrap()
        engine.tick()
        target = T0 + 10 * WINDOW_MS
        engine.submit("test", record(target + 1000, rt=500.0))
        engine.tick()

        restored = Engine.restore(small_config(), docs, blobs, now_ms=clock)
        assert restored.assessments[target].revision == 2

    def test_restore_from_empty_store_is_untrained(self):
        restored = Engine.restore(
            small_config(), MemoryDocumentStore(), MemoryBlobStore()
        )
        assert restored.published is None


def test_run_forever_honors_stop_and_survives_missing_model():
    cfg = small_config()
    cfg.tick.interval_seconds = 0.01
    engine = Engine(cfg, now_ms=Clock(T0))
    stop = threading.Event()
    threading.Timer(0.05, stop.set).start()
    engine.run_forever(stop)
    failures = events_named(engine, "tick_failure")
    assert failures and failures[0]["error"] == "no trained model"
