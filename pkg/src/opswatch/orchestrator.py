"""Detection lifecycle: ticks, online updates, stale re-scoring, retrains.

The engine owns a strictly serial scoring path (record intake, window
finalization, scoring, alerting) and an asynchronous training path.
Training never touches live state; it produces a complete
(registry, model, likelihood state) bundle which the scoring loop swaps
in atomically at the start of a tick, so every assessment is scored
against an internally consistent triple.

Scoring is compute-then-update: a window's error is judged by the model
and error distribution as they stood before that window, and only then
are the online gradient step and buffer insertion applied.
"""

from __future__ import annotations

import json
import logging
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from . import autoencoder
from .alerting import AlertingService
from .autoencoder import GruAutoencoderModel, init_model, online_step, train_batch
from .config import EngineConfig
from .features import (
    AggregationWindow,
    FeatureKey,
    FeatureRegistry,
    FeatureVector,
    Policy,
    WindowAssembler,
    build_vector,
    register_features,
    window_of,
)
from .ingest import LogRecord
from .likelihood import (
    AnomalyAssessment,
    ErrorDistributionState,
    flag,
    rank_features,
)
from .storage import BlobStore, DocumentStore, MemoryBlobStore, MemoryDocumentStore

logger = logging.getLogger(__name__)

ASSESSMENTS = "assessments"
ENGINE_STATE = "engine"


class OrchestratorError(RuntimeError):
    pass


class NoModel(OrchestratorError):
    pass


class WindowTooOld(OrchestratorError):
    pass


@dataclass
class Published:
    """The consistent triple scoring runs against, swapped as one unit."""

    registry: FeatureRegistry
    model: GruAutoencoderModel
    likelihood: ErrorDistributionState

    def consistent(self) -> bool:
        return self.model.registry_version == self.registry.version


@dataclass
class UnseenEntry:
    key: FeatureKey
    first_seen: int
    count: int
    priority: str  # HIGH | NORMAL


def _priority_for(key: FeatureKey) -> str:
    return "HIGH" if key.statusCode >= 500 else "NORMAL"


class Engine:
    """Single detector stream: intake, scoring loop, alerting, retraining."""

    def __init__(
        self,
        config: EngineConfig | None = None,
        docs: DocumentStore | None = None,
        blobs: BlobStore | None = None,
        now_ms: Callable[[], int] | None = None,
        alerting: AlertingService | None = None,
    ) -> None:
        self.config = config or EngineConfig()
        self.docs = docs if docs is not None else MemoryDocumentStore()
        self.blobs = blobs if blobs is not None else MemoryBlobStore()
        self.now_ms = now_ms or (lambda: int(time.time() * 1000))
        self.alerting = alerting or AlertingService(
            self.docs, self.blobs, self.config.alerting, now_ms=self.now_ms
        )

        self.window_ms = self.config.features.window_ms
        self.assembler = WindowAssembler(self.window_ms)
        self._aggs: dict[int, AggregationWindow] = {}
        self._published: Published | None = None
        self._pending: Published | None = None
        self._history: list[np.ndarray] = []  # last lookback-1 vectors
        self._next_window: int | None = None
        self._empty_run = 0
        self._revisions: dict[int, int] = {}
        self.assessments: dict[int, AnomalyAssessment] = {}
        self.events: list[dict[str, Any]] = []
        self.stale_dropped = 0

        self._unseen: dict[FeatureKey, UnseenEntry] = {}
        self._warned_keys: set[FeatureKey] = set()
        self._last_retrain_ms: int | None = None
        self._retrain_thread: threading.Thread | None = None
        self._lock = threading.RLock()
        self._swap_lock = threading.Lock()
        # test seam: the retraining context calls this to fit the model
        self._train_fn = train_batch

    # ---- events ----------------------------------------------------

    def _emit(self, event: str, **fields: Any) -> None:
        entry = {"event": event, **fields}
        self.events.append(entry)
        logger.info("%s", json.dumps(entry, sort_keys=True, default=str))

    # ---- intake ----------------------------------------------------

    def submit(self, source_id: str, record: LogRecord) -> None:
        """Accept one record; late records mark their window for re-scoring."""
        with self._lock:
            start = window_of(record.timestamp, self.window_ms)
            cutoff = self.now_ms() - self.config.retention.ms
            if start < cutoff:
                self.stale_dropped += 1
                self._emit(
                    "stale_record_dropped", windowStart=start, sourceId=source_id
                )
                return
            self.assembler.add(record)

    # ---- training --------------------------------------------------

    def _complete_window_range(self, now: int) -> list[int]:
        """All window starts from the first record to the last complete window."""
        starts = sorted(self.assembler.pending_starts())
        if not starts:
            return []
        last_complete = window_of(now, self.window_ms) - self.window_ms
        first = starts[0]
        if last_complete < first:
            return []
        return list(range(first, last_complete + self.window_ms, self.window_ms))

    def _train_bundle(
        self, windows: Sequence[AggregationWindow], previous_version: int, now: int
    ) -> tuple[Published, list[float]]:
        """Fit registry and model, then prime the error distribution.

        The buffer is seeded with the newest training errors so the first
        live scores compare against a full Gaussian estimate instead of a
        cold start. Fitted errors understate the live scale slightly, but
        training on the freshest windows matters more than that bias:
        holding them out for priming degrades early reconstruction.
        """
        registry = register_features(windows, previous_version=previous_version)
        matrix = np.stack(
            [
                build_vector(
                    w,
                    registry,
                    consecutive_empty_before=0,
                    skip_after_empty_windows=self.config.features.skip_after_empty_windows,
                ).values
                for w in windows
            ]
        )
        model = init_model(self.config.model, registry)
        trained, losses = self._train_fn(
            model, matrix, self.config.model, trained_at_ms=now
        )
        state = ErrorDistributionState(
            window_w=self.config.likelihood.window_w,
            short_window=self.config.likelihood.short_window,
        )
        errors = autoencoder.batch_mse(trained, matrix)
        for e in errors[-self.config.likelihood.window_w :]:
            state.observe(float(e))
        return Published(registry=registry, model=trained, likelihood=state), losses

    def bootstrap(self, now: int | None = None) -> list[float]:
        """Initial training over the leading slice of everything ingested.

        Large backlogs train on the first `training_horizon_windows`
        complete windows; short ones on 15% of the backlog (at least
        lookback + 1). Later windows stay pending for scoring.
        """
        now = self.now_ms() if now is None else now
        with self._lock:
            all_starts = self._complete_window_range(now)
            n = len(all_starts)
            rows = autoencoder.select_training_rows(
                n, self.config.model.lookback, self.config.retrain.training_horizon_windows
            )
            if n < self.config.model.lookback + 1:
                raise autoencoder.InsufficientData(
                    f"{n} complete windows cannot train a lookback "
                    f"{self.config.model.lookback} model"
                )
            train_starts = all_starts[:rows]
            windows = [self.assembler.finalize(s) for s in train_starts]
            for w in windows:
                self._aggs[w.start] = w
                self.docs.put("windows", str(w.start), w.to_doc())
            bundle, losses = self._train_bundle(windows, 0, now)
            self._next_window = train_starts[-1] + self.window_ms
            self._apply_publish(bundle)
            self._last_retrain_ms = now
            self._persist_published(bundle)
            self._emit(
                "model_trained",
                kind="initial",
                windows=len(windows),
                registryVersion=bundle.registry.version,
                modelVersion=bundle.model.model_version,
            )
            return losses

    def _apply_publish(self, bundle: Published) -> None:
        """Swap the active triple and rebuild the vector history under it."""
        assert bundle.consistent()
        self._published = bundle
        self._history = []
        if self._next_window is None:
            return
        lookback = bundle.model.lookback
        starts = [
            self._next_window - k * self.window_ms for k in range(lookback - 1, 0, -1)
        ]
        for s in starts:
            agg = self._aggs.get(s) or AggregationWindow(s, s + self.window_ms, {})
            vec = build_vector(
                agg,
                bundle.registry,
                consecutive_empty_before=0,
                skip_after_empty_windows=self.config.features.skip_after_empty_windows,
            )
            self._history.append(vec.values)

    def _persist_published(self, bundle: Published) -> None:
        self.docs.put("registry", f"v{bundle.registry.version}", bundle.registry.to_doc())
        self.docs.put("registry", "active", bundle.registry.to_doc())
        self.blobs.put_bytes(
            f"model-v{bundle.model.model_version}", bundle.model.to_blob()
        )
        self.blobs.put_bytes("model-active", bundle.model.to_blob())

    # ---- retraining ------------------------------------------------

    def retrain_due(self, now: int) -> bool:
        if self._last_retrain_ms is None:
            return False
        interval_ms = int(self.config.retrain.interval_hours * 3600 * 1000)
        return now - self._last_retrain_ms >= interval_ms

    def schedule_retrain(self, now: int | None = None, force: bool = False) -> bool:
        """Start an asynchronous retrain when due; never blocks scoring."""
        now = self.now_ms() if now is None else now
        if self._published is None:
            raise NoModel("cannot retrain before initial training")
        if not force and not self.retrain_due(now):
            return False
        if self._retrain_thread is not None and self._retrain_thread.is_alive():
            return False
        with self._lock:
            windows = self._retrain_snapshot()
        self._last_retrain_ms = now
        if len(windows) < self.config.model.lookback + 1:
            self._emit("retrain_skipped", reason="insufficient windows")
            return False
        previous_version = self._published.registry.version
        self._retrain_thread = threading.Thread(
            target=self._retrain_job,
            args=(windows, previous_version, now),
            name="opswatch-retrain",
            daemon=True,
        )
        self._retrain_thread.start()
        return True

    def retrain_now(self, now: int | None = None) -> bool:
        """Synchronous retrain: run the job inline and swap immediately."""
        now = self.now_ms() if now is None else now
        if self._published is None:
            raise NoModel("cannot retrain before initial training")
        with self._lock:
            windows = self._retrain_snapshot()
        self._last_retrain_ms = now
        if len(windows) < self.config.model.lookback + 1:
            self._emit("retrain_skipped", reason="insufficient windows")
            return False
        self._retrain_job(windows, self._published.registry.version, now)
        with self._lock:
            self._swap_if_pending()
        return True

    def _retrain_snapshot(self) -> list[AggregationWindow]:
        """The most recent training-horizon slice of processed windows."""
        starts = sorted(self._aggs)
        starts = starts[-self.config.retrain.training_horizon_windows :]
        return [self._aggs[s] for s in starts]

    def _retrain_job(
        self, windows: list[AggregationWindow], previous_version: int, now: int
    ) -> None:
        try:
            bundle, _ = self._train_bundle(windows, previous_version, now)
        except Exception as exc:
            self._emit("retrain_failed", error=str(exc))
            return
        with self._swap_lock:
            self._pending = bundle
        self._emit(
            "model_trained",
            kind="retrain",
            windows=len(windows),
            registryVersion=bundle.registry.version,
            modelVersion=bundle.model.model_version,
        )

    def _swap_if_pending(self) -> None:
        with self._swap_lock:
            bundle, self._pending = self._pending, None
        if bundle is None:
            return
        self._apply_publish(bundle)
        self._persist_published(bundle)
        absorbed = [k for k in self._unseen if k in bundle.registry.key_set()]
        for key in absorbed:
            del self._unseen[key]
            self._warned_keys.discard(key)
        self._emit(
            "model_swapped",
            registryVersion=bundle.registry.version,
            modelVersion=bundle.model.model_version,
            absorbedKeys=[k.to_list() for k in absorbed],
        )

    # ---- scoring ---------------------------------------------------

    def tick(self, now: int | None = None) -> list[AnomalyAssessment]:
        """Close and score every complete unscored window, oldest first.

        Also applies any pending model swap (before scoring), re-scores
        windows dirtied by late records, emits unseen-feature warnings,
        and evicts state beyond the retention horizon.
        """
        now = self.now_ms() if now is None else now
        with self._lock:
            if self._published is None:
                raise NoModel("tick before initial training")
            self._swap_if_pending()
            produced: list[AnomalyAssessment] = []

            last_complete = window_of(now, self.window_ms) - self.window_ms
            while self._next_window is not None and self._next_window <= last_complete:
                start = self._next_window
                try:
                    agg = self.assembler.finalize(start)
                    self._aggs[start] = agg
                    self.docs.put("windows", str(start), agg.to_doc())
                    assessment = self._score_window(agg, revision=1, live=True)
                    if assessment is not None:
                        produced.append(assessment)
                except Exception as exc:
                    self._emit("tick_failure", windowStart=start, error=str(exc))
                self._next_window = start + self.window_ms

            for start in self.assembler.pop_dirty():
                try:
                    assessment = self._rescore_window(start)
                    if assessment is not None:
                        produced.append(assessment)
                except Exception as exc:
                    self._emit("tick_failure", windowStart=start, error=str(exc))

            self._warn_unseen(now)
            self._evict(now)
            self._persist_tick_state()
            return produced

    def _persist_tick_state(self) -> None:
        assert self._published is not None
        self.docs.put("state", "likelihood", self._published.likelihood.to_doc())
        self.docs.put(
            ENGINE_STATE,
            "meta",
            {
                "nextWindow": self._next_window,
                "lastRetrainMs": self._last_retrain_ms,
                "emptyRun": self._empty_run,
                "revisions": {str(k): v for k, v in self._revisions.items()},
            },
        )

    def _consecutive_empty_before(self, start: int) -> int:
        run = 0
        s = start - self.window_ms
        while s in self._aggs and self._aggs[s].empty:
            run += 1
            s -= self.window_ms
        return run

    def _score_window(
        self, agg: AggregationWindow, revision: int, live: bool
    ) -> AnomalyAssessment | None:
        """Score one window against the published triple.

        Live scoring advances the error buffer, the vector history, and
        the model (in that strict order: score, insert, online step);
        re-scores peek at the distribution without advancing anything.
        """
        assert self._published is not None
        published = self._published
        registry, model = published.registry, published.model

        vec = build_vector(
            agg,
            registry,
            consecutive_empty_before=(
                self._empty_run if live else self._consecutive_empty_before(agg.start)
            ),
            skip_after_empty_windows=self.config.features.skip_after_empty_windows,
        )
        if live:
            self._empty_run = self._empty_run + 1 if agg.empty else 0
        for key in vec.unseen_keys:
            entry = self._unseen.get(key)
            if entry is None:
                self._unseen[key] = UnseenEntry(
                    key=key, first_seen=agg.start, count=1, priority=_priority_for(key)
                )
            else:
                entry.count += 1

        if vec.policy is Policy.SKIP_WITH_WARNING:
            self._emit("window_skipped", windowStart=agg.start, emptyRun=self._empty_run)
            if live:
                self._push_history(vec.values, model.lookback)
            return None
        if vec.policy is Policy.PREDICT_WITH_WARNING:
            self._emit("empty_window", windowStart=agg.start)

        sample = self._sample_for(vec, live=live)
        if sample is None:
            self._emit(
                "window_unscored", windowStart=agg.start, reason="insufficient history"
            )
            if live:
                self._push_history(vec.values, model.lookback)
            return None

        recon = autoencoder.forward(model, sample)
        per_feature, mse = autoencoder.reconstruction_error(sample, recon)
        if live:
            likelihood = published.likelihood.observe(mse)
        else:
            likelihood = published.likelihood.peek(mse)
        warmed = len(published.likelihood.buffer) >= published.likelihood.short_window
        flagged = warmed and flag(likelihood, self.config.likelihood.threshold)
        assessment = AnomalyAssessment(
            window_start=agg.start,
            registry_version=registry.version,
            model_version=model.model_version,
            mse=mse,
            per_feature=per_feature,
            likelihood=likelihood,
            flagged=flagged,
            policy=vec.policy,
            top_features=rank_features(per_feature, registry) if flagged else (),
            revision=revision,
        )
        self._record_assessment(assessment)

        if live:
            self._push_history(vec.values, model.lookback)
            if vec.policy is Policy.PREDICT:
                published.model = online_step(
                    model,
                    sample,
                    learning_rate=self.config.model.online_learning_rate,
                    grad_clip=self.config.model.grad_clip,
                )
        return assessment

    def _sample_for(self, vec: FeatureVector, live: bool) -> np.ndarray | None:
        assert self._published is not None
        lookback = self._published.model.lookback
        if live:
            if len(self._history) < lookback - 1:
                return None
            rows = self._history[-(lookback - 1) :] + [vec.values]
        else:
            rows = []
            for k in range(lookback - 1, 0, -1):
                s = vec.window_start - k * self.window_ms
                agg = self._aggs.get(s) or AggregationWindow(s, s + self.window_ms, {})
                rows.append(
                    build_vector(
                        agg,
                        self._published.registry,
                        consecutive_empty_before=0,
                        skip_after_empty_windows=self.config.features.skip_after_empty_windows,
                    ).values
                )
            rows.append(vec.values)
        return np.stack(rows)

    def _push_history(self, values: np.ndarray, lookback: int) -> None:
        self._history.append(values)
        if len(self._history) > lookback - 1:
            self._history = self._history[-(lookback - 1) :]

    def _record_assessment(self, assessment: AnomalyAssessment) -> None:
        self.assessments[assessment.window_start] = assessment
        self._revisions[assessment.window_start] = assessment.revision
        self.docs.put(
            ASSESSMENTS,
            f"{assessment.window_start}:{assessment.revision}",
            assessment.to_doc(),
        )
        assert self._published is not None
        self.alerting.handle_assessment(
            assessment,
            self._published.registry,
            history=lambda: (
                sorted(self._aggs.values(), key=lambda w: w.start),
                self.assembler.records(),
            ),
        )

    def _rescore_window(self, start: int) -> AnomalyAssessment | None:
        """Re-aggregate a dirtied window and supersede its assessment.

        The rolling error distribution is not rewound; the re-score
        peeks at the current distribution and only the reported values
        change.
        """
        agg = self.assembler.aggregate(start)
        self._aggs[start] = agg
        self.docs.put("windows", str(start), agg.to_doc())
        revision = self._revisions.get(start, 0) + 1
        assessment = self._score_window(agg, revision=revision, live=False)
        if assessment is not None:
            self._emit(
                "window_rescored", windowStart=start, revision=revision,
                flagged=assessment.flagged,
            )
        return assessment

    def _warn_unseen(self, now: int) -> None:
        pending = [
            e for k, e in sorted(self._unseen.items()) if k not in self._warned_keys
        ]
        if not pending:
            return
        for entry in pending:
            self._warned_keys.add(entry.key)
        high = [e.key.to_list() for e in pending if e.priority == "HIGH"]
        normal = [e.key.to_list() for e in pending if e.priority == "NORMAL"]
        if high:
            self._emit("unseen_features", priority="HIGH", keys=high)
        if normal:
            self._emit("unseen_features", priority="NORMAL", keys=normal)

    def unseen_keys(self) -> list[UnseenEntry]:
        return [self._unseen[k] for k in sorted(self._unseen)]

    def _evict(self, now: int) -> None:
        cutoff = now - self.config.retention.ms
        self.assembler.evict_before(cutoff)
        for start in [s for s in self._aggs if s < cutoff]:
            del self._aggs[start]
            self._revisions.pop(start, None)
            self.assessments.pop(start, None)
            self.docs.delete("windows", str(start))

    # ---- resident loop ---------------------------------------------

    def run_forever(self, stop: threading.Event | None = None) -> None:
        """Tick on the configured interval until stopped."""
        stop = stop or threading.Event()
        interval = self.config.tick.interval_seconds
        while not stop.is_set():
            now = self.now_ms()
            try:
                self.tick(now)
            except NoModel:
                self._emit("tick_failure", error="no trained model")
            try:
                self.schedule_retrain(now)
            except NoModel:
                pass
            stop.wait(interval)

    @property
    def published(self) -> Published | None:
        return self._published

    # ---- persistence -----------------------------------------------

    @classmethod
    def restore(
        cls,
        config: EngineConfig,
        docs: DocumentStore,
        blobs: BlobStore,
        now_ms: Callable[[], int] | None = None,
    ) -> "Engine":
        """Rebuild an engine from persisted state (documents plus model blob).

        Raw records of in-flight windows are not persisted, so windows
        that were open at shutdown score from their already-finalized
        aggregates; anything never aggregated is lost.
        """
        engine = cls(config, docs=docs, blobs=blobs, now_ms=now_ms)
        registry_doc = docs.get("registry", "active")
        model_blob = blobs.get_bytes("model-active")
        if registry_doc is None or model_blob is None:
            return engine
        registry = FeatureRegistry.from_doc(registry_doc)
        model = GruAutoencoderModel.from_blob(model_blob)
        state_doc = docs.get("state", "likelihood")
        state = (
            ErrorDistributionState.from_doc(state_doc)
            if state_doc is not None
            else ErrorDistributionState(
                window_w=config.likelihood.window_w,
                short_window=config.likelihood.short_window,
            )
        )
        for doc in docs.all("windows"):
            agg = AggregationWindow.from_doc(doc)
            engine._aggs[agg.start] = agg
            engine.assembler.mark_finalized(agg.start)
        meta = docs.get(ENGINE_STATE, "meta") or {}
        engine._next_window = meta.get("nextWindow")
        if engine._next_window is None and engine._aggs:
            engine._next_window = max(engine._aggs) + engine.window_ms
        engine._last_retrain_ms = meta.get("lastRetrainMs")
        engine._empty_run = meta.get("emptyRun", 0)
        engine._revisions = {
            int(k): v for k, v in meta.get("revisions", {}).items()
        }
        engine._apply_publish(
            Published(registry=registry, model=model, likelihood=state)
        )
        for doc in docs.all(ASSESSMENTS):
            assessment = AnomalyAssessment.from_doc(doc)
            current = engine.assessments.get(assessment.window_start)
            if current is None or assessment.revision > current.revision:
                engine.assessments[assessment.window_start] = assessment
        return engine
