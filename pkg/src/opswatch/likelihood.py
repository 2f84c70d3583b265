"""Anomaly likelihood over a rolling window of reconstruction errors.

Each new error is inserted into a ring buffer of the last W values,
then scored: the mean of the newest W' errors is compared against the
mean and standard deviation of the whole buffer, and the resulting
z-score is pushed through the Gaussian upper-tail function. A constant
error stream therefore sits at exactly 0.5, rising errors push toward
1, and a configurable threshold turns the likelihood into a flag.

Numeric conventions are deliberately pinned so persisted state replays
bit-identically: means are compensated sums anchored at the first
buffer element, the buffer-wide deviation uses the population form, and
the z denominator is floored at 1e-9.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .features import FeatureKey, FeatureRegistry, Policy

DEFAULT_WINDOW_W = 8000
DEFAULT_SHORT_WINDOW = 10
DEFAULT_THRESHOLD = 0.9602
SIGMA_FLOOR = 1e-9

# a feature is anomalous when its error exceeds this multiple of the median
FEATURE_CUT_MULTIPLIER = 5.0
FEATURE_CUT_FLOOR = 1e-6


class LikelihoodError(ValueError):
    pass


class NonFiniteError(LikelihoodError):
    pass


def _anchored_mean(xs: Sequence[float]) -> float:
    # compensated and anchored so a constant list returns its value exactly
    anchor = xs[0]
    return anchor + math.fsum(x - anchor for x in xs) / len(xs)


def _population_std(xs: Sequence[float], mean: float) -> float:
    return math.sqrt(math.fsum((x - mean) ** 2 for x in xs) / len(xs))


def gaussian_upper_tail(z: float) -> float:
    """P(Z > z) for a standard normal."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


class ErrorDistributionState:
    """Rolling error buffer; insert-then-score, oldest evicted at capacity."""

    def __init__(
        self,
        window_w: int = DEFAULT_WINDOW_W,
        short_window: int = DEFAULT_SHORT_WINDOW,
    ) -> None:
        if short_window < 1:
            raise LikelihoodError(f"short window must be >= 1, got {short_window}")
        if window_w <= short_window:
            raise LikelihoodError(
                f"buffer window ({window_w}) must exceed short window ({short_window})"
            )
        self.window_w = window_w
        self.short_window = short_window
        self.buffer: deque[float] = deque(maxlen=window_w)
        self.count = 0

    @staticmethod
    def _validate(error: float) -> float:
        error = float(error)
        if not math.isfinite(error):
            raise NonFiniteError(f"error must be finite, got {error}")
        if error < 0:
            raise LikelihoodError(f"error must be non-negative, got {error}")
        return error

    def _score(self, xs: list[float]) -> float:
        if len(xs) < self.short_window:
            return 0.5
        mean_full = _anchored_mean(xs)
        std_full = _population_std(xs, mean_full)
        mean_recent = _anchored_mean(xs[-self.short_window :])
        z = (mean_recent - mean_full) / max(std_full, SIGMA_FLOOR)
        return 1.0 - gaussian_upper_tail(z)

    def observe(self, error: float) -> float:
        """Insert the error, then return the likelihood of the updated buffer."""
        error = self._validate(error)
        self.buffer.append(error)
        self.count += 1
        return self._score(list(self.buffer))

    def peek(self, error: float) -> float:
        """Score as if the error were inserted, without changing the state."""
        error = self._validate(error)
        xs = list(self.buffer)
        xs.append(error)
        if len(xs) > self.window_w:
            xs = xs[-self.window_w :]
        return self._score(xs)

    def to_doc(self) -> dict[str, Any]:
        return {
            "windowW": self.window_w,
            "shortWindow": self.short_window,
            "count": self.count,
            "buffer": list(self.buffer),
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "ErrorDistributionState":
        state = cls(window_w=int(doc["windowW"]), short_window=int(doc["shortWindow"]))
        for value in doc["buffer"]:
            state.buffer.append(float(value))
        state.count = int(doc["count"])
        return state


def update_and_score(state: ErrorDistributionState, error: float) -> float:
    return state.observe(error)


def flag(likelihood: float, threshold: float) -> bool:
    """Inclusive comparison: a likelihood equal to the threshold flags."""
    if not 0.0 <= likelihood <= 1.0:
        raise LikelihoodError(f"likelihood out of range: {likelihood}")
    if not 0.0 <= threshold <= 1.0:
        raise LikelihoodError(f"threshold out of range: {threshold}")
    return likelihood >= threshold


def rank_features(
    per_feature: np.ndarray, registry: FeatureRegistry
) -> tuple[FeatureKey, ...]:
    """Anomalous feature keys by descending error.

    Only the named feature columns compete (seasonality columns are
    model plumbing); the cut is a multiple of their median error with an
    absolute floor so an all-zero median cannot flag everything.
    """
    per_feature = np.asarray(per_feature, dtype=np.float64)
    if per_feature.shape != (registry.width,):
        raise LikelihoodError(
            f"expected {registry.width} per-feature errors, got {per_feature.shape}"
        )
    n_keys = len(registry.feature_keys)
    candidate_errors = per_feature[:n_keys]
    if n_keys == 0:
        return ()
    cut = max(
        FEATURE_CUT_MULTIPLIER * float(np.median(candidate_errors)), FEATURE_CUT_FLOOR
    )
    ranked = sorted(
        (i for i in range(n_keys) if candidate_errors[i] > cut),
        key=lambda i: (-candidate_errors[i], i),
    )
    return tuple(registry.feature_keys[i] for i in ranked)


@dataclass(frozen=True)
class AnomalyAssessment:
    """The scored verdict for one window under one model."""

    window_start: int
    registry_version: int
    model_version: int
    mse: float
    per_feature: np.ndarray
    likelihood: float
    flagged: bool
    policy: Policy
    top_features: tuple[FeatureKey, ...]
    revision: int = 1

    def to_doc(self) -> dict[str, Any]:
        return {
            "windowStart": self.window_start,
            "registryVersion": self.registry_version,
            "modelVersion": self.model_version,
            "mse": self.mse,
            "likelihood": self.likelihood,
            "flagged": self.flagged,
            "policy": self.policy.value,
            "topFeatures": [k.to_list() for k in self.top_features],
            "perFeature": [float(v) for v in self.per_feature],
            "revision": self.revision,
        }

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> "AnomalyAssessment":
        return cls(
            window_start=int(doc["windowStart"]),
            registry_version=int(doc["registryVersion"]),
            model_version=int(doc["modelVersion"]),
            mse=float(doc["mse"]),
            per_feature=np.asarray(doc["perFeature"], dtype=np.float64),
            likelihood=float(doc["likelihood"]),
            flagged=bool(doc["flagged"]),
            policy=Policy(doc["policy"]),
            top_features=tuple(FeatureKey.from_list(k) for k in doc["topFeatures"]),
            revision=int(doc["revision"]),
        )
