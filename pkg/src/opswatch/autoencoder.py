"""Sequence autoencoder for window reconstruction, written on numpy.

The encoder is a single GRU layer that folds L consecutive feature
vectors into its final hidden state. The decoder is a second GRU layer
fed that latent vector at every step (no teacher forcing, so training
and inference walk the same path), followed by a linear projection back
to the input width. Training is plain SGD on mean squared
reconstruction error with global gradient-norm clipping; everything is
float64 so analytic gradients can be checked against finite
differences.
"""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .config import ModelConfig
from .features import FeatureRegistry


class ModelError(ValueError):
    pass


class ShapeMismatch(ModelError):
    pass


class InsufficientData(ModelError):
    pass


class EmptyGrid(ModelError):
    pass


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GruCellParams:
    """Gate weights for one GRU layer.

    W* act on the step input, U* on the previous hidden state; z is the
    update gate, r the reset gate, h the candidate state.
    """

    Wz: np.ndarray
    Wr: np.ndarray
    Wh: np.ndarray
    Uz: np.ndarray
    Ur: np.ndarray
    Uh: np.ndarray
    bz: np.ndarray
    br: np.ndarray
    bh: np.ndarray

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator) -> "GruCellParams":
        def w(fan_in: int, cols: int) -> np.ndarray:
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=(fan_in, cols))

        return cls(
            Wz=w(input_dim, hidden),
            Wr=w(input_dim, hidden),
            Wh=w(input_dim, hidden),
            Uz=w(hidden, hidden),
            Ur=w(hidden, hidden),
            Uh=w(hidden, hidden),
            bz=np.zeros(hidden),
            br=np.zeros(hidden),
            bh=np.zeros(hidden),
        )

    @classmethod
    def zeros_like(cls, other: "GruCellParams") -> "GruCellParams":
        return cls(**{k: np.zeros_like(v) for k, v in vars(other).items()})

    def named(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.{k}": v for k, v in vars(self).items()}


def _cell_forward(
    p: GruCellParams, x: np.ndarray, h_prev: np.ndarray
) -> tuple[np.ndarray, tuple]:
    z = _sigmoid(x @ p.Wz + h_prev @ p.Uz + p.bz)
    r = _sigmoid(x @ p.Wr + h_prev @ p.Ur + p.br)
    c = np.tanh(x @ p.Wh + (r * h_prev) @ p.Uh + p.bh)
    h = (1.0 - z) * h_prev + z * c
    return h, (x, h_prev, z, r, c)


def _cell_backward(
    p: GruCellParams, g: GruCellParams, cache: tuple, dh: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Propagate dh through one step; returns (dx, dh_prev) and accumulates into g."""
    x, h_prev, z, r, c = cache
    dz = dh * (c - h_prev)
    dc = dh * z
    dh_prev = dh * (1.0 - z)

    dc_raw = dc * (1.0 - c * c)
    g.Wh += x.T @ dc_raw
    g.Uh += (r * h_prev).T @ dc_raw
    g.bh += dc_raw.sum(axis=0)
    d_rh = dc_raw @ p.Uh.T
    dr = d_rh * h_prev
    dh_prev = dh_prev + d_rh * r

    dz_raw = dz * z * (1.0 - z)
    dr_raw = dr * r * (1.0 - r)
    g.Wz += x.T @ dz_raw
    g.Uz += h_prev.T @ dz_raw
    g.bz += dz_raw.sum(axis=0)
    g.Wr += x.T @ dr_raw
    g.Ur += h_prev.T @ dr_raw
    g.br += dr_raw.sum(axis=0)
    dh_prev = dh_prev + dz_raw @ p.Uz.T + dr_raw @ p.Ur.T

    dx = dc_raw @ p.Wh.T + dz_raw @ p.Wz.T + dr_raw @ p.Wr.T
    return dx, dh_prev


@dataclass
class GruAutoencoderModel:
    """A trained (or initialized) reconstruction model, immutable by convention.

    Training functions return a new model value; the published instance
    is never mutated in place.
    """

    registry_version: int
    model_version: int
    input_width: int
    lookback: int
    hidden: int
    enc: GruCellParams
    dec: GruCellParams
    Wo: np.ndarray
    bo: np.ndarray
    learning_rate: float
    trained_at_ms: int = 0

    def parameters(self) -> dict[str, np.ndarray]:
        out = self.enc.named("enc")
        out.update(self.dec.named("dec"))
        out["Wo"] = self.Wo
        out["bo"] = self.bo
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def clone(self) -> "GruAutoencoderModel":
        return copy.deepcopy(self)

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.parameters().values())

    def to_blob(self) -> bytes:
        weights = {
            name: {"shape": list(p.shape), "data": p.ravel().tolist()}
            for name, p in self.parameters().items()
        }
        doc = {
            "registryVersion": self.registry_version,
            "modelVersion": self.model_version,
            "inputWidth": self.input_width,
            "lookback": self.lookback,
            "hidden": self.hidden,
            "learningRate": self.learning_rate,
            "trainedAtMs": self.trained_at_ms,
            "weights": weights,
        }
        return json.dumps(doc, sort_keys=True).encode("utf-8")

    @classmethod
    def from_blob(cls, blob: bytes) -> "GruAutoencoderModel":
        doc = json.loads(blob.decode("utf-8"))

        def arr(name: str) -> np.ndarray:
            w = doc["weights"][name]
            return np.asarray(w["data"], dtype=np.float64).reshape(w["shape"])

        def cell(prefix: str) -> GruCellParams:
            return GruCellParams(
                **{k: arr(f"{prefix}.{k}") for k in ("Wz", "Wr", "Wh", "Uz", "Ur", "Uh", "bz", "br", "bh")}
            )

        return cls(
            registry_version=doc["registryVersion"],
            model_version=doc["modelVersion"],
            input_width=doc["inputWidth"],
            lookback=doc["lookback"],
            hidden=doc["hidden"],
            enc=cell("enc"),
            dec=cell("dec"),
            Wo=arr("Wo"),
            bo=arr("bo"),
            learning_rate=doc["learningRate"],
            trained_at_ms=doc["trainedAtMs"],
        )


def init_model(
    config: ModelConfig, registry: FeatureRegistry, seed: int | None = None
) -> GruAutoencoderModel:
    """Seeded uniform fan-in initialization; deterministic per (config, registry, seed)."""
    if config.lookback < 2:
        raise ModelError(f"lookback must be at least 2, got {config.lookback}")
    if config.hidden < 1:
        raise ModelError(f"hidden size must be positive, got {config.hidden}")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    width = registry.width
    return GruAutoencoderModel(
        registry_version=registry.version,
        model_version=0,
        input_width=width,
        lookback=config.lookback,
        hidden=config.hidden,
        enc=GruCellParams.init(width, config.hidden, rng),
        dec=GruCellParams.init(config.hidden, config.hidden, rng),
        Wo=rng.uniform(
            -1.0 / math.sqrt(config.hidden),
            1.0 / math.sqrt(config.hidden),
            size=(config.hidden, width),
        ),
        bo=np.zeros(width),
        learning_rate=config.learning_rate,
    )


def _check_batch_shape(model: GruAutoencoderModel, batch: np.ndarray) -> None:
    if batch.ndim != 3 or batch.shape[1] != model.lookback or batch.shape[2] != model.input_width:
        raise ShapeMismatch(
            f"expected (batch, {model.lookback}, {model.input_width}), got {batch.shape}"
        )


def _forward_batch(model: GruAutoencoderModel, X: np.ndarray) -> tuple[np.ndarray, dict]:
    """Encode each sequence to a latent state, decode, and project."""
    B, L, _ = X.shape
    h = np.zeros((B, model.hidden))
    enc_caches = []
    for t in range(L):
        h, cache = _cell_forward(model.enc, X[:, t, :], h)
        enc_caches.append(cache)
    latent = h

    d = np.zeros((B, model.hidden))
    dec_caches = []
    dec_states = []
    Y = np.empty_like(X)
    for t in range(L):
        d, cache = _cell_forward(model.dec, latent, d)
        dec_caches.append(cache)
        dec_states.append(d)
        Y[:, t, :] = d @ model.Wo + model.bo
    return Y, {"enc": enc_caches, "dec": dec_caches, "dec_states": dec_states}


def loss_and_gradients(
    model: GruAutoencoderModel, X: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """MSE loss on a batch plus analytic gradients for every parameter."""
    _check_batch_shape(model, X)
    Y, caches = _forward_batch(model, X)
    diff = Y - X
    loss = float(np.mean(diff**2))
    dY = 2.0 * diff / diff.size

    g_enc = GruCellParams.zeros_like(model.enc)
    g_dec = GruCellParams.zeros_like(model.dec)
    gWo = np.zeros_like(model.Wo)
    gbo = np.zeros_like(model.bo)

    B, L, _ = X.shape
    dlatent = np.zeros((B, model.hidden))
    dd_next = np.zeros((B, model.hidden))
    for t in reversed(range(L)):
        dYt = dY[:, t, :]
        gWo += caches["dec_states"][t].T @ dYt
        gbo += dYt.sum(axis=0)
        dd = dYt @ model.Wo.T + dd_next
        dx, dd_next = _cell_backward(model.dec, g_dec, caches["dec"][t], dd)
        dlatent += dx

    dh_next = dlatent
    for t in reversed(range(L)):
        _, dh_next = _cell_backward(model.enc, g_enc, caches["enc"][t], dh_next)

    grads = g_enc.named("enc")
    grads.update(g_dec.named("dec"))
    grads["Wo"] = gWo
    grads["bo"] = gbo
    return loss, grads


def _clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def _sgd_step(model: GruAutoencoderModel, grads: dict[str, np.ndarray], lr: float) -> None:
    for name, param in model.parameters().items():
        param -= lr * grads[name]


def forward(model: GruAutoencoderModel, sample: np.ndarray) -> np.ndarray:
    """Reconstruct one (lookback, width) sample. Pure: no state carries over."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.shape != (model.lookback, model.input_width):
        raise ShapeMismatch(
            f"expected ({model.lookback}, {model.input_width}), got {sample.shape}"
        )
    Y, _ = _forward_batch(model, sample[None, :, :])
    return Y[0]


def reconstruction_error(
    sample: np.ndarray, reconstruction: np.ndarray
) -> tuple[np.ndarray, float]:
    """Per-column mean squared error over the sequence, and their mean."""
    sample = np.asarray(sample, dtype=np.float64)
    reconstruction = np.asarray(reconstruction, dtype=np.float64)
    if sample.shape != reconstruction.shape or sample.ndim != 2:
        raise ShapeMismatch(
            f"sample {sample.shape} vs reconstruction {reconstruction.shape}"
        )
    per_feature = np.mean((reconstruction - sample) ** 2, axis=0)
    return per_feature, float(per_feature.mean())


def make_samples(matrix: np.ndarray, lookback: int) -> np.ndarray:
    """All sliding (lookback, width) sequences of consecutive rows."""
    matrix = np.asarray(matrix, dtype=np.float64)
    n = matrix.shape[0]
    if n < lookback:
        raise InsufficientData(f"{n} rows cannot form a {lookback}-step sample")
    return np.stack([matrix[i : i + lookback] for i in range(n - lookback + 1)])


def select_training_rows(total_rows: int, lookback: int, horizon: int = 9000) -> int:
    """How many leading rows the first training run consumes.

    Large streams take the first `horizon` rows; short ones take 15% of
    the stream, but never fewer than lookback + 1.
    """
    if total_rows >= horizon:
        return horizon
    return max(math.ceil(0.15 * total_rows), lookback + 1)


def train_batch(
    model: GruAutoencoderModel,
    matrix: np.ndarray,
    config: ModelConfig,
    trained_at_ms: int | None = None,
) -> tuple[GruAutoencoderModel, list[float]]:
    """Mini-batch SGD over all sliding samples of the training matrix.

    Returns a new model (the input is untouched) and the mean loss per
    epoch.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != model.input_width:
        raise ShapeMismatch(
            f"training matrix width {matrix.shape} does not match model "
            f"width {model.input_width}"
        )
    if matrix.shape[0] < model.lookback + 1:
        raise InsufficientData(
            f"need at least {model.lookback + 1} rows, got {matrix.shape[0]}"
        )

    samples = make_samples(matrix, model.lookback)
    trained = model.clone()
    rng = np.random.default_rng(config.seed)
    losses: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = samples[order[start : start + config.batch_size]]
            loss, grads = loss_and_gradients(trained, batch)
            _clip_gradients(grads, config.grad_clip)
            _sgd_step(trained, grads, config.learning_rate)
            epoch_loss += loss
            batches += 1
        losses.append(epoch_loss / max(batches, 1))

    trained.model_version = model.model_version + 1
    trained.trained_at_ms = (
        int(time.time() * 1000) if trained_at_ms is None else trained_at_ms
    )
    if not trained.all_finite():
        raise ModelError("training produced non-finite weights")
    return trained, losses


def online_step(
    model: GruAutoencoderModel,
    sample: np.ndarray,
    learning_rate: float | None = None,
    grad_clip: float = 1.0,
) -> GruAutoencoderModel:
    """One clipped gradient step on the newest sample; returns a new model."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.shape != (model.lookback, model.input_width):
        raise ShapeMismatch(
            f"expected ({model.lookback}, {model.input_width}), got {sample.shape}"
        )
    lr = model.learning_rate if learning_rate is None else learning_rate
    updated = model.clone()
    _, grads = loss_and_gradients(updated, sample[None, :, :])
    _clip_gradients(grads, grad_clip)
    _sgd_step(updated, grads, lr)
    if not updated.all_finite():
        raise ModelError("online step produced non-finite weights")
    return updated


def batch_mse(model: GruAutoencoderModel, matrix: np.ndarray) -> np.ndarray:
    """Reconstruction MSE of every sliding sample, oldest first."""
    samples = make_samples(matrix, model.lookback)
    _check_batch_shape(model, samples)
    Y, _ = _forward_batch(model, samples)
    return np.mean((Y - samples) ** 2, axis=(1, 2))


def validation_mse(model: GruAutoencoderModel, matrix: np.ndarray) -> float:
    """Mean reconstruction MSE over all sliding samples of a matrix."""
    samples = make_samples(matrix, model.lookback)
    total = 0.0
    for sample in samples:
        recon = forward(model, sample)
        _, mse = reconstruction_error(sample, recon)
        total += mse
    return total / len(samples)


def grid_search(
    grid: Sequence[ModelConfig],
    registry: FeatureRegistry,
    train_matrix: np.ndarray,
    val_matrix: np.ndarray,
) -> tuple[ModelConfig, list[float]]:
    """Train every candidate config and keep the best validation MSE.

    Ties prefer fewer parameters, then a shorter lookback, then grid
    order.
    """
    if not grid:
        raise EmptyGrid("no configurations to search")
    scores: list[float] = []
    for config in grid:
        candidate = init_model(config, registry)
        if config.epochs > 0:
            candidate, _ = train_batch(candidate, train_matrix, config)
        scores.append(validation_mse(candidate, val_matrix))
    ranked = sorted(
        range(len(grid)),
        key=lambda i: (
            scores[i],
            init_model(grid[i], registry).parameter_count(),
            grid[i].lookback,
            i,
        ),
    )
    return grid[ranked[0]], scores
