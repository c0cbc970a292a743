"""Minibatch SGD with hand-written backpropagation.

Two entry points mirror the two-stage recipe: :func:`pretrain_time_convs`
fits the shared convolution stack on single labeled frames behind a throwaway
linear head, and :func:`train` fine-tunes the full sequence model after
:func:`apply_pretrained` copies those convolution weights in.

The learning rate follows an inverse step decay: lr(e) = lr0 / (1 + e // 10).
Plain SGD, no momentum, so the finite-difference gradient oracle applies to
exactly the quantities being descended.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from .model import (
    NumericsError,
    TransDopeConfig,
    TransDopeModel,
    _backward_batch,
    _conv_stack_backward,
    _conv_stack_forward,
    _forward_batch,
)


class TrainingDivergedError(ArithmeticError):
    """Raised when the loss stops being finite; message carries diagnostics."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr0: float = 1e-2
    decay_every: int = 10
    seed: int = 0
    stop_at_train_accuracy: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if self.decay_every < 1:
            raise ValueError(f"decay_every must be >= 1, got {self.decay_every}")


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr0 / (1 + epoch // cfg.decay_every)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    loss: float
    accuracy: float


@dataclass(frozen=True)
class PretrainResult:
    """Convolution weights fitted on single frames, plus the loss trace."""

    weights: dict[str, np.ndarray]
    history: list[EpochStats]


CONV_PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b")


def _as_xy(dataset, expect_seq: bool) -> tuple[np.ndarray, np.ndarray]:
    """Accept a Dataset object or an (inputs, labels) pair."""
    if hasattr(dataset, "sequences"):
        if expect_seq:
            x, y = dataset.sequences, dataset.labels
        else:
            x, y = dataset.frames()
    else:
        x, y = dataset
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    want = 5 if expect_seq else 4
    if x.ndim != want:
        raise ValueError(f"expected {want}-D inputs, got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match {x.shape[0]} inputs")
    if x.shape[0] == 0:
        raise ValueError("dataset is empty")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary (0 or 1)")
    return x, y


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _check_finite(loss: float, epoch: int, batch: int, lr: float):
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            f"loss became {loss} at epoch {epoch}, batch {batch}, lr {lr:g}; "
            "lower lr0 or inspect the input scaling"
        )


def train(
    model: TransDopeModel, dataset, cfg: TrainConfig
) -> tuple[TransDopeModel, list[EpochStats]]:
    """Fine-tune the full model in place on labeled 8-frame sequences."""
    x, y = _as_xy(dataset, expect_seq=True)
    want = (model.config.seq_len, *model.config.frame_shape)
    if x.shape[1:] != want:
        raise ValueError(f"sequences shaped {x.shape[1:]} do not fit model {want}")
    rng = _rng(cfg.seed)
    history: list[EpochStats] = []
    count = x.shape[0]
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        order = rng.permutation(count)
        loss_sum = 0.0
        correct = 0
        for start in range(0, count, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            try:
                logits, caches = _forward_batch(xb, model, with_cache=True)
            except NumericsError as exc:
                raise TrainingDivergedError(
                    f"{exc} at epoch {epoch}, batch {start // cfg.batch_size}, "
                    f"lr {lr:g}"
                ) from exc
            loss, dlogits = layers.bce_with_logits(logits, yb)
            _check_finite(loss, epoch, start // cfg.batch_size, lr)
            grads = _backward_batch(dlogits, caches, model)
            for name, g in grads.items():
                model.params[name] -= lr * g
            loss_sum += loss * len(idx)
            correct += int(np.sum((logits >= 0.0) == (yb == 1.0)))
        stats = EpochStats(epoch, lr, loss_sum / count, correct / count)
        history.append(stats)
        if (
            cfg.stop_at_train_accuracy is not None
            and stats.accuracy >= cfg.stop_at_train_accuracy
        ):
            break
    return model, history


def pretrain_time_convs(
    dataset, cfg: TrainConfig, config: TransDopeConfig | None = None
) -> PretrainResult:
    """Fit conv1/conv2 on single frames behind a temporary linear head.

    The throwaway head is discarded; only the convolution weights survive.
    Frames see the same fixed input scaling the full model applies, so the
    transferred filters meet identically distributed activations.
    """
    x, y = _as_xy(dataset, expect_seq=False)
    if config is None:
        n, p, c = x.shape[1:]
        config = TransDopeConfig(range_bins=n, doppler_bins=p, channels=c)
    if x.shape[1:] != config.frame_shape:
        raise ValueError(f"frames shaped {x.shape[1:]} do not fit config {config.frame_shape}")

    rng = _rng(cfg.seed)
    k, c, f = config.conv_kernel, config.channels, config.conv_filters
    feat = config.feature_count
    init = lambda shape, fan: rng.uniform(-np.sqrt(6.0 / fan), np.sqrt(6.0 / fan), shape)
    params = {
        "conv1_w": init((k, k, c, f), k * k * c),
        "conv1_b": np.zeros(f),
        "conv2_w": init((k, k, f, f), k * k * f),
        "conv2_b": np.zeros(f),
        "fc_w": init((feat, 1), feat),
        "fc_b": np.zeros(1),
    }

    history: list[EpochStats] = []
    count = x.shape[0]
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        order = rng.permutation(count)
        loss_sum = 0.0
        correct = 0
        for start in range(0, count, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = x[idx] * config.input_scale
            yb = y[idx]
            feats, conv_cache = _conv_stack_forward(xb, params, with_cache=True)
            flat = feats.reshape(len(idx), feat)
            out, _ = layers.linear_forward(flat, params["fc_w"], params["fc_b"])
            logits = out[:, 0]
            loss, dlogits = layers.bce_with_logits(logits, yb)
            _check_finite(loss, epoch, start // cfg.batch_size, lr)

            grads: dict[str, np.ndarray] = {}
            dflat, grads["fc_w"], grads["fc_b"] = layers.linear_backward(
                dlogits[:, None], (flat, params["fc_w"])
            )
            _conv_stack_backward(dflat.reshape(feats.shape), conv_cache, grads)
            for name, g in grads.items():
                params[name] -= lr * g
            loss_sum += loss * len(idx)
            correct += int(np.sum((logits >= 0.0) == (yb == 1.0)))
        history.append(EpochStats(epoch, lr, loss_sum / count, correct / count))

    weights = {name: params[name].copy() for name in CONV_PARAM_NAMES}
    return PretrainResult(weights=weights, history=history)


def apply_pretrained(model: TransDopeModel, pretrained) -> TransDopeModel:
    """Copy pretrained convolution weights into the model, bit for bit."""
    weights = getattr(pretrained, "weights", pretrained)
    for name in CONV_PARAM_NAMES:
        src = np.asarray(weights[name], dtype=np.float64)
        if src.shape != model.params[name].shape:
            raise ValueError(
                f"pretrained {name} shape {src.shape} does not match "
                f"model shape {model.params[name].shape}"
            )
        model.params[name] = src.copy()
    return model


def evaluate(model: TransDopeModel, dataset, batch_size: int = 16) -> float:
    """Fraction of sequences classified correctly at threshold 0.5."""
    x, y = _as_xy(dataset, expect_seq=True)
    correct = 0
    for start in range(0, x.shape[0], batch_size):
        xb = x[start : start + batch_size]
        yb = y[start : start + batch_size]
        logits, _ = _forward_batch(xb, model, with_cache=False)
        correct += int(np.sum((logits >= 0.0) == (yb == 1.0)))
    return correct / x.shape[0]
