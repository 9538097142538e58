"""MSE objective, Adam and the prompt-tuning loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .prompting import PromptBank, trainable_parameters
from .scoring import QualityModel, crop_patches, resize_global
from .tensor import ContractError, Tape, Tensor, make_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 50
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ContractError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ContractError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class TrainRecord:
    epoch: int
    loss: float
    val_srcc: float | None = None


def mse_loss(predicted, target) -> Tensor:
    """Mean over the batch of squared errors. ``predicted`` may be a Tensor."""
    pred = predicted if isinstance(predicted, Tensor) else Tensor(predicted)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ContractError(f"mse_loss: {pred.shape} predictions vs {target.shape} targets")
    diff = pred - Tensor(target)
    return (diff * diff).mean()


class AdamState:
    """First/second moment buffers keyed by parameter position, plus the step count."""

    def __init__(self, params: list[Tensor]) -> None:
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(params: list[Tensor], state: AdamState, config: TrainConfig) -> None:
    """Bias-corrected Adam update, in place."""
    b1, b2 = config.beta1, config.beta2
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"parameter {p.name or i} has no gradient")
        g = p.grad
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        p.data -= config.learning_rate * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + config.eps)


def fit(samples: list[tuple[np.ndarray, float]], model: QualityModel, config: TrainConfig,
        callback=None) -> tuple[PromptBank, list[TrainRecord]]:
    """Tune ``model.bank`` in place on (image, mos) pairs; the backbone is never written.

    Each step scores one random crop per image together with the image's
    global resize. Shuffling and crops are seeded by (seed, epoch[, index]).
    ``callback(record)`` runs after each epoch.
    """
    if not samples:
        raise ContractError("training split is empty")
    params = trainable_parameters(model.bank)
    if not params:
        raise ContractError("no trainable parameters: prompt tuning is disabled in this bank")
    cfg = model.config
    images = [np.asarray(img, dtype=np.float64) for img, _ in samples]
    mos = np.array([m for _, m in samples], dtype=np.float64)
    globals_ = (np.stack([resize_global(img, cfg.image_side_global) for img in images])
                if model.use_global else None)
    state = AdamState(params)
    history: list[TrainRecord] = []
    for epoch in range(config.epochs):
        order = make_rng(config.seed, epoch, 0xE9).permutation(len(images))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            patches = np.concatenate([
                crop_patches(images[j], 1, cfg.image_side_local, "random", (config.seed, epoch, int(j)))
                for j in idx])
            for p in params:
                p.zero_grad()
            with Tape() as tape:
                pred = model.score_batch(patches, None if globals_ is None else globals_[idx])
                loss = mse_loss(pred, mos[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss {value} at epoch {epoch}, batch {lo}")
            tape.backward(loss)
            adam_step(params, state, config)
            total += value * len(idx)
        record = TrainRecord(epoch, total / len(images))
        log.debug("epoch %d loss %.6f", epoch, record.loss)
        history.append(record)
        if callback is not None:
            callback(record)
    return model.bank, history
