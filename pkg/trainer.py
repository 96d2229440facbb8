"""Adam training loop with early stopping on validation macro-F1, plus evaluation."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

import config
from errors import DataError, DivergenceError
from metrics import ConfusionMatrix, f1_scores
from model_graph import ModelGraph, ModelInputs, backward, forward, predict_batch

logger = logging.getLogger(__name__)


class AdamConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    lr: float = Field(default=1e-3, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    optimizer: AdamConfig = AdamConfig()
    batch_size: int = Field(default=32, ge=1)
    epochs: int = Field(default=40, ge=1)
    patience: int = Field(default=8, ge=1)
    seed: int = config.DEFAULT_SEED
    loss: Literal["softmax_cross_entropy"] = "softmax_cross_entropy"


@dataclass(frozen=True, eq=False)
class LabeledInputs:
    inputs: ModelInputs
    labels: np.ndarray
    record_ids: tuple[str, ...] = ()
    augmented: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def take(self, idx) -> "LabeledInputs":
        idx = np.asarray(idx, dtype=np.intp)
        return LabeledInputs(
            inputs=self.inputs.take(idx),
            labels=self.labels[idx],
            record_ids=tuple(self.record_ids[i] for i in idx) if self.record_ids else (),
            augmented=None if self.augmented is None else self.augmented[idx],
        )


# --- Loss / optimizer ---
def softmax_cross_entropy(logits, targets) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient (softmax - one_hot) / B."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    b = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(b), targets].mean())
    d = np.exp(log_probs)
    d[np.arange(b), targets] -= 1.0
    return loss, d / b


class Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: AdamConfig = AdamConfig()):
        self.cfg = cfg
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, model: ModelGraph, grads: dict[str, np.ndarray]):
        c = self.cfg
        self.step_count += 1
        bias1 = 1 - c.beta1 ** self.step_count
        bias2 = 1 - c.beta2 ** self.step_count
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            model.params[name] -= (c.lr * (m / bias1) / (np.sqrt(v / bias2) + c.eps)).astype(model.dtype)
        model.touch()


# --- History ---
@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int | None = None

    @property
    def epochs_run(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["epoch", "train_loss", "train_accuracy", "val_loss", "val_macro_f1"])

    def to_csv(self, path) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(str(path))), exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return str(path)


@dataclass(frozen=True, eq=False)
class EvalResult:
    confusion: ConfusionMatrix
    per_class_f1: np.ndarray
    macro_f1: float
    accuracy: float
    loss: float
    predictions: np.ndarray
    probabilities: np.ndarray


def evaluate(model: ModelGraph, data: LabeledInputs) -> EvalResult:
    if len(data) == 0:
        raise DataError("cannot evaluate on an empty set")
    preds, probs = predict_batch(model, data.inputs)
    picked = probs[np.arange(len(data)), data.labels]
    loss = float(-np.log(np.clip(picked, 1e-300, None)).mean())
    cm = ConfusionMatrix.from_predictions(data.labels, preds, model.class_names)
    per_class, macro = f1_scores(cm)
    return EvalResult(cm, per_class, macro, cm.accuracy(), loss, preds, probs)


def train(model: ModelGraph, train_data: LabeledInputs, val_data: LabeledInputs | None,
          cfg: TrainConfig = TrainConfig()) -> tuple[ModelGraph, TrainHistory]:
    """
    Minimizes softmax cross-entropy with Adam.

    Keeps the weights of the best validation macro-F1 epoch (the last epoch
    when there is no validation set) and stops after `patience` epochs
    without improvement. Deterministic for a given seed.
    """
    if len(train_data) == 0:
        raise DataError("training set is empty")
    if val_data is not None and val_data.augmented is not None and val_data.augmented.any():
        raise DataError("augmented records must not appear in the validation set")
    if val_data is not None and len(val_data) == 0:
        val_data = None

    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(model.params, cfg.optimizer)
    history = TrainHistory()
    best_f1, best_params, since_best = -1.0, None, 0
    n = len(train_data)

    logger.info(f"--- Training model ({model.parameter_count} parameters, {n} training records) ---")
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            batch = train_data.take(order[start:start + cfg.batch_size])
            logits, cache = forward(model, batch.inputs, training=True, rng=rng)
            loss, d_logits = softmax_cross_entropy(logits, batch.labels)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}", last_finite_epoch=epoch - 1)
            grads = backward(model, cache, d_logits)
            optimizer.step(model, grads.params)
            total_loss += loss * len(batch)
            correct += int((np.argmax(logits, axis=1) == batch.labels).sum())

        row = {
            "epoch": epoch,
            "train_loss": total_loss / n,
            "train_accuracy": correct / n,
            "val_loss": np.nan,
            "val_macro_f1": np.nan,
        }
        if val_data is not None:
            result = evaluate(model, val_data)
            if not np.isfinite(result.probabilities).all():
                raise DivergenceError(f"non-finite validation output at epoch {epoch}", last_finite_epoch=epoch - 1)
            row["val_loss"], row["val_macro_f1"] = result.loss, result.macro_f1
            if result.macro_f1 > best_f1:
                best_f1, since_best = result.macro_f1, 0
                best_params = {k: v.copy() for k, v in model.params.items()}
                history.best_epoch = epoch
            else:
                since_best += 1
        history.rows.append(row)
        logger.info(
            f"Epoch {epoch}: loss {row['train_loss']:.4f}, acc {row['train_accuracy']:.3f}, "
            f"val F1 {row['val_macro_f1']:.3f}"
        )
        if val_data is not None and since_best >= cfg.patience:
            logger.info(f"Early stop after {epoch} epochs (best epoch {history.best_epoch})")
            break

    if best_params is not None:
        model.set_params(best_params)
    else:
        history.best_epoch = history.epochs_run
    return model, history
