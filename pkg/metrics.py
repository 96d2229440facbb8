"""Evaluation metrics and channel analysis (correlation, ranking, grouping)."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

import config
from errors import DataError
from records import Dataset

logger = logging.getLogger(__name__)


# --- Confusion matrix / F1 ---
@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are true classes, columns are predicted classes."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DataError(f"confusion matrix must be square, got {counts.shape}")
        if np.any(counts < 0):
            raise DataError("confusion matrix entries must be >= 0")
        if len(self.class_names) != counts.shape[0]:
            raise DataError(f"{len(self.class_names)} class names for a {counts.shape[0]}-class matrix")
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @classmethod
    def from_predictions(cls, y_true, y_pred, class_names: Sequence[str]) -> "ConfusionMatrix":
        n = len(class_names)
        counts = np.zeros((n, n), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
        return cls(counts, tuple(class_names))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def recall(self) -> np.ndarray:
        support = self.counts.sum(axis=1)
        diag = np.diag(self.counts).astype(np.float64)
        return np.divide(diag, support, out=np.zeros_like(diag), where=support > 0)

    def accuracy(self) -> float:
        if self.total == 0:
            raise DataError("accuracy of an empty confusion matrix")
        return float(np.trace(self.counts) / self.total)

    def to_list(self) -> list[list[int]]:
        return self.counts.tolist()


def f1_scores(cm: ConfusionMatrix) -> tuple[np.ndarray, float]:
    """
    Per-class F1 and their unweighted mean.

    Args:
        cm: confusion matrix with at least one evaluated record.

    Returns:
        (per_class, macro_f1); classes with P + R = 0 score 0.
    """
    if cm.total == 0:
        raise DataError("F1 of an empty confusion matrix")
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    predicted = counts.sum(axis=0)
    actual = counts.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    per_class = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return per_class, float(per_class.mean())


# --- Channel analysis ---
class RankMethod(str, Enum):
    MAX_ENERGY = "MaxEnergy"
    PCA_VARIANCE = "PcaVariance"


_CONSTANT_STD = 1e-12


def _stacked_samples(d: Dataset) -> np.ndarray:
    if len(d) == 0:
        raise DataError("channel analysis needs a nonempty dataset")
    return np.concatenate([rec.channels for rec in d.records], axis=1)


def compute_correlation_matrix(d: Dataset) -> tuple[np.ndarray, list[str]]:
    """
    Pearson correlation of the 9 channels over all concatenated samples.

    Returns:
        (matrix [9, 9], names of constant channels); constant channels get a
        zero row/column with 1 on the diagonal.
    """
    samples = _stacked_samples(d)
    std = samples.std(axis=1)
    constant = std <= _CONSTANT_STD
    centered = samples - samples.mean(axis=1, keepdims=True)
    safe_std = np.where(constant, 1.0, std)
    z = centered / safe_std[:, None]
    corr = (z @ z.T) / samples.shape[1]
    corr[constant, :] = 0.0
    corr[:, constant] = 0.0
    np.fill_diagonal(corr, 1.0)
    corr = np.clip((corr + corr.T) / 2, -1.0, 1.0)

    flagged = [config.CHANNEL_NAMES[i] for i in np.flatnonzero(constant)]
    if flagged:
        logger.warning(f"Constant channels in correlation matrix: {flagged}")
    return corr, flagged


def _rounded(scores: np.ndarray) -> np.ndarray:
    # Relative rounding so float noise from summation order cannot reorder ties.
    scale = np.max(np.abs(scores))
    if scale == 0:
        return scores
    return np.round(scores / scale, 12)


def channel_scores(d: Dataset, method: RankMethod | str) -> np.ndarray:
    method = RankMethod(method)
    if method is RankMethod.MAX_ENERGY:
        _stacked_samples(d)
        return np.mean([np.sum(rec.channels ** 2, axis=1) for rec in d.records], axis=0)
    samples = _stacked_samples(d)
    cov = np.cov(samples)
    _, vectors = np.linalg.eigh(cov)
    return np.abs(vectors[:, -1])


def rank_channels(d: Dataset, method: RankMethod | str = RankMethod.MAX_ENERGY) -> list[int]:
    """Channel indices, most important first; ties broken by lower index."""
    scores = _rounded(channel_scores(d, method))
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def select_channels(d: Dataset, method: RankMethod | str, k: int) -> list[int]:
    """Top-k ranked channels, returned in channel order."""
    if not 1 <= k <= config.N_CHANNELS:
        raise DataError(f"k must be in [1, {config.N_CHANNELS}], got {k}")
    return sorted(rank_channels(d, method)[:k])


def group_correlated_channels(corr: np.ndarray, threshold: float = 0.7) -> list[list[int]]:
    """Connected components of |corr| >= threshold, ordered by their smallest member."""
    corr = np.asarray(corr)
    n = corr.shape[0]
    adjacent = np.abs(corr) >= threshold
    seen = [False] * n
    groups = []
    for start in range(n):
        if seen[start]:
            continue
        stack, group = [start], []
        seen[start] = True
        while stack:
            i = stack.pop()
            group.append(i)
            for j in np.flatnonzero(adjacent[i]):
                if not seen[j]:
                    seen[j] = True
                    stack.append(int(j))
        groups.append(sorted(group))
    return groups
