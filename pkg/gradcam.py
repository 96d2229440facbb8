"""
Grad-CAM attributions for conv branches.

Filter weights come from the gradient of the target class score with respect
to the branch's last conv activation, pooled over time (1D) or time/scale (2D)
with a max by default. The rectified weighted map is resampled onto the
branch input and min-max normalized.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from enum import Enum

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

import config
from errors import ConfigError, ShapeError
from layers import CONV_KINDS, LayerKind
from model_graph import InputKind, ModelGraph, ModelInputs, backward, forward, softmax

logger = logging.getLogger(__name__)


class ScoreMode(str, Enum):
    LOGIT = "logit"
    PROBABILITY = "probability"


class PoolMode(str, Enum):
    MAX = "max"
    AVERAGE = "average"


@dataclass(frozen=True, eq=False)
class Attribution:
    """Heatmap in [0, 1]: [L_in] for 1D branches, [H, L_in] for 2D branches."""

    heatmap: np.ndarray
    target_class: int
    branch: str
    source_layer: str
    input_kind: InputKind
    channels: tuple[int, ...]
    raw_map: np.ndarray


def source_layer_name(model: ModelGraph, branch: str) -> str:
    """Last conv layer of the branch, or the Relu right after it."""
    layers = model.branch_layers.get(branch)
    if layers is None:
        raise ConfigError(f"no branch named '{branch}'")
    conv_idx = [i for i, layer in enumerate(layers) if layer.spec.kind in CONV_KINDS]
    if not conv_idx:
        raise ConfigError(f"branch '{branch}' has no convolutional layers to explain")
    i = conv_idx[-1]
    if i + 1 < len(layers) and layers[i + 1].spec.kind is LayerKind.RELU:
        i += 1
    return layers[i].name


def _score_gradient(logits: np.ndarray, target: int, score: ScoreMode) -> np.ndarray:
    d = np.zeros_like(logits, dtype=np.float64)
    if score is ScoreMode.LOGIT:
        d[:, target] = 1.0
    else:
        p = softmax(logits)
        d = -p[:, target:target + 1] * p
        d[:, target] += p[:, target]
    return d


def _resample_1d(values: np.ndarray, length: int) -> np.ndarray:
    if values.shape[-1] == length:
        return values.astype(np.float64)
    src = np.arange(values.shape[-1], dtype=np.float64)
    dst = np.linspace(0.0, values.shape[-1] - 1, length)
    if values.ndim == 1:
        return np.interp(dst, src, values)
    return np.stack([np.interp(dst, src, row) for row in values])


def _resample_2d(values: np.ndarray, height: int, width: int) -> np.ndarray:
    rows = _resample_1d(values, width)
    return _resample_1d(rows.T, height).T


def normalize_heatmap(cam: np.ndarray) -> np.ndarray:
    hi = float(cam.max()) if cam.size else 0.0
    if hi <= 0:
        return np.zeros_like(cam, dtype=np.float64)
    lo = float(cam.min())
    if hi - lo <= 1e-12 * hi:
        return np.ones_like(cam, dtype=np.float64)
    return (cam - lo) / (hi - lo)


def _attribute(model, grads, cache, branch_name, target, pool) -> Attribution:
    branch = model.arch.branch(branch_name)
    source = source_layer_name(model, branch_name)
    activation = np.asarray(cache.activations[source][0], dtype=np.float64)
    grad = np.asarray(grads.activations[source][0], dtype=np.float64)
    axes = tuple(range(1, grad.ndim))
    alpha = grad.max(axis=axes) if pool is PoolMode.MAX else grad.mean(axis=axes)
    cam = np.maximum(np.tensordot(alpha, activation, axes=(0, 0)), 0.0)

    if branch.input_kind is InputKind.SIGNALS_1D:
        resized = _resample_1d(cam, model.arch.signal_length)
    else:
        resized = _resample_2d(cam, model.arch.scaleogram_height, model.arch.signal_length)
    return Attribution(
        heatmap=normalize_heatmap(resized),
        target_class=int(target),
        branch=branch_name,
        source_layer=source,
        input_kind=branch.input_kind,
        channels=branch.channels,
        raw_map=cam,
    )


def _pass(model, inputs, target, score):
    if inputs.batch_size != 1:
        raise ShapeError(f"Grad-CAM explains one record at a time, got a batch of {inputs.batch_size}")
    if not 0 <= target < model.n_classes:
        raise ConfigError(f"target class {target} outside [0, {model.n_classes})")
    logits, cache = forward(model, inputs, training=False)
    grads = backward(model, cache, _score_gradient(logits, target, ScoreMode(score)))
    return grads, cache


def gradcam(model: ModelGraph, inputs: ModelInputs, target_class: int, branch: str,
            score=ScoreMode.LOGIT, pool=PoolMode.MAX) -> Attribution:
    source_layer_name(model, branch)
    grads, cache = _pass(model, inputs, target_class, score)
    return _attribute(model, grads, cache, branch, target_class, PoolMode(pool))


def gradcam_1d(model, inputs, target_class, branch, score=ScoreMode.LOGIT, pool=PoolMode.MAX) -> Attribution:
    if model.arch.branch(branch).input_kind is not InputKind.SIGNALS_1D:
        raise ConfigError(f"branch '{branch}' takes scaleograms; use gradcam_2d")
    return gradcam(model, inputs, target_class, branch, score, pool)


def gradcam_2d(model, inputs, target_class, branch, score=ScoreMode.LOGIT, pool=PoolMode.MAX) -> Attribution:
    if model.arch.branch(branch).input_kind is not InputKind.SCALEOGRAMS_2D:
        raise ConfigError(f"branch '{branch}' takes 1D signals; use gradcam_1d")
    return gradcam(model, inputs, target_class, branch, score, pool)


def explain_branches(model: ModelGraph, inputs: ModelInputs, target_class: int,
                     score=ScoreMode.LOGIT, pool=PoolMode.MAX) -> dict[str, Attribution]:
    """Attributions for every branch that has conv layers, from a single forward/backward pass."""
    grads, cache = _pass(model, inputs, target_class, score)
    out = {}
    for branch in model.arch.branches:
        if branch.conv_depth:
            out[branch.name] = _attribute(model, grads, cache, branch.name, target_class, PoolMode(pool))
    return out


def heat_mass_fraction(heatmap, start: int, end: int) -> float:
    """Share of total heat inside [start, end) along time (2D maps are summed over scales)."""
    h = np.asarray(heatmap, dtype=np.float64)
    if h.ndim == 2:
        h = h.sum(axis=0)
    total = h.sum()
    if total <= 0:
        return 0.0
    return float(h[max(0, start):max(0, end)].sum() / total)


def time_profile(att: Attribution) -> np.ndarray:
    return att.heatmap if att.heatmap.ndim == 1 else att.heatmap.max(axis=0)


def export_attribution(att: Attribution, signals, stem, sample_rate_hz: float = config.SAMPLE_RATE_HZ,
                       channel_names=None) -> dict[str, str]:
    """
    Writes `<stem>.csv` (time, one column per signal channel, heat) and
    `<stem>.png` (signals over a heat underlay, one pixel per sample wide).

    Args:
        att: attribution to export.
        signals: [C, N] signals shown alongside the heat (usually the branch's channels).
        stem: output path without extension.
    """
    signals = np.atleast_2d(np.asarray(signals, dtype=np.float64))
    heat = time_profile(att)
    n = heat.shape[0]
    if signals.shape[1] != n:
        raise ShapeError(f"attribution covers {n} samples, signals have {signals.shape[1]}")
    if channel_names is None:
        channel_names = [config.CHANNEL_NAMES[c] for c in att.channels] if len(att.channels) == signals.shape[0] \
            else [f"ch{i}" for i in range(signals.shape[0])]

    stem = str(stem)
    os.makedirs(os.path.dirname(os.path.abspath(stem)), exist_ok=True)
    t = np.arange(n) / sample_rate_hz
    frame = pd.DataFrame({"time": t, **{name: row for name, row in zip(channel_names, signals)}, "heat": heat})
    csv_path = stem + ".csv"
    frame.to_csv(csv_path, index=False, float_format="%.9g")

    png_path = stem + ".png"
    fig, ax = plt.subplots(figsize=(n / 100, 3.0), dpi=100)
    lo, hi = float(signals.min()), float(signals.max())
    if hi <= lo:
        lo, hi = lo - 1.0, hi + 1.0
    underlay = att.heatmap if att.heatmap.ndim == 2 else heat[None, :]
    ax.imshow(underlay, aspect="auto", cmap="jet", alpha=0.35, origin="lower",
              extent=(t[0], t[-1], lo, hi), vmin=0.0, vmax=1.0)
    for name, row in zip(channel_names, signals):
        ax.plot(t, row, linewidth=0.8, label=name)
    ax.set_xlim(t[0], t[-1])
    ax.set_ylim(lo, hi)
    ax.set_title(f"{att.branch}: class {att.target_class}", fontsize=8)
    fig.savefig(png_path, dpi=100)
    plt.close(fig)
    return {"csv": csv_path, "image": png_path}
