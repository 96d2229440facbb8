"""
Signal conditioning: wrench frame transform, Butterworth low-pass, energy-based
transient isolation, window extraction, channel selection and normalization.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import signal
from scipy.spatial.transform import Rotation

import config
from errors import ConfigError, DataError, NoTransientError, ShapeError
from records import ActionRecord, Dataset

logger = logging.getLogger(__name__)


class NormalizationMode(str, Enum):
    NONE = "None"
    STANDARD = "Standard"
    MINMAX = "MinMax"


class PipelineConfig(BaseModel):
    """Full preprocessing recipe; defaults are the production values."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    cutoff_hz: float = Field(default=30.0, gt=0)
    filter_order: int = Field(default=4, gt=0)
    sample_rate_hz: float = Field(default=config.SAMPLE_RATE_HZ, gt=0)
    energy_window: int = Field(default=300, gt=0)
    thresholds: tuple[float, float, float] = (0.38, 0.22, 0.12)
    proximity: int = Field(default=60, ge=0)
    far_gap: int = Field(default=200, ge=0)
    extract_len: int = Field(default=800, gt=0)
    pre_roll: int = Field(default=0, ge=0)
    normalization: NormalizationMode = NormalizationMode.NONE
    selected_channels: tuple[int, ...] | None = None
    energy_channels: tuple[int, ...] = config.FORCE_CHANNELS
    transform_to_tcp: bool = True

    @model_validator(mode="after")
    def _check(self):
        t_hi, t_mid, t_lo = self.thresholds
        if not 0 < t_lo < t_mid < t_hi < 1:
            raise ValueError(f"thresholds must satisfy 0 < t_lo < t_mid < t_hi < 1, got {self.thresholds}")
        if self.filter_order % 2:
            raise ValueError(f"filter_order must be even, got {self.filter_order}")
        if self.cutoff_hz >= self.sample_rate_hz / 2:
            raise ValueError(f"cutoff {self.cutoff_hz} Hz must be below Nyquist ({self.sample_rate_hz / 2} Hz)")
        for name in ("selected_channels", "energy_channels"):
            chans = getattr(self, name)
            if chans is None:
                continue
            if not chans or any(not 0 <= c < config.N_CHANNELS for c in chans):
                raise ValueError(f"{name} must be a nonempty list of indices in [0, {config.N_CHANNELS}), got {chans}")
        return self

    @property
    def channels_out(self) -> tuple[int, ...]:
        if self.selected_channels is None:
            return tuple(range(config.N_CHANNELS))
        return tuple(self.selected_channels)


# --- Frame transform ---
def rotvec_to_matrix(r) -> np.ndarray:
    """Axis-angle exponential map; a zero vector gives the identity."""
    return Rotation.from_rotvec(np.asarray(r, dtype=np.float64)).as_matrix()


def wrench_to_tcp(f_base, t_base, r) -> tuple[np.ndarray, np.ndarray]:
    """
    Expresses base-frame force and torque in the TCP frame (R^T f, R^T t).

    Accepts single vectors ([3]) or per-sample series ([3, N]) with matching rotation vectors.
    """
    f_base = np.asarray(f_base, dtype=np.float64)
    t_base = np.asarray(t_base, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if f_base.ndim == 1:
        rot = Rotation.from_rotvec(r)
        return rot.apply(f_base, inverse=True), rot.apply(t_base, inverse=True)
    if not f_base.shape == t_base.shape == r.shape or f_base.shape[0] != 3:
        raise ShapeError(f"wrench_to_tcp expects matching [3, N] inputs, got {f_base.shape}, {t_base.shape}, {r.shape}")
    rot = Rotation.from_rotvec(np.array(r.T))  # writable copy: older scipy rejects read-only buffers
    return rot.apply(f_base.T, inverse=True).T, rot.apply(t_base.T, inverse=True).T


def transform_record_to_tcp(channels: np.ndarray, rotvec: np.ndarray) -> np.ndarray:
    out = np.array(channels, dtype=np.float64, copy=True)
    f, t = config.FORCE_CHANNELS, config.TORQUE_CHANNELS
    out[list(f)], out[list(t)] = wrench_to_tcp(channels[list(f)], channels[list(t)], rotvec)
    return out


# --- Filtering ---
def butter_sos(cutoff_hz: float, order: int, sample_rate_hz: float) -> np.ndarray:
    """Digital Butterworth low-pass (bilinear transform with prewarping) as second-order sections."""
    if cutoff_hz >= sample_rate_hz / 2:
        raise DataError(f"cutoff {cutoff_hz} Hz is not below Nyquist ({sample_rate_hz / 2} Hz)")
    return signal.butter(order, cutoff_hz, btype="low", output="sos", fs=sample_rate_hz)


def single_pass_gain(freq_hz, cutoff_hz=30.0, order=4, sample_rate_hz=config.SAMPLE_RATE_HZ) -> np.ndarray:
    """Magnitude response of one filter pass at the given frequencies."""
    freqs = np.atleast_1d(np.asarray(freq_hz, dtype=np.float64))
    _, h = signal.sosfreqz(butter_sos(cutoff_hz, order, sample_rate_hz), worN=freqs, fs=sample_rate_hz)
    return np.abs(h)


def lowpass_filter(x, cutoff_hz=30.0, order=4, sample_rate_hz=config.SAMPLE_RATE_HZ) -> np.ndarray:
    """
    Zero-phase (forward then backward) Butterworth low-pass along the last axis.

    The forward-backward pass is averaged with the same pass run on the
    time-reversed signal, so filtering commutes exactly with time reversal,
    edges included.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n <= 3 * order:
        raise DataError(f"signal of {n} samples is too short for an order-{order} zero-phase filter (need > {3 * order})")
    sos = butter_sos(cutoff_hz, order, sample_rate_hz)

    def forward_backward(v):
        return signal.sosfiltfilt(sos, v, axis=-1, padtype="odd", padlen=3 * order)

    mirrored = np.flip(forward_backward(np.flip(x, axis=-1)), axis=-1)
    return 0.5 * (forward_backward(x) + mirrored)


# --- Transient detection ---
def short_time_energy(x, window: int, channels: Sequence[int]) -> np.ndarray:
    """
    Trailing-window energy of the selected channels.

    e[i] sums the squared norm of the selected-channel vector over samples
    [i - window + 1, i]; the first window - 1 entries use the truncated prefix.
    """
    x = np.asarray(x, dtype=np.float64)
    channels = list(channels)
    if not channels:
        raise DataError("short_time_energy needs at least one channel")
    n = x.shape[-1]
    if not 0 < window <= n:
        raise DataError(f"energy window {window} must be in [1, {n}]")
    power = np.sum(x[channels] ** 2, axis=0)
    return np.convolve(power, np.ones(window))[:n]


def threshold_indices(e, thresholds=(0.38, 0.22, 0.12), record_id=None) -> tuple[int, int, int]:
    """First index where the energy reaches each fraction of its maximum, as (i_hi, i_mid, i_lo)."""
    e = np.asarray(e, dtype=np.float64)
    peak = float(e.max()) if e.size else 0.0
    if peak <= 0:
        raise NoTransientError(record_id)
    return tuple(int(np.argmax(e >= frac * peak)) for frac in thresholds)


def select_onset(i_hi: int, i_mid: int, i_lo: int, proximity: int = 60, far_gap: int = 200) -> int:
    if not i_hi >= i_mid >= i_lo:
        raise DataError(f"threshold indices out of order: ({i_hi}, {i_mid}, {i_lo})")
    if i_hi - i_lo <= proximity:
        return i_mid
    # Low crossings far ahead of the high one are disturbances.
    if i_hi - i_lo > far_gap:
        return i_hi
    return i_lo


def extract_window(x, start: int, length: int = 800) -> np.ndarray:
    """Slice [start, start + length), right-padded by repeating the last sample."""
    x = np.asarray(x)
    n = x.shape[-1]
    if not 0 <= start < n:
        raise DataError(f"window start {start} outside signal of {n} samples")
    window = x[..., start:start + length]
    short = length - window.shape[-1]
    if short > 0:
        pad = [(0, 0)] * (x.ndim - 1) + [(0, short)]
        window = np.pad(window, pad, mode="edge")
    return np.ascontiguousarray(window)


@dataclass(frozen=True, eq=False)
class IsolatedRecord:
    record: ActionRecord
    onset: int
    indices: tuple[int, int, int]


def isolate_transient(rec: ActionRecord, cfg: PipelineConfig) -> IsolatedRecord:
    """Transform, filter and cut the main transient window out of a record (all 9 channels kept)."""
    channels = rec.channels
    if cfg.transform_to_tcp:
        channels = transform_record_to_tcp(channels, rec.tcp_rotvec)
    filtered = lowpass_filter(channels, cfg.cutoff_hz, cfg.filter_order, rec.sample_rate_hz)

    energy = short_time_energy(filtered, min(cfg.energy_window, filtered.shape[-1]), cfg.energy_channels)
    indices = threshold_indices(energy, cfg.thresholds, record_id=rec.id)
    onset = select_onset(*indices, proximity=cfg.proximity, far_gap=cfg.far_gap)
    start = max(0, onset - cfg.pre_roll)
    window = extract_window(filtered, start, cfg.extract_len)
    rotvec = extract_window(rec.tcp_rotvec, start, cfg.extract_len)
    logger.debug(f"Record {rec.id}: thresholds {indices} -> onset {onset}")
    return IsolatedRecord(record=rec.with_channels(window, rotvec), onset=onset, indices=indices)


def isolate_dataset(d: Dataset, cfg: PipelineConfig) -> tuple[Dataset, list[str]]:
    """Windows every record; records without a transient are skipped and their ids returned."""
    kept, skipped = [], []
    for rec in d.records:
        try:
            kept.append(isolate_transient(rec, cfg).record)
        except NoTransientError:
            logger.warning(f"Skipping record {rec.id}: no transient found")
            skipped.append(rec.id)
    return d.with_records(kept), skipped


# --- Normalization ---
_CONSTANT_SPREAD = 1e-12


@dataclass(frozen=True, eq=False)
class NormStats:
    """Per-channel center/scale (mean/std or min/range) fitted on the training split."""

    mode: NormalizationMode
    center: np.ndarray
    scale: np.ndarray
    constant: np.ndarray

    @property
    def n_channels(self) -> int:
        return self.center.shape[0]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
            "constant": self.constant.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormStats":
        return cls(
            mode=NormalizationMode(data["mode"]),
            center=np.asarray(data["center"], dtype=np.float64),
            scale=np.asarray(data["scale"], dtype=np.float64),
            constant=np.asarray(data["constant"], dtype=bool),
        )


def fit_normalizer_arrays(windows: Sequence[np.ndarray], mode) -> NormStats:
    mode = NormalizationMode(mode)
    if mode is NormalizationMode.NONE:
        raise ConfigError("fit_normalizer needs a Standard or MinMax mode")
    if len(windows) == 0:
        raise DataError("cannot fit a normalizer on an empty training set")
    samples = np.concatenate([np.asarray(w, dtype=np.float64) for w in windows], axis=1)
    if mode is NormalizationMode.STANDARD:
        center, spread = samples.mean(axis=1), samples.std(axis=1)
    else:
        center = samples.min(axis=1)
        spread = samples.max(axis=1) - center
    constant = spread <= _CONSTANT_SPREAD
    if constant.any():
        logger.warning(f"Constant channels pass through normalization unchanged: {np.flatnonzero(constant).tolist()}")
    scale = np.where(constant, 1.0, spread)
    return NormStats(mode=mode, center=center, scale=scale, constant=constant)


def fit_normalizer(train: Dataset, mode, channels: Sequence[int] | None = None) -> NormStats:
    """Fits on (already windowed) training records, optionally restricted to a channel subset."""
    chans = list(range(config.N_CHANNELS)) if channels is None else list(channels)
    return fit_normalizer_arrays([rec.channels[chans] for rec in train.records], mode)


def apply_normalizer(x, stats: NormStats) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != stats.n_channels:
        raise ShapeError(f"normalizer fitted on {stats.n_channels} channels, input has {x.shape[0]}")
    center = np.where(stats.constant, 0.0, stats.center)
    return (x - center[:, None]) / stats.scale[:, None]


def select_and_normalize(window, cfg: PipelineConfig, stats: NormStats | None = None) -> np.ndarray:
    x = np.asarray(window, dtype=np.float64)[list(cfg.channels_out)]
    if cfg.normalization is NormalizationMode.NONE:
        return x
    if stats is None:
        raise ConfigError(f"{cfg.normalization.value} normalization requires fitted statistics")
    if stats.mode is not cfg.normalization:
        raise ConfigError(f"statistics were fitted for {stats.mode.value}, config asks for {cfg.normalization.value}")
    return apply_normalizer(x, stats)


def run_pipeline(rec: ActionRecord, cfg: PipelineConfig, stats: NormStats | None = None) -> np.ndarray:
    """Record -> model-ready window [C_sel, extract_len]."""
    if cfg.normalization is not NormalizationMode.NONE and stats is None:
        raise ConfigError(f"{cfg.normalization.value} normalization requires fitted statistics")
    isolated = isolate_transient(rec, cfg)
    return select_and_normalize(isolated.record.channels, cfg, stats)
