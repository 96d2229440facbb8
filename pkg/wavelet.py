"""Morlet continuous wavelet transform and fixed-height scaleograms."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import fft as sp_fft

import config
from errors import DataError

logger = logging.getLogger(__name__)

MIN_CWT_LENGTH = 8
SCALEOGRAM_CHANNELS = config.FORCE_CHANNELS + config.TORQUE_CHANNELS


class CwtConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_scales: int = Field(default=128, ge=2)
    scale_min: float = Field(default=1.0, gt=0)
    scale_max: float = Field(default=256.0, gt=0)
    omega0: float = Field(default=6.0, gt=0)
    output_height: int = Field(default=128, ge=2)
    scale_normalization: bool = True  # 1/sqrt(a)
    remove_mean: bool = True

    @model_validator(mode="after")
    def _check(self):
        if not self.scale_min < self.scale_max:
            raise ValueError(f"scale_min ({self.scale_min}) must be < scale_max ({self.scale_max})")
        return self

    @property
    def scales(self) -> np.ndarray:
        return np.geomspace(self.scale_min, self.scale_max, self.n_scales)

    @property
    def output_scales(self) -> np.ndarray:
        return np.geomspace(self.scale_min, self.scale_max, self.output_height)


@dataclass(frozen=True, eq=False)
class Scaleogram:
    """Normalized |W| with rows = scale (small to large), columns = time."""

    values: np.ndarray
    source_channel: int
    scales: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def morlet(t, omega0: float = 6.0):
    """pi^(-1/4) * exp(i*omega0*t) * exp(-t^2/2)."""
    t = np.asarray(t, dtype=np.float64)
    return np.pi ** -0.25 * np.exp(1j * omega0 * t) * np.exp(-0.5 * t ** 2)


def frequency_to_scale(freq_hz: float, sample_rate_hz: float = config.SAMPLE_RATE_HZ, omega0: float = 6.0) -> float:
    """Scale (in samples) whose wavelet oscillates at `freq_hz`."""
    return omega0 * sample_rate_hz / (2 * np.pi * freq_hz)


@lru_cache(maxsize=16)
def _kernel_spectrum(n: int, nfft: int, cfg: CwtConfig) -> np.ndarray:
    # Row s holds conj(psi(m / a_s)) for m = N-1 .. -(N-1), so that a linear
    # convolution with x lands W[a, b] at output index b + N - 1.
    m = np.arange(n - 1, -n, -1, dtype=np.float64)
    scales = cfg.scales[:, None]
    kernels = np.conj(morlet(m[None, :] / scales, cfg.omega0))
    if cfg.scale_normalization:
        kernels = kernels / np.sqrt(scales)
    return sp_fft.fft(kernels, n=nfft, axis=-1)


def cwt_raw(x, cfg: CwtConfig = CwtConfig()) -> np.ndarray:
    """
    Complex transform W[a, b] = sum_n x[n] * conj(psi((n - b) / a)) [/ sqrt(a)].

    Args:
        x: 1D signal of at least 8 samples.
        cfg: scale grid and wavelet settings.

    Returns:
        Complex array [n_scales, N].
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError(f"cwt expects a 1D signal, got shape {x.shape}")
    n = x.shape[0]
    if n < MIN_CWT_LENGTH:
        raise DataError(f"cwt needs at least {MIN_CWT_LENGTH} samples, got {n}")
    if cfg.remove_mean:
        x = x - x.mean()
    nfft = sp_fft.next_fast_len(3 * n - 2)
    spectrum = sp_fft.fft(x, n=nfft)
    full = sp_fft.ifft(spectrum[None, :] * _kernel_spectrum(n, nfft, cfg), axis=-1)
    return full[:, n - 1:2 * n - 1]


def _resample_rows(values: np.ndarray, height: int) -> np.ndarray:
    if values.shape[0] == height:
        return values
    src = np.linspace(0.0, 1.0, values.shape[0])
    dst = np.linspace(0.0, 1.0, height)
    return np.stack([np.interp(dst, src, col) for col in values.T], axis=1)


def cwt(x, cfg: CwtConfig = CwtConfig(), source_channel: int = 0) -> Scaleogram:
    """Magnitude scaleogram [output_height, N], min-max normalized over the whole matrix."""
    magnitude = _resample_rows(np.abs(cwt_raw(x, cfg)), cfg.output_height)
    lo, hi = float(magnitude.min()), float(magnitude.max())
    if hi <= 0:
        values = np.zeros_like(magnitude)
    elif hi - lo <= 1e-15 * hi:
        values = magnitude / hi
    else:
        values = (magnitude - lo) / (hi - lo)
    return Scaleogram(values=values, source_channel=source_channel, scales=cfg.output_scales)


def scaleogram_stack(x, cfg: CwtConfig = CwtConfig(), channels: Sequence[int] = SCALEOGRAM_CHANNELS) -> np.ndarray:
    """One scaleogram per listed channel of x [C, N], stacked depth-wise into [K, H, N]."""
    x = np.asarray(x, dtype=np.float64)
    channels = list(channels)
    if not channels:
        raise DataError("scaleogram_stack needs at least one channel")
    return np.stack([cwt(x[c], cfg, source_channel=c).values for c in channels], axis=0)


def export_scaleogram(s: Scaleogram, stem) -> dict[str, str]:
    """Writes `<stem>.f32` (row-major little-endian), `<stem>.json` header and `<stem>.png`."""
    stem = str(stem)
    os.makedirs(os.path.dirname(os.path.abspath(stem)), exist_ok=True)
    paths = {"values": stem + ".f32", "header": stem + ".json", "image": stem + ".png"}
    s.values.astype("<f4").tofile(paths["values"])
    header = {
        "shape": list(s.values.shape),
        "dtype": "float32-le",
        "layout": "scale-major",
        "channel": int(s.source_channel),
        "channel_name": config.CHANNEL_NAMES[s.source_channel] if 0 <= s.source_channel < config.N_CHANNELS else None,
        "scales": [float(a) for a in s.scales],
    }
    with open(paths["header"], "w", encoding="utf-8") as f:
        json.dump(header, f, indent=2)

    fig, ax = plt.subplots(figsize=(max(4.0, s.values.shape[1] / 100), 3.0))
    ax.imshow(s.values, aspect="auto", origin="lower", cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xlabel("sample")
    ax.set_ylabel("scale index")
    fig.savefig(paths["image"], dpi=100)
    plt.close(fig)
    return paths


def read_scaleogram(stem) -> Scaleogram:
    stem = str(stem)
    with open(stem + ".json", "r", encoding="utf-8") as f:
        header = json.load(f)
    values = np.fromfile(stem + ".f32", dtype="<f4").reshape(header["shape"])
    return Scaleogram(values=values.astype(np.float64), source_channel=header["channel"], scales=np.asarray(header["scales"]))
