"""
Label-preserving augmentation: time dilation, translation, white noise.

Cropping, slicing, inversion, amplitude scaling and permutation are not
offered; they change what a contact transient looks like.
"""
from __future__ import annotations

import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

import config
from errors import DataError
from records import ActionRecord, Dataset

logger = logging.getLogger(__name__)

MAX_MULTIPLIER = 1.5


class AugmentPolicy(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    dilation_range: tuple[float, float] = (0.9, 1.1)
    translation_range: int = Field(default=40, ge=0)
    noise_std_fraction: float = Field(default=0.02, ge=0)
    seed: int = config.DEFAULT_SEED
    target_multiplier: float = Field(default=1.5, ge=1.0, le=MAX_MULTIPLIER)

    @model_validator(mode="after")
    def _check(self):
        lo, hi = self.dilation_range
        if not 0 < lo <= 1 <= hi:
            raise ValueError(f"dilation_range must satisfy 0 < lo <= 1 <= hi, got {self.dilation_range}")
        return self


# --- Primitive ops ---
def time_dilate(x, ratio: float) -> np.ndarray:
    """
    Stretches (ratio > 1) or compresses (ratio < 1) along time by linear
    interpolation, then center-crops or edge-pads back to the input length.
    """
    if ratio <= 0:
        raise DataError(f"dilation ratio must be > 0, got {ratio}")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    m = max(1, int(round(n * ratio)))
    src = np.arange(m) / ratio
    grid = np.arange(n)
    stretched = np.stack([np.interp(src, grid, row) for row in x.reshape(-1, n)]).reshape(x.shape[:-1] + (m,))
    if m >= n:
        start = (m - n) // 2
        return stretched[..., start:start + n]
    before = (n - m) // 2
    pad = [(0, 0)] * (x.ndim - 1) + [(before, n - m - before)]
    return np.pad(stretched, pad, mode="edge")


def translate(x, shift: int) -> np.ndarray:
    """Shifts along time by `shift` samples (positive = later), filling with edge values."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if abs(shift) >= n:
        raise DataError(f"shift {shift} must be smaller than the signal length {n}")
    idx = np.clip(np.arange(n) - int(shift), 0, n - 1)
    return x[..., idx]


def add_noise(x, std_fraction: float, seed=None) -> np.ndarray:
    """Adds zero-mean Gaussian noise with per-channel std = std_fraction * channel std."""
    if std_fraction < 0:
        raise DataError(f"noise fraction must be >= 0, got {std_fraction}")
    x = np.asarray(x, dtype=np.float64)
    if std_fraction == 0:
        return x.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    std = x.std(axis=-1, keepdims=True) * std_fraction
    return x + rng.standard_normal(x.shape) * std


# --- Record-level ---
def augment_record(rec: ActionRecord, policy: AugmentPolicy, rng: np.random.Generator, new_id: str | None = None) -> ActionRecord:
    """Applies a random nonempty subset of dilate -> translate -> noise; provenance lists what was applied."""
    ops = np.zeros(3, dtype=bool)
    while not ops.any():
        ops = rng.random(3) < 0.5
    channels, rotvec = rec.channels, rec.tcp_rotvec
    provenance = []
    if ops[0]:
        ratio = float(rng.uniform(*policy.dilation_range))
        channels, rotvec = time_dilate(channels, ratio), time_dilate(rotvec, ratio)
        provenance.append(f"dilate:{ratio:.4f}")
    if ops[1]:
        limit = min(policy.translation_range, rec.n_samples - 1)
        shift = int(rng.integers(-limit, limit + 1))
        channels, rotvec = translate(channels, shift), translate(rotvec, shift)
        provenance.append(f"translate:{shift}")
    if ops[2]:
        channels = add_noise(channels, policy.noise_std_fraction, rng)
        provenance.append(f"noise:{policy.noise_std_fraction:g}")
    return rec.with_channels(
        channels,
        rotvec,
        id=new_id or f"{rec.id}-aug",
        augmented=True,
        source_id=rec.id,
        provenance=tuple(provenance),
    )


def _allocate_extra(deficits: dict[int, int], budget: int) -> dict[int, int]:
    total = sum(deficits.values())
    if total <= budget:
        return dict(deficits)
    raw = {cid: budget * d / total for cid, d in deficits.items()}
    alloc = {cid: int(np.floor(v)) for cid, v in raw.items()}
    leftover = budget - sum(alloc.values())
    for cid in sorted(raw, key=lambda c: (-(raw[c] - alloc[c]), c))[:leftover]:
        alloc[cid] += 1
    return alloc


def balance_dataset(d: Dataset, policy: AugmentPolicy = AugmentPolicy()) -> Dataset:
    """
    Adds augmented copies of minority-class records until every class reaches
    the majority count or the dataset hits `target_multiplier` times its size.

    Originals are kept untouched and in order; new records are appended.
    """
    originals = [rec for rec in d.records if not rec.augmented]
    counts = {cid: 0 for cid in d.class_map}
    for rec in originals:
        counts[rec.label.class_id] += 1
    empty = [d.class_map[cid] for cid, n in counts.items() if n == 0]
    if empty:
        raise DataError(f"cannot balance: no records for classes {empty}")

    majority = max(counts.values())
    deficits = {cid: majority - n for cid, n in counts.items() if n < majority}
    budget = int(np.floor(len(originals) * (policy.target_multiplier - 1) + 1e-9))
    extra = _allocate_extra(deficits, budget)
    if not any(extra.values()):
        logger.info("Dataset already balanced; no augmentation applied")
        return d

    added = []
    for cid in sorted(extra):
        sources = [rec for rec in originals if rec.label.class_id == cid]
        for k in range(extra[cid]):
            src = sources[k % len(sources)]
            rng = np.random.default_rng(np.random.SeedSequence([policy.seed, cid, k]))
            added.append(augment_record(src, policy, rng, new_id=f"{src.id}-aug{k:03d}"))
        logger.info(f"Augmented class '{d.class_map[cid]}': {counts[cid]} -> {counts[cid] + extra[cid]}")
    return d.with_records(list(d.records) + added)
