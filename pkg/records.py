"""Core data model: action records, labels, datasets, record/manifest I/O and splitting."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, replace
from enum import Enum
from types import MappingProxyType
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

import config
from errors import DataError

logger = logging.getLogger(__name__)


class ActionKind(str, Enum):
    BUTTON = "Button"
    SWITCH = "Switch"
    KNOB = "Knob"
    FLAP = "Flap"
    LDG = "Ldg"
    SBRAKE = "SBrake"

    @classmethod
    def parse(cls, value) -> "ActionKind":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower().replace("-", "").replace("_", "")
        for kind in cls:
            if kind.value.lower() == text:
                return kind
        raise DataError(f"unknown action kind '{value}'; expected one of {[k.value for k in cls]}")


def as_tensor(values, name="tensor", dtype=np.float64) -> np.ndarray:
    """Dense contiguous array with finite values only; rejects empty shapes."""
    arr = np.ascontiguousarray(values, dtype=dtype)
    if arr.size == 0:
        raise DataError(f"{name} is empty (shape {arr.shape})")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or Inf values")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Label:
    class_id: int
    class_name: str

    def __post_init__(self):
        if int(self.class_id) < 0:
            raise DataError(f"class_id must be >= 0, got {self.class_id}")
        if not str(self.class_name).strip():
            raise DataError("class_name must be nonempty")
        object.__setattr__(self, "class_id", int(self.class_id))


@dataclass(frozen=True, eq=False)
class ActionRecord:
    """One recorded interaction: channels [9, N] in the base frame + TCP rotation vectors [3, N]."""

    id: str
    action_kind: ActionKind
    sample_rate_hz: float
    channels: np.ndarray
    tcp_rotvec: np.ndarray
    label: Label | None = None
    augmented: bool = False
    source_id: str | None = None
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        channels = as_tensor(self.channels, name=f"record '{self.id}' channels")
        rotvec = as_tensor(self.tcp_rotvec, name=f"record '{self.id}' tcp_rotvec")
        if channels.ndim != 2 or channels.shape[0] != config.N_CHANNELS:
            raise DataError(f"record '{self.id}': channels must be [{config.N_CHANNELS}, N], got {channels.shape}")
        if rotvec.shape != (3, channels.shape[1]):
            raise DataError(f"record '{self.id}': tcp_rotvec must be [3, {channels.shape[1]}], got {rotvec.shape}")
        if not self.sample_rate_hz > 0:
            raise DataError(f"record '{self.id}': sample_rate_hz must be > 0")
        object.__setattr__(self, "action_kind", ActionKind.parse(self.action_kind))
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        object.__setattr__(self, "channels", _frozen(channels))
        object.__setattr__(self, "tcp_rotvec", _frozen(rotvec))
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]

    def with_channels(self, channels, tcp_rotvec=None, **changes) -> "ActionRecord":
        rotvec = self.tcp_rotvec if tcp_rotvec is None else tcp_rotvec
        return replace(self, channels=channels, tcp_rotvec=rotvec, **changes)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Records of a single action kind with a bijective class map."""

    records: tuple[ActionRecord, ...]
    class_map: Mapping[int, str]
    action_kind: ActionKind

    def __post_init__(self):
        kind = ActionKind.parse(self.action_kind)
        class_map = {int(k): str(v) for k, v in dict(self.class_map).items()}
        if len(set(class_map.values())) != len(class_map):
            raise DataError(f"class_map is not bijective: {class_map}")
        records = tuple(self.records)
        for rec in records:
            if rec.action_kind != kind:
                raise DataError(f"record '{rec.id}' is a {rec.action_kind.value} action, dataset holds {kind.value}")
            if rec.label is None:
                raise DataError(f"record '{rec.id}' has no label")
            if class_map.get(rec.label.class_id) != rec.label.class_name:
                raise DataError(f"record '{rec.id}' label {rec.label} not in class_map {class_map}")
        object.__setattr__(self, "action_kind", kind)
        object.__setattr__(self, "class_map", MappingProxyType(dict(sorted(class_map.items()))))
        object.__setattr__(self, "records", records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ActionRecord]:
        return iter(self.records)

    @property
    def n_classes(self) -> int:
        return len(self.class_map)

    @property
    def class_names(self) -> list[str]:
        return [self.class_map[k] for k in sorted(self.class_map)]

    def labels(self) -> np.ndarray:
        return np.array([rec.label.class_id for rec in self.records], dtype=np.int64)

    def class_counts(self) -> dict[int, int]:
        counts = {cid: 0 for cid in self.class_map}
        for rec in self.records:
            counts[rec.label.class_id] += 1
        return counts

    def with_records(self, records: Sequence[ActionRecord]) -> "Dataset":
        return Dataset(records=tuple(records), class_map=self.class_map, action_kind=self.action_kind)


# --- File formats ---
class RecordSidecar(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    action_kind: ActionKind
    sample_rate_hz: float = Field(gt=0)
    class_id: int | None = None
    class_name: str | None = None
    augmented: bool = False
    source_id: str | None = None
    provenance: list[str] = []


class DatasetManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    action_kind: ActionKind
    class_map: dict[int, str]
    records: list[str]


def _sidecar_path(csv_path) -> str:
    return os.path.splitext(str(csv_path))[0] + ".json"


def read_record(csv_path, action_kind=None) -> ActionRecord:
    """
    Reads a record CSV (`t,fx,...,dpz,rx,ry,rz`) and its sidecar JSON.

    The sidecar is optional for unlabeled records; then `action_kind` must be
    given and the sample rate is taken from the `t` column.
    """
    try:
        frame = pd.read_csv(csv_path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise DataError(f"cannot read record file {csv_path}: {err}") from err
    missing = [c for c in config.RECORD_CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{csv_path}: missing columns {missing}")

    sidecar_path = _sidecar_path(csv_path)
    if os.path.exists(sidecar_path):
        with open(sidecar_path, "r", encoding="utf-8") as f:
            sidecar = RecordSidecar.model_validate_json(f.read())
    else:
        if action_kind is None:
            raise DataError(f"{csv_path}: no sidecar JSON and no action kind given")
        t = frame["t"].to_numpy(dtype=np.float64)
        rate = 1.0 / float(np.median(np.diff(t))) if t.size > 1 else config.SAMPLE_RATE_HZ
        sidecar = RecordSidecar(
            id=os.path.splitext(os.path.basename(str(csv_path)))[0],
            action_kind=ActionKind.parse(action_kind),
            sample_rate_hz=rate,
        )

    label = None
    if sidecar.class_id is not None and sidecar.class_name is not None:
        label = Label(sidecar.class_id, sidecar.class_name)
    return ActionRecord(
        id=sidecar.id,
        action_kind=sidecar.action_kind,
        sample_rate_hz=sidecar.sample_rate_hz,
        channels=frame[list(config.CHANNEL_NAMES)].to_numpy(dtype=np.float64).T,
        tcp_rotvec=frame[list(config.ROTVEC_COLUMNS)].to_numpy(dtype=np.float64).T,
        label=label,
        augmented=sidecar.augmented,
        source_id=sidecar.source_id,
        provenance=tuple(sidecar.provenance),
    )


def write_record(rec: ActionRecord, csv_path) -> str:
    """Writes the record CSV plus its sidecar JSON; returns the CSV path."""
    os.makedirs(os.path.dirname(os.path.abspath(str(csv_path))), exist_ok=True)
    t = np.arange(rec.n_samples) / rec.sample_rate_hz
    columns = {"t": t}
    for i, name in enumerate(config.CHANNEL_NAMES):
        columns[name] = rec.channels[i]
    for i, name in enumerate(config.ROTVEC_COLUMNS):
        columns[name] = rec.tcp_rotvec[i]
    pd.DataFrame(columns).to_csv(csv_path, index=False, float_format="%.17g")

    sidecar = RecordSidecar(
        id=rec.id,
        action_kind=rec.action_kind,
        sample_rate_hz=rec.sample_rate_hz,
        class_id=rec.label.class_id if rec.label else None,
        class_name=rec.label.class_name if rec.label else None,
        augmented=rec.augmented,
        source_id=rec.source_id,
        provenance=list(rec.provenance),
    )
    with open(_sidecar_path(csv_path), "w", encoding="utf-8") as f:
        f.write(sidecar.model_dump_json(indent=2))
    return str(csv_path)


def load_dataset(manifest_path) -> Dataset:
    """Loads every record listed in a manifest (paths relative to the manifest)."""
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = DatasetManifest.model_validate_json(f.read())
    except OSError as err:
        raise DataError(f"cannot read manifest {manifest_path}: {err}") from err
    base = os.path.dirname(os.path.abspath(str(manifest_path)))
    records = [read_record(os.path.join(base, rel)) for rel in manifest.records]
    logger.info(f"Loaded {len(records)} {manifest.action_kind.value} records from {manifest_path}")
    return Dataset(records=tuple(records), class_map=manifest.class_map, action_kind=manifest.action_kind)


def save_dataset(d: Dataset, out_dir, manifest_name="manifest.json") -> str:
    """Writes every record (CSV + sidecar) under `out_dir/records/` and the manifest; returns its path."""
    os.makedirs(os.path.join(out_dir, "records"), exist_ok=True)
    rel_paths = []
    for rec in d.records:
        rel = os.path.join("records", f"{rec.id}.csv")
        write_record(rec, os.path.join(out_dir, rel))
        rel_paths.append(rel)
    manifest = DatasetManifest(action_kind=d.action_kind, class_map=dict(d.class_map), records=rel_paths)
    manifest_path = os.path.join(out_dir, manifest_name)
    with open(manifest_path, "w", encoding="utf-8") as f:
        f.write(manifest.model_dump_json(indent=2))
    return manifest_path


# --- Splitting ---
def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of n items; every nonzero fraction gets at least one."""
    raw = [f * n for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    remainder = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    for i, f in enumerate(fractions):
        if f > 0 and counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_dataset(d: Dataset, fractions=(0.6, 0.2, 0.2), seed=config.DEFAULT_SEED) -> tuple[Dataset, Dataset, Dataset]:
    """
    Stratified train/validation/test split.

    Augmented records never reach validation or test: they follow their
    source record into the training split, or are dropped if the source
    landed elsewhere.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or fractions[0] <= 0:
        raise DataError(f"fractions must be (train > 0, val >= 0, test >= 0), got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1.0, got {sum(fractions)}")
    n_parts = sum(1 for f in fractions if f > 0)

    originals = [i for i, rec in enumerate(d.records) if not rec.augmented]
    by_class: dict[int, list[int]] = {cid: [] for cid in d.class_map}
    for i in originals:
        by_class[d.records[i].label.class_id].append(i)

    rng = np.random.default_rng(seed)
    short = [f"'{d.class_map[cid]}' ({len(members)})" for cid, members in sorted(by_class.items()) if len(members) < n_parts]
    if short:
        raise DataError(f"a {n_parts}-way split needs at least {n_parts} records per class; too few in {', '.join(short)}")
    parts: list[list[int]] = [[], [], []]
    for cid in sorted(by_class):
        members = by_class[cid]
        shuffled = [members[j] for j in rng.permutation(len(members))]
        start = 0
        for part, count in zip(parts, _allocate(len(members), fractions)):
            part.extend(shuffled[start:start + count])
            start += count

    train_ids = {d.records[i].id for i in parts[0]}
    dropped = 0
    for i, rec in enumerate(d.records):
        if rec.augmented:
            if rec.source_id in train_ids:
                parts[0].append(i)
            else:
                dropped += 1
    if dropped:
        logger.warning(f"Dropped {dropped} augmented records whose source is outside the training split")

    return tuple(d.with_records([d.records[i] for i in sorted(part)]) for part in parts)
