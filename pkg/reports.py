"""Run reports and verdicts: pydantic schemas, hashing and file output."""
from __future__ import annotations

import hashlib
import json
import os
from datetime import datetime, timezone

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

import config


# --- Pydantic Models for Output ---
class SplitInfo(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int
    fractions: tuple[float, float, float]
    sizes: dict[str, int]


class Timings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    started_at: str
    finished_at: str
    wall_clock_s: dict[str, float] = {}


class RunReport(BaseModel):
    """Metrics and provenance of one train/eval command; everything but `timings` is reproducible."""

    model_config = ConfigDict(extra="forbid")

    command: str
    action_kind: str
    preset: str | None = None
    branches: list[dict] = Field(description="Branch name, input kind and channels, in model order.")
    config_hashes: dict[str, str]
    seed: int
    split: SplitInfo | None = None
    evaluated_on: str
    class_names: list[str]
    per_class_f1: dict[str, float]
    macro_f1: float
    accuracy: float
    confusion_matrix: list[list[int]]
    parameter_count: int
    epochs_run: int | None = None
    best_epoch: int | None = None
    skipped_records: list[str] = []
    artifacts: dict[str, str] = {}
    timings: Timings


class Verdict(BaseModel):
    model_config = ConfigDict(extra="forbid")

    record_id: str
    class_name: str = Field(description=f"Predicted class, or '{config.NO_CONTACT_LABEL}' when no transient was found.")
    probabilities: dict[str, float]
    class_id: int | None = None
    onset_index: int | None = None
    attribution_paths: list[str] = []


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def config_hash(cfg) -> str:
    """sha256 of the canonical JSON of a pydantic model or plain dict."""
    data = cfg.model_dump(mode="json") if isinstance(cfg, BaseModel) else cfg
    text = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def branch_summary(model) -> list[dict]:
    return [
        {"name": b.name, "input_kind": b.input_kind.value, "channels": [config.CHANNEL_NAMES[c] for c in b.channels]}
        for b in model.arch.branches
    ]


def write_json(model: BaseModel, path) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(str(path))), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(model.model_dump_json(indent=2))
        f.write("\n")
    return str(path)


def read_report(path) -> RunReport:
    with open(path, "r", encoding="utf-8") as f:
        return RunReport.model_validate_json(f.read())


def write_verdicts_csv(rows: list[dict], path) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(str(path))), exist_ok=True)
    pd.DataFrame(rows).to_csv(path, index=False, float_format="%.9g")
    return str(path)


def schema_path(name: str) -> str:
    return os.path.join(config.SCHEMA_DIRECTORY, f"{name}.schema.json")


def load_schema(name: str) -> dict:
    with open(schema_path(name), "r", encoding="utf-8") as f:
        return json.load(f)
