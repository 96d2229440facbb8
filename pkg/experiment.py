"""
End-to-end workflow shared by the command-line app: split, isolate, augment,
normalize, build model inputs, train, evaluate, and single-record classification.
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

import config
from augment import AugmentPolicy, balance_dataset
from errors import ConfigError, DataError, NoTransientError
from gradcam import explain_branches, export_attribution
from metrics import RankMethod, compute_correlation_matrix, group_correlated_channels, rank_channels, select_channels
from model_graph import ArchitectureSpec, InputKind, ModelGraph, ModelInputs, predict
from preprocess import (
    NormalizationMode,
    NormStats,
    PipelineConfig,
    fit_normalizer,
    isolate_dataset,
    isolate_transient,
    select_and_normalize,
)
from presets import Preset, preset_architecture
from records import ActionRecord, Dataset, split_dataset
from trainer import EvalResult, LabeledInputs, TrainConfig, TrainHistory, evaluate, train
from wavelet import CwtConfig, scaleogram_stack

logger = logging.getLogger(__name__)

DEFAULT_SPLIT = (0.6, 0.2, 0.2)
FINAL_SPLIT = (0.7, 0.0, 0.3)


class RunConfig(BaseModel):
    """Everything a run depends on besides the data; `--config run.json` loads one."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    pipeline: PipelineConfig = PipelineConfig(normalization=NormalizationMode.STANDARD)
    cwt: CwtConfig = CwtConfig()
    augment: AugmentPolicy = AugmentPolicy()
    train: TrainConfig = TrainConfig()
    split: tuple[float, float, float] = DEFAULT_SPLIT
    final_split: tuple[float, float, float] = FINAL_SPLIT
    seed: int = config.DEFAULT_SEED
    rank_method: RankMethod = RankMethod.MAX_ENERGY
    select_k: int | None = Field(default=None, ge=1, le=config.N_CHANNELS)

    @model_validator(mode="after")
    def _check(self):
        if self.select_k is not None and self.pipeline.selected_channels is not None:
            raise ValueError("set either select_k (ranked on the training split) or pipeline.selected_channels, not both")
        return self

    def with_seed(self, seed: int) -> "RunConfig":
        """Funnels one seed into splitting, augmentation and training."""
        return self.model_copy(update={
            "seed": seed,
            "augment": self.augment.model_copy(update={"seed": seed}),
            "train": self.train.model_copy(update={"seed": seed}),
        })


# --- Model inputs ---
def check_compatible(arch: ArchitectureSpec, pipeline: PipelineConfig):
    """Every channel a branch reads must survive channel selection."""
    available = set(pipeline.channels_out)
    for branch in arch.branches:
        missing = sorted(set(branch.channels) - available)
        if missing:
            what = "scaleograms" if branch.input_kind is InputKind.SCALEOGRAMS_2D else "signals"
            raise ConfigError(
                f"branch '{branch.name}' needs {what} of channels {missing}, but the pipeline only keeps "
                f"{sorted(available)}; add them to selected_channels or pick a preset without them"
            )
    if arch.signal_length != pipeline.extract_len:
        raise ConfigError(f"architecture expects windows of {arch.signal_length} samples, pipeline extracts {pipeline.extract_len}")


def build_inputs(windows: Sequence[np.ndarray], pipeline: PipelineConfig, stats: NormStats | None,
                 arch: ArchitectureSpec, cwt_cfg: CwtConfig = CwtConfig()) -> ModelInputs:
    """
    Model inputs from isolated 9-channel windows.

    Scaleograms are computed from the selected, normalized rows.
    """
    check_compatible(arch, pipeline)
    kept = pipeline.channels_out
    rows = [select_and_normalize(w, pipeline, stats) for w in windows]
    signals = np.stack(rows).astype(np.float32) if rows else np.zeros((0, len(kept), pipeline.extract_len), np.float32)

    scaleograms, planes = None, arch.scaleogram_channels
    if planes:
        positions = [kept.index(c) for c in planes]
        scaleograms = np.stack([scaleogram_stack(r, cwt_cfg, positions) for r in rows]).astype(np.float32) \
            if rows else np.zeros((0, len(planes), cwt_cfg.output_height, pipeline.extract_len), np.float32)
    return ModelInputs(
        signals=signals if arch.signal_channels else None,
        signal_channels=tuple(kept),
        scaleograms=scaleograms,
        scaleogram_channels=tuple(planes),
    )


def labeled_inputs(d: Dataset, pipeline, stats, arch, cwt_cfg) -> LabeledInputs:
    return LabeledInputs(
        inputs=build_inputs([rec.channels for rec in d.records], pipeline, stats, arch, cwt_cfg),
        labels=d.labels(),
        record_ids=tuple(rec.id for rec in d.records),
        augmented=np.array([rec.augmented for rec in d.records], dtype=bool),
    )


def model_extras(pipeline: PipelineConfig, stats: NormStats | None, cwt_cfg: CwtConfig, action_kind) -> dict:
    return {
        "pipeline": pipeline.model_dump(mode="json"),
        "norm_stats": None if stats is None else stats.to_dict(),
        "cwt": cwt_cfg.model_dump(mode="json"),
        "action_kind": str(getattr(action_kind, "value", action_kind)),
    }


def model_pipeline(model: ModelGraph) -> tuple[PipelineConfig, NormStats | None, CwtConfig]:
    extras = model.extras
    if "pipeline" not in extras:
        raise DataError("model file carries no preprocessing recipe")
    stats = extras.get("norm_stats")
    return (
        PipelineConfig.model_validate(extras["pipeline"]),
        None if stats is None else NormStats.from_dict(stats),
        CwtConfig.model_validate(extras.get("cwt", {})),
    )


def _contiguous(class_map) -> None:
    if sorted(class_map) != list(range(len(class_map))):
        raise DataError(f"class ids must be 0..{len(class_map) - 1}, got {sorted(class_map)}")


# --- Training run ---
@dataclass
class ExperimentResult:
    model: ModelGraph
    history: TrainHistory
    result: EvalResult
    evaluated_on: str
    split_fractions: tuple[float, float, float]
    split_sizes: dict[str, int]
    skipped: list[str] = field(default_factory=list)
    wall_clock_s: dict[str, float] = field(default_factory=dict)


def run_experiment(d: Dataset, preset=Preset.CNN1D, run: RunConfig = RunConfig(), final: bool = False,
                   augment: bool = False, arch: ArchitectureSpec | None = None,
                   group_channels: bool = False) -> ExperimentResult:
    """Split -> isolate -> (augment) -> fit normalizer -> train -> evaluate on test (validation when there is none)."""
    _contiguous(d.class_map)
    timings = {}
    t0 = time.perf_counter()
    fractions = run.final_split if final else run.split
    logger.info(f"--- Splitting {len(d)} records {fractions} ---")
    train_raw, val_raw, test_raw = split_dataset(d, fractions, run.seed)

    logger.info("--- Isolating transients ---")
    skipped = []
    train_d, s = isolate_dataset(train_raw, run.pipeline)
    skipped += s
    val_d, s = isolate_dataset(val_raw, run.pipeline)
    skipped += s
    test_d, s = isolate_dataset(test_raw, run.pipeline)
    skipped += s
    originals = train_d.with_records([r for r in train_d.records if not r.augmented])
    if augment:
        logger.info("--- Augmenting training split ---")
        train_d = balance_dataset(train_d, run.augment)
    timings["preprocess"] = time.perf_counter() - t0

    # Ranking and selection only ever see the non-augmented training windows.
    pipeline, ranking = run.pipeline, None
    if run.select_k is not None or (arch is None and Preset.parse(preset) is Preset.HYBRID_SPECIFIC):
        ranking = tuple(rank_channels(originals, run.rank_method))
        logger.info(f"Channel ranking ({run.rank_method.value}): {[config.CHANNEL_NAMES[c] for c in ranking]}")
    if run.select_k is not None:
        kept = tuple(select_channels(originals, run.rank_method, run.select_k))
        pipeline = run.pipeline.model_copy(update={"selected_channels": kept})
        logger.info(f"Keeping the top {run.select_k} channels: {[config.CHANNEL_NAMES[c] for c in kept]}")

    stats = None
    if pipeline.normalization is not NormalizationMode.NONE:
        stats = fit_normalizer(originals, pipeline.normalization, pipeline.channels_out)

    if arch is None:
        groups = None
        if group_channels and Preset.parse(preset) is Preset.CNN1D:
            corr, _ = compute_correlation_matrix(originals)
            groups = group_correlated_channels(corr)
        arch = preset_architecture(d.action_kind, preset, d.n_classes, channel_groups=groups,
                                   signal_length=pipeline.extract_len, channels=pipeline.channels_out,
                                   ranking=ranking)
    check_compatible(arch, pipeline)
    model = ModelGraph(arch, d.class_map, seed=run.seed,
                       extras=model_extras(pipeline, stats, run.cwt, d.action_kind))

    t1 = time.perf_counter()
    logger.info("--- Building model inputs ---")
    train_in = labeled_inputs(train_d, pipeline, stats, arch, run.cwt)
    val_in = labeled_inputs(val_d, pipeline, stats, arch, run.cwt) if len(val_d) else None
    test_in = labeled_inputs(test_d, pipeline, stats, arch, run.cwt) if len(test_d) else None
    timings["inputs"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    model, history = train(model, train_in, val_in, run.train)
    timings["train"] = time.perf_counter() - t2

    target, name = (test_in, "test") if test_in is not None else (val_in, "validation")
    if target is None:
        raise DataError("nothing to evaluate: validation and test splits are both empty")
    result = evaluate(model, target)
    logger.info(f"Macro-F1 on {name}: {result.macro_f1:.4f}")
    timings["total"] = time.perf_counter() - t0
    return ExperimentResult(
        model=model,
        history=history,
        result=result,
        evaluated_on=name,
        split_fractions=tuple(fractions),
        split_sizes={"train": len(train_d), "val": len(val_d), "test": len(test_d)},
        skipped=skipped,
        wall_clock_s=timings,
    )


# --- Using a trained model ---
def evaluate_dataset(model: ModelGraph, d: Dataset) -> tuple[EvalResult, list[dict], list[str]]:
    """Evaluates every record with a transient; returns (result, per-record verdict rows, skipped ids)."""
    if len(d) == 0:
        raise DataError("dataset is empty")
    if dict(d.class_map) != model.class_map:
        raise DataError(f"class map mismatch: model {model.class_map}, dataset {dict(d.class_map)}")
    pipeline, stats, cwt_cfg = model_pipeline(model)
    windows, skipped = isolate_dataset(d, pipeline)
    if len(windows) == 0:
        raise DataError("no record in the dataset has a transient")
    data = labeled_inputs(windows, pipeline, stats, model.arch, cwt_cfg)
    result = evaluate(model, data)
    rows = []
    for i, rec in enumerate(windows.records):
        rows.append({
            "record_id": rec.id,
            "true_class": rec.label.class_name,
            "predicted_class": model.class_map[int(result.predictions[i])],
            **{f"p_{name}": float(result.probabilities[i, k]) for k, name in enumerate(model.class_names)},
        })
    return result, rows, skipped


@dataclass
class Classification:
    record_id: str
    class_name: str
    class_id: int | None
    probabilities: dict[str, float]
    onset_index: int | None
    attribution_paths: list[str] = field(default_factory=list)


def record_inputs(model: ModelGraph, rec: ActionRecord):
    """Isolated window and single-record model inputs for a raw record."""
    pipeline, stats, cwt_cfg = model_pipeline(model)
    isolated = isolate_transient(rec, pipeline)
    inputs = build_inputs([isolated.record.channels], pipeline, stats, model.arch, cwt_cfg)
    return isolated, inputs


def classify_record(model: ModelGraph, rec: ActionRecord, explain_dir=None) -> Classification:
    """Verdict for one record; records without a transient get the NoContact sentinel."""
    try:
        isolated, inputs = record_inputs(model, rec)
    except NoTransientError:
        logger.warning(f"Record {rec.id}: no transient, reporting {config.NO_CONTACT_LABEL}")
        return Classification(rec.id, config.NO_CONTACT_LABEL, None, {}, None)
    class_id, probs = predict(model, inputs)
    verdict = Classification(
        record_id=rec.id,
        class_name=model.class_map[class_id],
        class_id=class_id,
        probabilities={name: float(probs[k]) for k, name in enumerate(model.class_names)},
        onset_index=isolated.onset,
    )
    if explain_dir is not None:
        verdict.attribution_paths = export_explanations(model, inputs, class_id, explain_dir, rec.id)
    return verdict


def export_explanations(model: ModelGraph, inputs: ModelInputs, target: int, out_dir, stem: str) -> list[str]:
    """Grad-CAM artifacts (CSV + PNG) for every conv branch of one record."""
    paths = []
    rows = {c: i for i, c in enumerate(inputs.signal_channels)}
    for branch, att in explain_branches(model, inputs, target).items():
        if inputs.signals is not None and all(c in rows for c in att.channels):
            signals = inputs.signals[0, [rows[c] for c in att.channels]]
        else:
            signals = inputs.scaleograms[0, [inputs.scaleogram_channels.index(c) for c in att.channels]].max(axis=1)
        files = export_attribution(att, signals, os.path.join(str(out_dir), f"{stem}.{branch}"),
                                   sample_rate_hz=model.extras.get("pipeline", {}).get("sample_rate_hz", config.SAMPLE_RATE_HZ))
        paths += [files["csv"], files["image"]]
    if not paths:
        logger.warning("Model has no convolutional branches; nothing to explain")
    return paths
