"""
Command-line entry point.

    python app.py generate   --action button --count 200 --out runs/button
    python app.py preprocess --manifest runs/button/manifest.json --out runs/button-windows [--scaleograms]
    python app.py train      --manifest runs/button/manifest.json --preset cnn1d [--final] [--augment]
    python app.py eval       --model runs/train/model.bin --manifest data/manifest.json
    python app.py explain    --model runs/train/model.bin --record r.csv [--class Success]
    python app.py classify   --model runs/train/model.bin --record r.csv [--explain]

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from pydantic import ValidationError

import config
from checkpoint import load_model, save_model
from datagen import GenSpec, generate, generate_imbalanced
from errors import ConfigError, DataError, WrenchCheckError
from experiment import (
    RunConfig,
    classify_record,
    evaluate_dataset,
    export_explanations,
    model_pipeline,
    record_inputs,
    run_experiment,
)
from metrics import RankMethod
from model_graph import ArchitectureSpec, predict
from preprocess import isolate_dataset
from presets import Preset
from records import ActionKind, load_dataset, read_record, save_dataset
from reports import (
    RunReport,
    SplitInfo,
    Timings,
    Verdict,
    branch_summary,
    config_hash,
    now_iso,
    write_json,
    write_verdicts_csv,
)
from wavelet import SCALEOGRAM_CHANNELS, cwt, export_scaleogram

logger = logging.getLogger("app")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


# --- Shared helpers ---
def _load_run_config(args) -> RunConfig:
    run = RunConfig()
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as f:
                run = RunConfig.model_validate_json(f.read())
        except OSError as err:
            raise ConfigError(f"cannot read config {args.config}: {err}") from err
    return run.with_seed(args.seed if args.seed is not None else run.seed)


def _out_dir(args, default_name: str) -> str:
    out = args.out or os.path.join(config.RUNS_DIRECTORY, default_name)
    os.makedirs(out, exist_ok=True)
    return out


# --- Commands ---
def cmd_generate(args) -> int:
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as f:
            spec = GenSpec.model_validate_json(f.read())
    else:
        spec = GenSpec(action_kind=ActionKind.parse(args.action))
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.count is not None:
        updates["count_per_class"] = args.count
    spec = GenSpec.model_validate({**spec.model_dump(), **updates})

    out = _out_dir(args, f"generated-{spec.action_kind.value.lower()}")
    logger.info(f"--- Generating {spec.action_kind.value} records ---")
    if args.imbalanced is not None:
        dataset, truths = generate_imbalanced(spec, args.imbalanced)
    else:
        dataset, truths = generate(spec)
    manifest = save_dataset(dataset, out)
    with open(os.path.join(out, "ground_truth.json"), "w", encoding="utf-8") as f:
        json.dump({k: v.model_dump() for k, v in truths.items()}, f, indent=2)
    with open(os.path.join(out, "gen_spec.json"), "w", encoding="utf-8") as f:
        f.write(spec.model_dump_json(indent=2))
    print(manifest)
    return 0


def cmd_preprocess(args) -> int:
    run = _load_run_config(args)
    dataset = load_dataset(args.manifest)
    out = _out_dir(args, f"windows-{dataset.action_kind.value.lower()}")
    logger.info(f"--- Isolating transients in {len(dataset)} records ---")
    windows, skipped = isolate_dataset(dataset, run.pipeline)
    manifest = save_dataset(windows, out)
    with open(os.path.join(out, "pipeline.json"), "w", encoding="utf-8") as f:
        f.write(run.pipeline.model_dump_json(indent=2))
    with open(os.path.join(out, "skipped.json"), "w", encoding="utf-8") as f:
        json.dump(skipped, f, indent=2)
    if args.scaleograms:
        logger.info("--- Exporting scaleograms ---")
        for rec in windows.records:
            for c in SCALEOGRAM_CHANNELS:
                stem = os.path.join(out, "scaleograms", f"{rec.id}.{config.CHANNEL_NAMES[c]}")
                export_scaleogram(cwt(rec.channels[c], run.cwt, source_channel=c), stem)
    print(manifest)
    return 0


def _report(command, model, result, evaluated_on, seed, hashes, split, artifacts, skipped, started, timings,
            epochs_run=None, best_epoch=None) -> RunReport:
    names = model.class_names
    return RunReport(
        command=command,
        action_kind=model.extras.get("action_kind", ""),
        preset=model.arch.preset,
        branches=branch_summary(model),
        config_hashes={"architecture": config_hash(model.arch), **hashes},
        seed=seed,
        split=split,
        evaluated_on=evaluated_on,
        class_names=names,
        per_class_f1={name: float(v) for name, v in zip(names, result.per_class_f1)},
        macro_f1=result.macro_f1,
        accuracy=result.accuracy,
        confusion_matrix=result.confusion.to_list(),
        parameter_count=model.parameter_count,
        epochs_run=epochs_run,
        best_epoch=best_epoch,
        skipped_records=skipped,
        artifacts=artifacts,
        timings=Timings(started_at=started, finished_at=now_iso(), wall_clock_s=timings),
    )


def cmd_train(args) -> int:
    started = now_iso()
    run = _load_run_config(args)
    if args.select_k is not None or args.rank_method is not None:
        update = {"select_k": args.select_k if args.select_k is not None else run.select_k,
                  "rank_method": args.rank_method or run.rank_method}
        run = RunConfig.model_validate({**run.model_dump(), **update})
    dataset = load_dataset(args.manifest)
    if args.action and ActionKind.parse(args.action) is not dataset.action_kind:
        raise ConfigError(f"--action {args.action} does not match the dataset ({dataset.action_kind.value})")
    preset = Preset.parse(args.preset)
    arch = None
    if args.arch:
        with open(args.arch, "r", encoding="utf-8") as f:
            arch = ArchitectureSpec.model_validate_json(f.read())

    out = _out_dir(args, f"{dataset.action_kind.value.lower()}-{preset.value}-seed{run.seed}")
    exp = run_experiment(dataset, preset, run, final=args.final, augment=args.augment, arch=arch,
                         group_channels=args.group_channels)
    artifacts = {
        "model": save_model(exp.model, os.path.join(out, "model.bin")),
        "history": exp.history.to_csv(os.path.join(out, "history.csv")),
        "run_config": os.path.join(out, "run_config.json"),
    }
    with open(artifacts["run_config"], "w", encoding="utf-8") as f:
        f.write(run.model_dump_json(indent=2))
    split = SplitInfo(seed=run.seed, fractions=exp.split_fractions, sizes=exp.split_sizes)
    hashes = {name: config_hash(getattr(run, name)) for name in ("cwt", "augment", "train")}
    hashes["pipeline"] = config_hash(model_pipeline(exp.model)[0])
    report = _report("train", exp.model, exp.result, exp.evaluated_on, run.seed, hashes, split, artifacts,
                     exp.skipped, started, exp.wall_clock_s, exp.history.epochs_run, exp.history.best_epoch)
    print(write_json(report, os.path.join(out, "report.json")))
    return 0


def cmd_eval(args) -> int:
    started = now_iso()
    t0 = time.perf_counter()
    model = load_model(args.model)
    dataset = load_dataset(args.manifest)
    result, rows, skipped = evaluate_dataset(model, dataset)
    out = _out_dir(args, "eval")
    artifacts = {"verdicts": write_verdicts_csv(rows, os.path.join(out, "verdicts.csv"))}
    pipeline, _, cwt_cfg = model_pipeline(model)
    hashes = {"pipeline": config_hash(pipeline), "cwt": config_hash(cwt_cfg)}
    seed = args.seed if args.seed is not None else config.DEFAULT_SEED
    report = _report("eval", model, result, "manifest", seed, hashes, None, artifacts, skipped, started,
                     {"total": time.perf_counter() - t0})
    print(write_json(report, os.path.join(out, "report.json")))
    return 0


def _read_for(model, path):
    return read_record(path, action_kind=model.extras.get("action_kind"))


def cmd_explain(args) -> int:
    model = load_model(args.model)
    rec = _read_for(model, args.record)
    _, inputs = record_inputs(model, rec)
    if args.target is None:
        target, _ = predict(model, inputs)
    elif args.target.isdigit():
        target = int(args.target)
    else:
        names = {v: k for k, v in model.class_map.items()}
        if args.target not in names:
            raise ConfigError(f"unknown class '{args.target}'; model classes: {model.class_names}")
        target = names[args.target]
    out = _out_dir(args, "explain")
    for path in export_explanations(model, inputs, target, out, rec.id):
        print(path)
    return 0


def cmd_classify(args) -> int:
    model = load_model(args.model)
    rec = _read_for(model, args.record)
    out = _out_dir(args, "classify") if (args.explain or args.out) else None
    result = classify_record(model, rec, explain_dir=out if args.explain else None)
    verdict = Verdict(
        record_id=result.record_id,
        class_name=result.class_name,
        probabilities=result.probabilities,
        class_id=result.class_id,
        onset_index=result.onset_index,
        attribution_paths=result.attribution_paths,
    )
    if out:
        write_json(verdict, os.path.join(out, f"{rec.id}.verdict.json"))
    print(verdict.model_dump_json(indent=2))
    return 0


# --- Argument parsing ---
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"Seed for every random choice (default {config.DEFAULT_SEED}).")
    common.add_argument("--config", default=None, help="Run config JSON (pipeline, cwt, augment, train, split).")
    common.add_argument("--out", default=None, help="Output directory.")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")

    parser = _Parser(prog="app.py", description="Force/torque action validation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="Generate a synthetic labeled dataset.")
    p.add_argument("--spec", help="GenSpec JSON.")
    p.add_argument("--action", default="Button", help="Action kind when no spec is given.")
    p.add_argument("--count", type=int, help="Records per class.")
    p.add_argument("--imbalanced", type=float, help="Knob set with this MidState fraction.")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", parents=[common], help="Isolate transient windows of a dataset.")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scaleograms", action="store_true", help="Also export force/torque scaleograms.")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="Train and evaluate a model.")
    p.add_argument("--manifest", required=True)
    p.add_argument("--preset", default=Preset.CNN1D.value, help=f"One of {[x.value for x in Preset]}.")
    p.add_argument("--arch", help="Architecture JSON replacing the preset.")
    p.add_argument("--action", help="Expected action kind of the dataset.")
    p.add_argument("--final", action="store_true", help="Use the 70-30 train-test split.")
    p.add_argument("--augment", action="store_true", help="Balance the training split by augmentation.")
    p.add_argument("--group-channels", action="store_true", help="1D branches from correlated channel groups.")
    p.add_argument("--rank-method", choices=[m.value for m in RankMethod],
                   help="Channel ranking used by --select-k and the specific hybrid (default MaxEnergy).")
    p.add_argument("--select-k", type=int, help="Keep only the top-k channels ranked on the training split.")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="Evaluate a trained model on a labeled dataset.")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", parents=[common], help="Grad-CAM attributions for one record.")
    p.add_argument("--model", required=True)
    p.add_argument("--record", required=True)
    p.add_argument("--class", dest="target", help="Target class name or id (default: predicted).")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("classify", parents=[common], help="Classify one record.")
    p.add_argument("--model", required=True)
    p.add_argument("--record", required=True)
    p.add_argument("--explain", action="store_true", help="Attach Grad-CAM artifacts.")
    p.set_defaults(func=cmd_classify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config.configure_logging("DEBUG" if args.verbose else None)
    try:
        return args.func(args)
    except WrenchCheckError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except ValidationError as err:
        print(f"error: invalid configuration: {err}", file=sys.stderr)
        return ConfigError.exit_code
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
