"""The `glyconet` executable: the full pipeline as subcommands.

Flow: `synth` (or `ingest`) -> `preprocess` -> `label` -> `split` ->
`windows` -> `train` / `finetune` / `evaluate` / `ablate` / `compare`, plus
`stats` for cohort descriptives. Exit codes: 0 success, 1 usage error,
2 data error, 3 runtime failure.

Option precedence: command-line flag, then the JSON file given with
`--config`, then the built-in default. `GLYCONET_DATA_DIR` serves as a final
fallback for `--in`. All randomness derives from the single `--seed`.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import PIPELINE_VERSION, __version__
from .domain import AgeGroup, CLASS_SETS, get_class_set
from .errors import DataError, GlyconetError, UsageError
from . import cohort_stats, experiments, ingestion, labeling, preprocess, windowing
from . import synth as synth_mod
from .neuralnet import load_model, save_model, set_threads

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

DATA_DIR_ENV = "GLYCONET_DATA_DIR"
DEFAULT_SEED = 48

_SYNTH_PROFILES = {
    "default": synth_mod.default_profiles,
    "learnable": synth_mod.learnable_profiles,
    "conflict": synth_mod.conflict_profiles,
}


class _Parser(argparse.ArgumentParser):
    """argparse exits on its own; remap its errors onto the exit contract."""

    def error(self, message):
        raise UsageError(message)


def _csv_ints(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _csv_names(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _pick(*values):
    for value in values:
        if value is not None:
            return value
    return None


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file {p} does not exist")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"config file {p} must hold a JSON object")
    return doc


def _prepare(args) -> tuple[dict, int, str | None]:
    """Shared option resolution; returns (config, seed, backend)."""
    cfg = _load_config(args.config)
    seed = int(_pick(args.seed, cfg.get("seed"), DEFAULT_SEED))
    backend = _pick(args.backend, cfg.get("backend"))
    threads = int(_pick(args.threads, cfg.get("threads"), 1))
    set_threads(threads, backend)
    return cfg, seed, backend


def _in_dir(args, cfg: dict) -> Path:
    value = _pick(getattr(args, "in_dir", None), cfg.get("data_dir"),
                  os.environ.get(DATA_DIR_ENV))
    if not value:
        raise UsageError("no input directory: pass --in, set data_dir in the config "
                         f"file, or export {DATA_DIR_ENV}")
    path = Path(value)
    if not path.exists():
        raise DataError(f"input directory {path} does not exist")
    return path


def _out_dir(args, cfg: dict) -> Path:
    value = _pick(getattr(args, "out", None), cfg.get("artifact_dir"))
    if not value:
        raise UsageError("no output location: pass --out or set artifact_dir in "
                         "the config file")
    path = Path(value)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_scope(text: str) -> str:
    if text == experiments.GLOBAL_SCOPE:
        return text
    if text.startswith("age:"):
        value = text[len("age:"):]
        try:
            group = AgeGroup(value)
        except ValueError:
            raise UsageError(f"unknown age group {value!r}; choose from "
                             f"{[g.value for g in AgeGroup if g != AgeGroup.UNKNOWN]}")
        if group == AgeGroup.UNKNOWN:
            raise UsageError("the unknown-age pool cannot be a training scope")
        return group.value
    raise UsageError(f"scope must be 'global' or 'age:<group>', got {text!r}")


def _load_split(path: str) -> windowing.SplitPlan:
    p = Path(path)
    if not p.exists():
        raise DataError(f"split file {p} does not exist")
    with open(p) as fh:
        return windowing.SplitPlan.from_json_dict(json.load(fh))


def _load_windows(path_text: str):
    path = Path(path_text)
    if not path.exists():
        raise DataError(f"windows directory {path} does not exist")
    windows_by_subject, groups_by_id, manifest = windowing.load_windows_dir(path)
    class_set = get_class_set(manifest["class_set"])
    return path, windows_by_subject, groups_by_id, manifest, class_set


def _train_config(args, cfg: dict, seed: int, backend: str | None,
                  default_batch: int, default_epochs: int) -> experiments.TrainConfig:
    channels = _pick(getattr(args, "channels", None), cfg.get("channels"))
    kernels = _pick(getattr(args, "kernels", None), cfg.get("kernels"))
    for name, triple in (("channels", channels), ("kernels", kernels)):
        if triple is not None and len(triple) != 3:
            raise UsageError(f"--{name} needs exactly three comma-separated integers")
    return experiments.TrainConfig(
        batch_size=int(_pick(args.batch_size, cfg.get("batch_size"), default_batch)),
        epochs=int(_pick(args.epochs, cfg.get("epochs"), default_epochs)),
        lr=float(_pick(args.lr, cfg.get("lr"), 1e-3)),
        gamma=float(_pick(args.gamma, cfg.get("gamma"), 2.0)),
        balanced=not args.uniform_alpha,
        seed=seed,
        backend=backend,
        channels=tuple(channels) if channels else (128, 256, 128),
        kernels=tuple(kernels) if kernels else (8, 5, 3),
    )


def cmd_ingest(args) -> int:
    cfg, _, _ = _prepare(args)
    rate = int(_pick(args.rate, cfg.get("rate"), 5))
    for name in ("glucose", "subjects"):
        path = Path(getattr(args, name))
        if not path.exists():
            raise DataError(f"{name} file {path} does not exist")
    series = ingestion.ingest_glucose_csv(args.glucose, rate=rate)
    subjects = ingestion.ingest_subjects_csv(args.subjects)
    unrostered = sorted(set(series) - set(subjects))
    if unrostered:
        logger.warning("%d subjects have readings but no roster row (unknown age): %s",
                       len(unrostered), unrostered[:5])
    out = _out_dir(args, cfg)
    ingestion.write_cohort(out, series, subjects)
    print(json.dumps(ingestion.cohort_summary(series, subjects), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg, seed, _ = _prepare(args)
    out = _out_dir(args, cfg)
    profiles = _SYNTH_PROFILES[args.profile]()
    scfg = synth_mod.SynthConfig(
        seed=seed,
        subjects_per_group=int(_pick(args.per_group, cfg.get("subjects_per_group"), 10)),
        n_unknown_age=int(_pick(args.unknown, 0)),
        days=float(_pick(args.days, cfg.get("days"), 14.0)),
        rate=int(_pick(args.rate, cfg.get("rate"), 5)),
        dropout_gaps_per_day=float(_pick(args.dropout_per_day, 0.4)),
    )
    scfg = synth_mod.config_with_profiles(scfg, profiles)
    synth_mod.write_cohort_with_log(out, scfg)
    cohort = ingestion.load_cohort(out)
    episodes = synth_mod.read_episode_log(out / "episodes.csv")
    print(f"wrote {len(cohort.series_by_id)} subjects, {len(episodes)} episodes to {out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    cfg, _, _ = _prepare(args)
    in_dir = _in_dir(args, cfg)
    out = _out_dir(args, cfg)
    rate = int(_pick(args.rate, cfg.get("rate"), 5))
    cohort = ingestion.load_cohort(in_dir)
    cleaned: dict = {}
    reports = []
    for sid, series in sorted(cohort.series_by_id.items()):
        cleaned[sid], report = preprocess.clean_series(series, rate=rate)
        reports.append(report)
    ingestion.write_cohort(out, cleaned, cohort.subjects_by_id)
    preprocess.write_gap_reports_csv(out / "gap_report.csv", reports)
    totals = {name: sum(r.count(name) for r in reports)
              for name in (preprocess.LINEAR, preprocess.STINEMAN, preprocess.LEFT_OPEN)}
    print(json.dumps({"gap_totals": totals, "n_subjects": len(cleaned)},
                     indent=2, sort_keys=True))
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg, _, _ = _prepare(args)
    in_dir = _in_dir(args, cfg)
    cohort = ingestion.load_cohort(in_dir)
    rows = cohort_stats.summary_per_age(cohort.series_by_id, cohort.subjects_by_id)
    print(f"{'age':>4} {'subjects':>9} {'values':>9} {'mean':>8} {'std':>8} "
          f"{'min':>6} {'max':>6}")
    for row in rows:
        print(f"{row.age_years:>4} {row.n_subjects:>9} {row.n_values:>9} "
              f"{row.mean:>8.2f} {row.std:>8.2f} {row.vmin:>6.1f} {row.vmax:>6.1f}")
    edges = _pick(args.edges, cfg.get("edges"), [14, 21, 45])
    evaluation = cohort_stats.evaluate_split(cohort.series_by_id,
                                             cohort.subjects_by_id, edges)
    doc = {
        "pipeline_version": PIPELINE_VERSION,
        "per_age": [vars(r) for r in rows],
        "split": {
            "all_pairs_significant": evaluation.all_pairs_significant,
            "edges": list(evaluation.edges),
            "feasible": evaluation.feasible,
            "group_sizes": evaluation.group_sizes,
            "notes": evaluation.notes,
        },
    }
    if evaluation.result is not None:
        doc["split"]["tukey"] = {
            "df": evaluation.result.df,
            "mse": evaluation.result.mse,
            "q": evaluation.result.q,
            "pairs": [vars(p) for p in evaluation.result.pairs],
        }
        print(f"split {evaluation.edges}: all pairs significant = "
              f"{evaluation.all_pairs_significant}")
        for pair in evaluation.result.pairs:
            print(f"  {pair.group_a:>8} vs {pair.group_b:<8} diff {pair.mean_diff:+9.4f}"
                  f"  CI [{pair.ci_lo:+9.4f}, {pair.ci_hi:+9.4f}]"
                  f"  {'reject' if pair.reject else 'overlap'}")
    else:
        print(f"split {evaluation.edges}: infeasible ({'; '.join(evaluation.notes)})")
    if args.out:
        experiments.write_json(args.out, doc)
    return EXIT_OK


def cmd_label(args) -> int:
    cfg, _, _ = _prepare(args)
    in_dir = _in_dir(args, cfg)
    out = _out_dir(args, cfg)
    key = _pick(args.class_set, cfg.get("class_set"), "II")
    class_set = get_class_set(key)
    cohort = ingestion.load_cohort(in_dir)
    labels_by_id = {}
    for sid, series in sorted(cohort.series_by_id.items()):
        if args.binary:
            labels_by_id[sid] = labeling.assign_binary_risk(series)
        else:
            labels_by_id[sid] = labeling.assign_classes(series, class_set)
    ingestion.write_cohort(out, cohort.series_by_id, cohort.subjects_by_id, labels_by_id)
    distribution = labeling.class_distribution(labels_by_id.values())
    labeling.write_class_distribution_csv(out / "class_distribution.csv", distribution)
    experiments.write_json(out / "labeling.json", {
        "binary": bool(args.binary),
        "class_set": "binary" if args.binary else class_set.key,
        "distribution": {str(k): v for k, v in distribution.items()},
        "pipeline_version": PIPELINE_VERSION,
    })
    print(json.dumps({str(k): v for k, v in distribution.items()}, indent=2,
                     sort_keys=True))
    return EXIT_OK


def cmd_split(args) -> int:
    cfg, _, _ = _prepare(args)
    in_dir = _in_dir(args, cfg)
    cohort = ingestion.load_cohort(in_dir)
    plan = windowing.select_test_subjects(
        ingestion.age_groups_of_cohort(cohort), ingestion.datapoint_counts(cohort),
        n_per_group=int(_pick(args.per_group, cfg.get("per_group"), 10)))
    out_file = Path(_pick(args.out, cfg.get("artifact_dir")) or "split.json")
    if out_file.is_dir():
        out_file = out_file / "split.json"
    out_file.parent.mkdir(parents=True, exist_ok=True)
    experiments.write_json(out_file, plan.to_json_dict())
    print(f"{len(plan.test_ids)} test subjects across {len(plan.test_by_group)} groups, "
          f"{len(plan.train_ids)} train subjects -> {out_file}")
    return EXIT_OK


def cmd_windows(args) -> int:
    cfg, _, _ = _prepare(args)
    in_dir = _in_dir(args, cfg)
    out = _out_dir(args, cfg)
    key = _pick(args.class_set, cfg.get("class_set"), "II")
    isl = int(_pick(args.isl, cfg.get("isl"), 30))
    cohort = ingestion.load_cohort(in_dir)
    if not cohort.labels_by_id:
        raise DataError(f"cohort {in_dir} has no labels; run the label step first")
    class_set = get_class_set(key)
    windows_by_subject = experiments.windows_for_cohort(cohort, class_set, isl)
    windowing.write_windows_dir(out, windows_by_subject,
                                ingestion.age_groups_of_cohort(cohort),
                                PIPELINE_VERSION)
    total = sum(len(ws) for ws in windows_by_subject.values())
    print(f"wrote {total} windows for {len(windows_by_subject)} subjects to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, seed, backend = _prepare(args)
    scope = _parse_scope(_pick(args.scope, cfg.get("scope"), experiments.GLOBAL_SCOPE))
    windows_path, wsets, groups_by_id, manifest, class_set = _load_windows(args.windows)
    plan = _load_split(args.split)
    out = _out_dir(args, cfg)
    default_batch = 512 if scope == experiments.GLOBAL_SCOPE else 264
    tcfg = _train_config(args, cfg, seed, backend, default_batch, 100)
    model, report = experiments.train_scope(scope, wsets, plan, groups_by_id,
                                            class_set.n_classes, tcfg)
    save_model(out / "model.json", model)
    experiments.write_json(out / "report.json",
                           {"pipeline_version": PIPELINE_VERSION, **report.to_dict()})
    run_doc = experiments.run_manifest(
        "train", {**tcfg.to_dict(), "class_set": class_set.key,
                  "isl_minutes": manifest["isl_minutes"], "scope": scope},
        [windows_path, args.split])
    experiments.write_json(out / "run_manifest.json", run_doc)
    print(f"scope {scope}: trained on {report.n_train_windows} windows; "
          f"test macro recall {report.overall.macro_recall:.4f}, "
          f"macro F1 {report.overall.macro_f1:.4f} -> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg, seed, backend = _prepare(args)
    scope = _parse_scope(_pick(args.scope, cfg.get("scope"), experiments.GLOBAL_SCOPE))
    windows_path, wsets, groups_by_id, manifest, class_set = _load_windows(args.windows)
    plan = _load_split(args.split)
    out = _out_dir(args, cfg)
    model = load_model(args.model)
    if model.config.n_classes != class_set.n_classes:
        raise DataError(f"model predicts {model.config.n_classes} classes but class "
                        f"set {class_set.key} defines {class_set.n_classes}")
    if model.config.input_len != manifest["window_len"]:
        raise DataError(f"model expects {model.config.input_len}-point windows but "
                        f"the directory holds {manifest['window_len']}-point ones")
    groups = None if scope == experiments.GLOBAL_SCOPE else [AgeGroup(scope)]
    overall, per_group, per_subject = experiments.evaluate_scope(
        model, scope, wsets, plan, class_set.n_classes, backend, groups)
    doc = {
        "overall": overall.to_dict(),
        "per_group": {g: r.to_dict() for g, r in sorted(per_group.items())},
        "per_subject": dict(sorted(per_subject.items())),
        "pipeline_version": PIPELINE_VERSION,
        "scope": scope,
    }
    experiments.write_json(out / "metrics.json", doc)
    run_doc = experiments.run_manifest(
        "evaluate", {"backend": backend or "auto", "class_set": class_set.key,
                     "scope": scope, "seed": seed},
        [windows_path, args.split, args.model])
    experiments.write_json(out / "run_manifest.json", run_doc)
    print(f"scope {scope}: macro recall {overall.macro_recall:.4f}, macro precision "
          f"{overall.macro_precision:.4f}, macro F1 {overall.macro_f1:.4f}, "
          f"PR-AUC {overall.macro_pr_auc:.4f} -> {out}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg, seed, backend = _prepare(args)
    windows_path, wsets, groups_by_id, manifest, class_set = _load_windows(args.windows)
    plan = _load_split(args.split)
    out = _out_dir(args, cfg)
    base = load_model(args.model)
    tcfg = _train_config(args, cfg, seed, backend, 512, 100)
    targets = args.subject or plan.test_ids
    (out / "models").mkdir(exist_ok=True)
    reports: dict[str, dict] = {}
    skipped: list[str] = []
    for sid in sorted(targets):
        ws = wsets.get(sid)
        if ws is None:
            raise DataError(f"subject {sid} has no windows in {windows_path}")
        result = experiments.fine_tune_subject(base, ws, class_set.n_classes, tcfg)
        if result is None:
            skipped.append(sid)
            continue
        tuned, report = result
        save_model(out / "models" / (windowing._SAFE_NAME.sub("_", sid) + ".json"), tuned)
        reports[sid] = report
    experiments.write_json(out / "finetune_report.json", {
        "pipeline_version": PIPELINE_VERSION,
        "skipped": skipped,
        "subjects": reports,
    })
    run_doc = experiments.run_manifest(
        "finetune", {**tcfg.to_dict(), "class_set": class_set.key,
                     "epochs": experiments.FINETUNE_EPOCHS,
                     "lr": experiments.FINETUNE_LR},
        [windows_path, args.split, args.model])
    experiments.write_json(out / "run_manifest.json", run_doc)
    deltas = [rep["after"]["macro_recall"] - rep["before"]["macro_recall"]
              for rep in reports.values()]
    mean_delta = float(np.mean(deltas)) if deltas else float("nan")
    print(f"fine-tuned {len(reports)} subjects ({len(skipped)} skipped); "
          f"mean macro-recall change {mean_delta:+.4f} -> {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg, seed, backend = _prepare(args)
    in_dir = _in_dir(args, cfg)
    out = _out_dir(args, cfg)
    cohort = ingestion.load_cohort(in_dir)
    keys = _pick(args.class_sets, cfg.get("class_sets"), list(CLASS_SETS))
    isl_values = _pick(args.isl, cfg.get("isl_list"), [30, 45, 60, 90, 120])
    seeds = tuple(_pick(args.seeds, cfg.get("seeds"), list(experiments.ABLATION_SEEDS)))
    tcfg = experiments.ablation_config(
        batch_size=int(_pick(args.batch_size, cfg.get("batch_size"), 128)),
        epochs=int(_pick(args.epochs, cfg.get("epochs"), 20)),
        seed=seed, backend=backend)
    cells = experiments.run_ablation(
        cohort.series_by_id, [get_class_set(k) for k in keys], list(isl_values),
        tcfg, seeds=seeds,
        subject_fraction=float(_pick(args.fraction, cfg.get("fraction"),
                                     experiments.ABLATION_SUBJECT_FRACTION)))
    experiments.write_json(out / "ablation.json", {
        "cells": [c.to_dict() for c in cells],
        "pipeline_version": PIPELINE_VERSION,
    })
    run_doc = experiments.run_manifest(
        "ablate", {**tcfg.to_dict(), "class_sets": list(keys),
                   "isl_list": list(isl_values), "seeds": list(seeds)},
        [in_dir])
    experiments.write_json(out / "run_manifest.json", run_doc)
    print(f"{'set':>4} {'isl':>4} {'mean recall':>12} {'std':>8}")
    for cell in cells:
        if cell.mean_macro_recall is None:
            print(f"{cell.class_set_key:>4} {cell.isl_minutes:>4} {'failed':>12} "
                  f"        ({cell.error})")
        else:
            print(f"{cell.class_set_key:>4} {cell.isl_minutes:>4} "
                  f"{cell.mean_macro_recall:>12.4f} {cell.std_macro_recall:>8.4f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg, _, _ = _prepare(args)
    with open(args.global_report) as fh:
        global_doc = json.load(fh)
    group_docs = []
    for path in args.group_report:
        with open(path) as fh:
            group_docs.append(json.load(fh))
    comparison = experiments.compare_scopes(global_doc, group_docs)
    if args.out:
        experiments.write_json(args.out, {"pipeline_version": PIPELINE_VERSION,
                                          **comparison})
    print(f"{'group':>8} {'GPB recall':>11} {'ASPB recall':>12} {'delta':>8}")
    for row in comparison["groups"]:
        print(f"{row['age_group']:>8} {row['global_macro_recall']:>11.4f} "
              f"{row['aspb_macro_recall']:>12.4f} {row['aspb_minus_global']:>+8.4f}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="glyconet", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version",
                        version=f"glyconet {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default option values")
    common.add_argument("--seed", type=int, help="master seed (default 48)")
    common.add_argument("--threads", type=int,
                        help="worker threads for the numba backend (default 1)")
    common.add_argument("--backend", choices=["auto", "numba", "numpy"],
                        help="kernel backend (default: $GLYCONET_BACKEND or auto)")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("ingest", parents=[common], help="parse raw CSV exports "
                       "into a cohort directory")
    p.add_argument("--glucose", required=True, help="readings CSV "
                   "(subject_id,timestamp,glucose_mgdl)")
    p.add_argument("--subjects", required=True, help="roster CSV "
                   "(subject_id,age_years[,sex])")
    p.add_argument("--out", help="cohort directory to create")
    p.add_argument("--rate", type=int, help="declared sampling rate in minutes")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    p.add_argument("--out", help="cohort directory to create")
    p.add_argument("--profile", choices=sorted(_SYNTH_PROFILES), default="default")
    p.add_argument("--per-group", type=int, dest="per_group",
                   help="subjects per age group (default 10)")
    p.add_argument("--unknown", type=int, help="extra unknown-age subjects")
    p.add_argument("--days", type=float, help="days of data per subject (default 14)")
    p.add_argument("--rate", type=int, help="grid minutes (default 5)")
    p.add_argument("--dropout-per-day", type=float, dest="dropout_per_day",
                   help="expected dropout gaps per day (default 0.4)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common],
                       help="clean and impute a cohort onto the grid")
    p.add_argument("--in", dest="in_dir", help="input cohort directory")
    p.add_argument("--out", help="output cohort directory")
    p.add_argument("--rate", type=int, help="target grid in minutes: 5 or 15")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("stats", parents=[common],
                       help="per-age summaries and age-split separability")
    p.add_argument("--in", dest="in_dir", help="cohort directory")
    p.add_argument("--edges", type=_csv_ints,
                   help="candidate age-bin edges, e.g. 14,21,45")
    p.add_argument("--out", help="optional JSON report path")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("label", parents=[common],
                       help="assign look-ahead classes to a cleaned cohort")
    p.add_argument("--in", dest="in_dir", help="cleaned cohort directory")
    p.add_argument("--out", help="labeled cohort directory")
    p.add_argument("--class-set", dest="class_set", choices=sorted(CLASS_SETS),
                   help="class set key (default II)")
    p.add_argument("--binary", action="store_true",
                   help="binary risk labels instead of multi-class")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("split", parents=[common],
                       help="choose held-out test subjects per age group")
    p.add_argument("--in", dest="in_dir", help="cohort directory")
    p.add_argument("--out", help="split JSON path")
    p.add_argument("--per-group", type=int, dest="per_group",
                   help="test subjects per group (default 10)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("windows", parents=[common],
                       help="cut labeled series into training windows")
    p.add_argument("--in", dest="in_dir", help="labeled cohort directory")
    p.add_argument("--out", help="windows directory")
    p.add_argument("--class-set", dest="class_set", choices=sorted(CLASS_SETS),
                   help="class set key (default II)")
    p.add_argument("--isl", type=int, help="input sequence length in minutes "
                   "(default 30)")
    p.set_defaults(func=cmd_windows)

    train_common = argparse.ArgumentParser(add_help=False)
    train_common.add_argument("--batch-size", type=int, dest="batch_size")
    train_common.add_argument("--epochs", type=int)
    train_common.add_argument("--lr", type=float)
    train_common.add_argument("--gamma", type=float, help="focal exponent (default 2)")
    train_common.add_argument("--uniform-alpha", action="store_true",
                              dest="uniform_alpha",
                              help="disable inverse-frequency class weights")
    train_common.add_argument("--channels", type=_csv_ints)
    train_common.add_argument("--kernels", type=_csv_ints)

    p = sub.add_parser("train", parents=[common, train_common],
                       help="train a population model (GPB or one age scope)")
    p.add_argument("--windows", required=True, help="windows directory")
    p.add_argument("--split", required=True, help="split JSON path")
    p.add_argument("--scope", help="'global' or 'age:<group>' (default global)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", parents=[common, train_common],
                       help="individualize a model per held-out subject")
    p.add_argument("--windows", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--model", required=True, help="base model JSON")
    p.add_argument("--subject", action="append",
                   help="restrict to this subject (repeatable)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score a saved model on held-out subjects")
    p.add_argument("--windows", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--scope", help="'global' or 'age:<group>' (default global)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common, train_common],
                       help="class-set x ISL grid on a subject subsample")
    p.add_argument("--in", dest="in_dir", help="cleaned cohort directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--class-sets", type=_csv_names, dest="class_sets",
                   help="comma-separated class set keys (default I,II,III)")
    p.add_argument("--isl", type=_csv_ints,
                   help="comma-separated ISL minutes (default 30,45,60,90,120)")
    p.add_argument("--seeds", type=_csv_ints, help="comma-separated seeds "
                   "(default 48,0,1234)")
    p.add_argument("--fraction", type=float,
                   help="subject subsample fraction (default 0.1)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare", parents=[common],
                       help="global vs per-group report comparison")
    p.add_argument("--global", dest="global_report", required=True,
                   help="global-scope report JSON")
    p.add_argument("--group", dest="group_report", action="append", required=True,
                   help="per-group report JSON (repeatable)")
    p.add_argument("--out", help="comparison JSON path")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
            stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
        if not hasattr(args, "func"):
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GlyconetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # the exit contract maps any failure to 3
        logging.getLogger(__name__).debug("unhandled failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
