"""Training protocols and experiment orchestration.

Three model scopes share one training loop:

* GPB  - one global model over every training subject (batch 512)
* ASPB - one model per age group, trained on that group only (batch 264)
* individualized - a population model fine-tuned on one subject's personal
  training slice (5 epochs at a tenth of the base learning rate)

Multi-class models train and evaluate on risk windows only (labels 0..C-1);
no-risk windows stay on disk but are filtered here. Evaluation always runs
on the personal test slice (the last 40% of each held-out subject's
windows), so population scores and post-fine-tuning scores are computed on
identical samples.

Every command that trains or evaluates writes a run manifest capturing the
config, seeds, library versions and input fingerprints. Manifests carry no
wall-clock fields: a repeated run must reproduce every artifact byte for
byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import PIPELINE_VERSION, __version__
from .domain import AgeGroup, ClassSet, GlucoseSeries
from .errors import DataError, TrainingDivergedError
from .ingestion import Cohort
from .labeling import assign_classes
from .metrics import MetricsReport, evaluate_predictions
from .neuralnet import (
    Adam,
    FcnConfig,
    FcnModel,
    backward,
    balanced_alpha,
    focal_loss,
    forward,
    init_model,
    predict_proba,
    resolve_backend_name,
)
from .windowing import SplitPlan, WindowSet, finetune_boundaries, make_windows

logger = logging.getLogger(__name__)

GLOBAL_SCOPE = "global"

FINETUNE_EPOCHS = 5
FINETUNE_LR = 1e-4
ABLATION_SEEDS = (48, 0, 1234)
ABLATION_SUBJECT_FRACTION = 0.1
ABLATION_TRAIN_SHARE = 0.7


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    epochs: int = 100
    lr: float = 1e-3
    gamma: float = 2.0
    balanced: bool = True
    seed: int = 48
    backend: str | None = None
    channels: tuple[int, int, int] = (128, 256, 128)
    kernels: tuple[int, int, int] = (8, 5, 3)

    def to_dict(self) -> dict:
        return {"backend": self.backend or "auto", "balanced": self.balanced,
                "batch_size": self.batch_size, "channels": list(self.channels),
                "epochs": self.epochs, "gamma": self.gamma,
                "kernels": list(self.kernels), "lr": self.lr, "seed": self.seed}


def population_config(**overrides) -> TrainConfig:
    return replace(TrainConfig(batch_size=512, epochs=100), **overrides)


def age_scope_config(**overrides) -> TrainConfig:
    return replace(TrainConfig(batch_size=264, epochs=100), **overrides)


def ablation_config(**overrides) -> TrainConfig:
    return replace(TrainConfig(batch_size=128, epochs=20), **overrides)


def train_classifier(features: np.ndarray, labels: np.ndarray, n_classes: int,
                     cfg: TrainConfig, model: FcnModel | None = None
                     ) -> tuple[FcnModel, list[float]]:
    """Mini-batch Adam on the focal loss; returns the model and epoch losses.

    Class weights are recomputed from the labels given here, so every scope
    (global, per-group, personal) is balanced against its own distribution.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if n == 0:
        raise DataError("no training windows in this scope")
    if features.ndim != 2 or features.shape[0] != n:
        raise DataError("features and labels do not align")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise DataError(f"training labels outside [0, {n_classes}); filter risk "
                        "windows before training")
    if model is None:
        config = FcnConfig(input_len=features.shape[1], n_classes=n_classes,
                           channels=cfg.channels, kernels=cfg.kernels)
        model = init_model(config, cfg.seed)
    elif model.config.input_len != features.shape[1] or model.config.n_classes != n_classes:
        raise DataError("model geometry does not match the training windows")

    alpha = balanced_alpha(np.bincount(labels, minlength=n_classes)) if cfg.balanced else None
    optimizer = Adam(model.params, lr=cfg.lr)
    shuffle = np.random.Generator(np.random.Philox(key=[cfg.seed, 1]))
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(n)
        batch_losses: list[float] = []
        for i, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            probs, cache = forward(model, features[idx], training=True,
                                   backend_name=cfg.backend)
            loss, dlogits = focal_loss(probs, labels[idx], cfg.gamma, alpha)
            if not np.isfinite(loss):
                raise TrainingDivergedError("loss is not finite", epoch=epoch, batch=i)
            grads = backward(model, cache, dlogits)
            for name, grad in grads.items():
                if not np.all(np.isfinite(grad)):
                    raise TrainingDivergedError(f"gradient of {name} is not finite",
                                                epoch=epoch, batch=i)
            optimizer.step(model.params, grads)
            batch_losses.append(loss)
        history.append(float(np.mean(batch_losses)))
    return model, history


def windows_for_cohort(cohort: Cohort, class_set: ClassSet,
                       isl_minutes: int) -> dict[str, WindowSet]:
    """Label-aligned window sets per subject from a labeled cohort."""
    out: dict[str, WindowSet] = {}
    for sid, series in sorted(cohort.series_by_id.items()):
        labels = cohort.labels_by_id.get(sid)
        if labels is None:
            raise DataError(f"subject {sid} has no labels; run the labeling step first")
        out[sid] = make_windows(series, labels, isl_minutes, class_set.key)
    return out


def risk_matrix(window_sets: list[WindowSet], n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack features/labels, keeping only proper class indices [0, C)."""
    feats, labs = [], []
    for ws in window_sets:
        keep = (ws.labels >= 0) & (ws.labels < n_classes)
        if keep.any():
            feats.append(ws.features[keep])
            labs.append(ws.labels[keep])
    if not feats:
        return np.empty((0, 0)), np.empty(0, np.int64)
    return np.concatenate(feats), np.concatenate(labs)


@dataclass
class ScopeReport:
    scope: str
    n_train_windows: int
    train_subjects: list[str]
    overall: MetricsReport
    per_group: dict[str, MetricsReport]
    per_subject: dict[str, dict]
    history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "history": [float(x) for x in self.history],
            "n_train_windows": self.n_train_windows,
            "overall": self.overall.to_dict(),
            "per_group": {g: r.to_dict() for g, r in sorted(self.per_group.items())},
            "per_subject": dict(sorted(self.per_subject.items())),
            "scope": self.scope,
            "train_subjects": list(self.train_subjects),
        }


def _personal_test_slice(ws: WindowSet, n_classes: int):
    bounds = finetune_boundaries(len(ws))
    if bounds is None:
        return None
    sliced = ws.select(slice(bounds.test_start_index, None))
    keep = (sliced.labels >= 0) & (sliced.labels < n_classes)
    if not keep.any():
        return None
    return sliced.features[keep], sliced.labels[keep]


def evaluate_scope(model: FcnModel, scope: str,
                   windows_by_subject: dict[str, WindowSet],
                   plan: SplitPlan, n_classes: int,
                   backend: str | None = None,
                   groups: list[AgeGroup] | None = None) -> tuple[
                       MetricsReport, dict[str, MetricsReport], dict[str, dict]]:
    """Score a model on the personal test slices of held-out subjects."""
    group_true: dict[str, list[np.ndarray]] = {}
    group_prob: dict[str, list[np.ndarray]] = {}
    per_subject: dict[str, dict] = {}
    for group, sids in sorted(plan.test_by_group.items(), key=lambda kv: kv[0].value):
        if groups is not None and group not in groups:
            continue
        for sid in sids:
            ws = windows_by_subject.get(sid)
            if ws is None or len(ws) == 0:
                logger.warning("test subject %s has no windows; skipped", sid)
                continue
            sliced = _personal_test_slice(ws, n_classes)
            if sliced is None:
                logger.warning("test subject %s has no scorable test windows; skipped", sid)
                continue
            feats, labs = sliced
            probs = predict_proba(model, feats, backend_name=backend)
            group_true.setdefault(group.value, []).append(labs)
            group_prob.setdefault(group.value, []).append(probs)
            subject_report = evaluate_predictions(labs, probs.argmax(axis=1), n_classes)
            per_subject[sid] = {"group": group.value,
                                "macro_recall": subject_report.macro_recall,
                                "n_test_windows": int(labs.size)}
    if not group_true:
        raise DataError(f"scope {scope}: no test subject produced scorable windows")
    per_group: dict[str, MetricsReport] = {}
    all_true, all_prob = [], []
    for gname in sorted(group_true):
        truths = np.concatenate(group_true[gname])
        probs = np.concatenate(group_prob[gname])
        per_group[gname] = evaluate_predictions(truths, probs.argmax(axis=1),
                                                n_classes, probs)
        all_true.append(truths)
        all_prob.append(probs)
    truths = np.concatenate(all_true)
    probs = np.concatenate(all_prob)
    overall = evaluate_predictions(truths, probs.argmax(axis=1), n_classes, probs)
    return overall, per_group, per_subject


def train_scope(scope: str, windows_by_subject: dict[str, WindowSet],
                plan: SplitPlan, groups_by_id: dict[str, AgeGroup],
                n_classes: int, cfg: TrainConfig) -> tuple[FcnModel, ScopeReport]:
    """Train one GPB (scope 'global') or ASPB (scope = an age-group value) model."""
    if scope == GLOBAL_SCOPE:
        train_ids = list(plan.train_ids)
        eval_groups = None
    else:
        group = AgeGroup(scope)
        train_ids = [sid for sid in plan.train_ids if groups_by_id.get(sid) == group]
        eval_groups = [group]
    held_out = set(plan.test_ids)
    leaked = held_out.intersection(train_ids)
    if leaked:
        raise DataError(f"test subjects {sorted(leaked)} appear in the training scope")
    sets = [windows_by_subject[sid] for sid in train_ids if sid in windows_by_subject]
    features, labels = risk_matrix(sets, n_classes)
    if labels.size == 0:
        raise DataError(f"scope {scope} has no risk windows to train on")
    model, history = train_classifier(features, labels, n_classes, cfg)
    overall, per_group, per_subject = evaluate_scope(
        model, scope, windows_by_subject, plan, n_classes, cfg.backend, eval_groups)
    report = ScopeReport(scope=scope, n_train_windows=int(labels.size),
                         train_subjects=train_ids, overall=overall,
                         per_group=per_group, per_subject=per_subject,
                         history=history)
    return model, report


def fine_tune_subject(model: FcnModel, ws: WindowSet, n_classes: int,
                      cfg: TrainConfig) -> tuple[FcnModel, dict] | None:
    """Individualize a population model on one subject's personal train slice.

    Returns None (with a warning) when the subject has too few windows or no
    risk windows in a usable slice; otherwise the tuned model plus a report
    comparing before/after on the personal test slice.
    """
    bounds = finetune_boundaries(len(ws))
    if bounds is None:
        return None
    train_slice = ws.select(slice(0, bounds.train_end_index))
    feats, labs = risk_matrix([train_slice], n_classes)
    sliced = _personal_test_slice(ws, n_classes)
    if labs.size == 0 or sliced is None:
        logger.warning("subject %s has no risk windows on one side of the personal "
                       "split; skipped", ws.subject_ids[0] if len(ws) else "?")
        return None
    test_feats, test_labs = sliced
    before = evaluate_predictions(
        test_labs, predict_proba(model, test_feats, backend_name=cfg.backend).argmax(axis=1),
        n_classes)
    tuned = FcnModel(model.config,
                     {k: v.copy() for k, v in model.params.items()},
                     {k: v.copy() for k, v in model.running.items()},
                     dict(model.meta))
    tune_cfg = replace(cfg, epochs=FINETUNE_EPOCHS, lr=FINETUNE_LR)
    tuned, history = train_classifier(feats, labs, n_classes, tune_cfg, model=tuned)
    probs = predict_proba(tuned, test_feats, backend_name=cfg.backend)
    after = evaluate_predictions(test_labs, probs.argmax(axis=1), n_classes, probs)
    report = {
        "after": after.to_dict(),
        "before": {"macro_recall": before.macro_recall,
                   "macro_f1": before.macro_f1},
        "history": [float(x) for x in history],
        "n_personal_train": int(labs.size),
        "n_personal_test": int(test_labs.size),
    }
    return tuned, report


def compare_scopes(global_doc: dict, group_docs: list[dict]) -> dict:
    """Side-by-side per-group recall of the global model vs per-group models.

    Operates on persisted scope-report dicts (`ScopeReport.to_dict` output)
    so reports produced by separate runs can be compared. The two runs must
    have scored the same test subjects per group.
    """
    if global_doc.get("scope") != GLOBAL_SCOPE:
        raise DataError("the first report must come from a global-scope run")
    rows = []
    extremes: dict[str, dict] = {}

    def subject_extremes(doc: dict) -> dict:
        per_subject = doc.get("per_subject", {})
        if not per_subject:
            return {}
        items = sorted(per_subject.items(), key=lambda kv: (kv[1]["macro_recall"], kv[0]))
        return {"best_subject": {"subject_id": items[-1][0], **items[-1][1]},
                "worst_subject": {"subject_id": items[0][0], **items[0][1]}}

    extremes[GLOBAL_SCOPE] = subject_extremes(global_doc)
    for doc in sorted(group_docs, key=lambda d: str(d.get("scope"))):
        gname = doc.get("scope")
        if gname not in doc.get("per_group", {}):
            raise DataError(f"scope report {gname!r} lacks metrics for its own group")
        if gname not in global_doc.get("per_group", {}):
            raise DataError(f"the global report has no group {gname}; the runs "
                            "evaluated different test sets")
        own = set(doc.get("per_subject", {}))
        global_subjects = {sid for sid, rec in global_doc.get("per_subject", {}).items()
                           if rec.get("group") == gname}
        if own != global_subjects:
            raise DataError(f"group {gname}: test subjects differ between runs "
                            f"({sorted(own ^ global_subjects)})")
        g_rec = global_doc["per_group"][gname]["macro_recall"]
        a_rec = doc["per_group"][gname]["macro_recall"]
        rows.append({"age_group": gname, "aspb_macro_recall": a_rec,
                     "aspb_minus_global": a_rec - g_rec,
                     "global_macro_recall": g_rec})
        extremes[gname] = subject_extremes(doc)
    return {"groups": rows, "scope_extremes": extremes}


@dataclass
class AblationCell:
    class_set_key: str
    isl_minutes: int
    per_seed: dict[int, float]
    mean_macro_recall: float | None
    std_macro_recall: float | None
    error: str | None = None

    def to_dict(self) -> dict:
        return {"class_set": self.class_set_key, "error": self.error,
                "isl_minutes": self.isl_minutes,
                "mean_macro_recall": self.mean_macro_recall,
                "per_seed": {str(k): v for k, v in sorted(self.per_seed.items())},
                "std_macro_recall": self.std_macro_recall}


def run_ablation(series_by_id: dict[str, GlucoseSeries],
                 class_sets: list[ClassSet], isl_values: list[int],
                 cfg: TrainConfig, seeds: tuple[int, ...] = ABLATION_SEEDS,
                 subject_fraction: float = ABLATION_SUBJECT_FRACTION) -> list[AblationCell]:
    """Grid over class sets and ISLs on a subject subsample.

    One seeded draw picks roughly a tenth of the subjects, split 70:30 into
    train and eval by subject; every grid cell reuses the same subsample so
    cells are comparable. Each cell trains once per seed and reports the
    mean and spread of macro recall on the eval subjects' risk windows.
    """
    pool = sorted(series_by_id)
    if len(pool) < 2:
        raise DataError("ablation needs at least two subjects")
    rng = np.random.Generator(np.random.Philox(key=[cfg.seed, 2]))
    k = max(2, int(round(subject_fraction * len(pool))))
    subset = rng.permutation(np.asarray(pool, dtype=object))[:k].tolist()
    n_train = min(max(1, int(round(ABLATION_TRAIN_SHARE * k))), k - 1)
    train_ids, eval_ids = sorted(subset[:n_train]), sorted(subset[n_train:])
    logger.info("ablation subsample: %d train / %d eval subjects", len(train_ids),
                len(eval_ids))

    cells: list[AblationCell] = []
    for class_set in class_sets:
        labels_by_id = {sid: assign_classes(series_by_id[sid], class_set)
                        for sid in train_ids + eval_ids}
        n_classes = class_set.n_classes
        for isl in isl_values:
            def windows(ids):
                return [make_windows(series_by_id[sid], labels_by_id[sid], isl,
                                     class_set.key) for sid in ids]
            X_tr, y_tr = risk_matrix(windows(train_ids), n_classes)
            X_ev, y_ev = risk_matrix(windows(eval_ids), n_classes)
            if y_tr.size == 0 or y_ev.size == 0:
                cells.append(AblationCell(class_set.key, isl, {}, None, None,
                                          error="no risk windows in train or eval"))
                continue
            per_seed: dict[int, float] = {}
            error = None
            for seed in seeds:
                try:
                    model, _ = train_classifier(X_tr, y_tr, n_classes,
                                                replace(cfg, seed=seed))
                    pred = predict_proba(model, X_ev, backend_name=cfg.backend).argmax(axis=1)
                    per_seed[seed] = evaluate_predictions(y_ev, pred, n_classes).macro_recall
                except TrainingDivergedError as exc:
                    error = str(exc)
                    logger.warning("ablation cell (%s, %d) seed %d diverged: %s",
                                   class_set.key, isl, seed, exc)
            recalls = list(per_seed.values())
            cells.append(AblationCell(
                class_set.key, isl, per_seed,
                float(np.mean(recalls)) if recalls else None,
                float(np.std(recalls)) if recalls else None,
                error=error))
    return cells


def _fingerprint(path: Path) -> str:
    if path.is_dir():
        digest = hashlib.sha256()
        for sub in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(str(sub.relative_to(path)).encode())
            digest.update(hashlib.sha256(sub.read_bytes()).digest())
        return digest.hexdigest()
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_manifest(command: str, config: dict, inputs: list) -> dict:
    """Provenance record for one command. Deliberately no timestamps."""
    versions = {"glyconet": __version__, "numpy": np.__version__,
                "pipeline": PIPELINE_VERSION,
                "python": ".".join(str(v) for v in sys.version_info[:3])}
    try:
        import numba
        versions["numba"] = numba.__version__
    except ImportError:
        pass
    return {
        "backend": resolve_backend_name(config.get("backend")
                                        if config.get("backend") not in (None, "auto")
                                        else None),
        "command": command,
        "config": config,
        "inputs": {str(p): _fingerprint(Path(p)) for p in inputs},
        "versions": versions,
    }


def write_json(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
