"""Tests for scope training, evaluation, fine-tuning, and the ablation grid."""

import json
import logging

import numpy as np
import pytest

from glyconet.domain import AgeGroup, get_class_set
from glyconet.errors import DataError
from glyconet.experiments import (
    TrainConfig,
    ablation_config,
    age_scope_config,
    compare_scopes,
    evaluate_scope,
    fine_tune_subject,
    population_config,
    risk_matrix,
    run_ablation,
    run_manifest,
    train_classifier,
    train_scope,
    windows_for_cohort,
    write_json,
)
from glyconet.ingestion import Cohort
from glyconet.labeling import assign_classes
from glyconet.synth import (
    SynthConfig,
    config_with_profiles,
    generate_cohort,
    learnable_profiles,
)
from glyconet.windowing import SplitPlan, make_windows, select_test_subjects

CLASS_SET = get_class_set("II")
TINY = TrainConfig(batch_size=64, epochs=3, lr=1e-3, channels=(4, 8, 4),
                   kernels=(3, 3, 3), seed=5)


@pytest.fixture(scope="module")
def tiny_cohort():
    cfg = config_with_profiles(
        SynthConfig(seed=77, subjects_per_group=2, days=5, dropout_gaps_per_day=0.0),
        learnable_profiles())
    series, subjects, _ = generate_cohort(cfg)
    labels = {sid: assign_classes(s, CLASS_SET) for sid, s in series.items()}
    return Cohort(series, subjects, labels, {"rate_minutes": 5})


@pytest.fixture(scope="module")
def tiny_windows(tiny_cohort):
    return windows_for_cohort(tiny_cohort, CLASS_SET, 30)


@pytest.fixture(scope="module")
def tiny_plan(tiny_cohort, tiny_windows):
    groups = {sid: sub.age_group for sid, sub in tiny_cohort.subjects_by_id.items()}
    counts = {sid: len(ws) for sid, ws in tiny_windows.items()}
    return select_test_subjects(groups, counts, n_per_group=1)


@pytest.fixture(scope="module")
def trained_global(tiny_cohort, tiny_windows, tiny_plan):
    groups = {sid: sub.age_group for sid, sub in tiny_cohort.subjects_by_id.items()}
    return train_scope("global", tiny_windows, tiny_plan, groups,
                       CLASS_SET.n_classes, TINY)


def test_train_classifier_guards():
    with pytest.raises(DataError, match="no training windows"):
        train_classifier(np.empty((0, 7)), np.empty(0, np.int64), 4, TINY)
    with pytest.raises(DataError, match="do not align"):
        train_classifier(np.zeros((3, 7)), np.zeros(2, np.int64), 4, TINY)
    with pytest.raises(DataError, match="filter risk windows"):
        train_classifier(np.zeros((3, 7)), np.array([0, 1, -1]), 4, TINY)


def test_train_classifier_rejects_mismatched_warm_start(trained_global):
    model, _ = trained_global
    bad_feats = np.random.default_rng(0).uniform(0, 1, size=(8, model.config.input_len + 2))
    with pytest.raises(DataError, match="geometry"):
        train_classifier(bad_feats, np.zeros(8, np.int64), CLASS_SET.n_classes,
                         TINY, model=model)


def test_risk_matrix_drops_sentinel_labels(tiny_windows):
    sets = list(tiny_windows.values())
    feats, labs = risk_matrix(sets, CLASS_SET.n_classes)
    total = sum(len(ws) for ws in sets)
    n_risk = sum(int(((ws.labels >= 0) & (ws.labels < CLASS_SET.n_classes)).sum())
                 for ws in sets)
    assert labs.size == n_risk < total
    assert feats.shape == (n_risk, sets[0].window_len)
    assert labs.min() >= 0 and labs.max() < CLASS_SET.n_classes


def test_windows_for_cohort_requires_labels(tiny_cohort):
    unlabeled = Cohort(tiny_cohort.series_by_id, tiny_cohort.subjects_by_id,
                       {}, tiny_cohort.manifest)
    with pytest.raises(DataError, match="labeling step"):
        windows_for_cohort(unlabeled, CLASS_SET, 30)


def test_train_scope_produces_scorable_report(trained_global, tiny_plan):
    model, report = trained_global
    assert report.scope == "global"
    assert sorted(report.train_subjects) == sorted(tiny_plan.train_ids)
    assert report.n_train_windows > 0
    assert len(report.history) == TINY.epochs
    assert 0.0 <= report.overall.macro_recall <= 1.0
    assert set(report.per_subject) == set(tiny_plan.test_ids)
    doc = report.to_dict()
    assert set(doc) == {"history", "n_train_windows", "overall", "per_group",
                        "per_subject", "scope", "train_subjects"}
    json.dumps(doc)  # must be serializable as-is


def test_train_scope_rejects_leaky_plan(tiny_cohort, tiny_windows, tiny_plan):
    groups = {sid: sub.age_group for sid, sub in tiny_cohort.subjects_by_id.items()}
    leaky = SplitPlan(tiny_plan.test_by_group,
                      tiny_plan.train_ids + [tiny_plan.test_ids[0]])
    with pytest.raises(DataError, match="appear in the training scope"):
        train_scope("global", tiny_windows, leaky, groups, CLASS_SET.n_classes, TINY)


def test_age_scope_trains_only_on_its_group(tiny_cohort, tiny_windows, tiny_plan):
    groups = {sid: sub.age_group for sid, sub in tiny_cohort.subjects_by_id.items()}
    scope = AgeGroup.G0_13.value
    model, report = train_scope(scope, tiny_windows, tiny_plan, groups,
                                CLASS_SET.n_classes, TINY)
    assert all(groups[sid] == AgeGroup.G0_13 for sid in report.train_subjects)
    assert set(report.per_group) == {scope}
    assert all(rec["group"] == scope for rec in report.per_subject.values())


def test_evaluate_scope_needs_scorable_subjects(trained_global, tiny_plan):
    model, _ = trained_global
    with pytest.raises(DataError, match="no test subject"):
        evaluate_scope(model, "global", {}, tiny_plan, CLASS_SET.n_classes)


def test_evaluate_scope_skips_windowless_subject(trained_global, tiny_windows,
                                                 tiny_plan, caplog):
    model, _ = trained_global
    partial = {sid: ws for sid, ws in tiny_windows.items()
               if sid != tiny_plan.test_ids[0]}
    with caplog.at_level(logging.WARNING, logger="glyconet"):
        _, _, per_subject = evaluate_scope(model, "global", partial, tiny_plan,
                                           CLASS_SET.n_classes)
    assert tiny_plan.test_ids[0] not in per_subject
    assert "skipped" in caplog.text


def test_fine_tune_returns_none_for_short_history(trained_global, tiny_windows,
                                                  tiny_plan):
    model, _ = trained_global
    sid = tiny_plan.test_ids[0]
    stub = tiny_windows[sid].select(slice(0, 5))
    assert fine_tune_subject(model, stub, CLASS_SET.n_classes, TINY) is None


def test_fine_tune_reports_before_and_after(trained_global, tiny_windows, tiny_plan):
    model, _ = trained_global
    sid = tiny_plan.test_ids[0]
    result = fine_tune_subject(model, tiny_windows[sid], CLASS_SET.n_classes, TINY)
    assert result is not None
    tuned, report = result
    assert set(report) == {"after", "before", "history", "n_personal_train",
                           "n_personal_test"}
    assert report["n_personal_train"] > 0 and report["n_personal_test"] > 0
    assert 0.0 <= report["after"]["macro_recall"] <= 1.0
    # the population model must not have been mutated in place
    changed = any(not np.array_equal(tuned.params[k], model.params[k])
                  for k in model.params)
    assert changed


def test_compare_scopes_joins_matching_reports(tiny_cohort, tiny_windows,
                                               tiny_plan, trained_global):
    groups = {sid: sub.age_group for sid, sub in tiny_cohort.subjects_by_id.items()}
    _, global_report = trained_global
    docs = []
    for group in (AgeGroup.G0_13, AgeGroup.G14_20):
        _, rep = train_scope(group.value, tiny_windows, tiny_plan, groups,
                             CLASS_SET.n_classes, TINY)
        docs.append(rep.to_dict())
    table = compare_scopes(global_report.to_dict(), docs)
    assert [row["age_group"] for row in table["groups"]] == ["0-13", "14-20"]
    for row in table["groups"]:
        assert row["aspb_minus_global"] == pytest.approx(
            row["aspb_macro_recall"] - row["global_macro_recall"])
    assert "global" in table["scope_extremes"]
    best = table["scope_extremes"]["global"]["best_subject"]
    worst = table["scope_extremes"]["global"]["worst_subject"]
    assert best["macro_recall"] >= worst["macro_recall"]


def test_compare_scopes_validates_inputs(trained_global):
    _, global_report = trained_global
    gdoc = global_report.to_dict()
    with pytest.raises(DataError, match="global-scope"):
        compare_scopes({**gdoc, "scope": "0-13"}, [])
    stray = {**gdoc, "scope": "0-13"}
    with pytest.raises(DataError, match="lacks metrics"):
        compare_scopes(gdoc, [{**stray, "per_group": {}}])
    subset = dict(list(gdoc["per_subject"].items())[:1])
    with pytest.raises(DataError, match="differ between runs"):
        compare_scopes(gdoc, [{**stray,
                               "per_group": {"0-13": gdoc["per_group"]["0-13"]},
                               "per_subject": subset}])


def test_run_ablation_fills_every_cell(tiny_cohort):
    cells = run_ablation(tiny_cohort.series_by_id,
                         [get_class_set("II")], [30, 60],
                         ablation_config(epochs=2, channels=(4, 8, 4),
                                         kernels=(3, 3, 3), batch_size=64),
                         seeds=(1, 2), subject_fraction=0.5)
    assert [(c.class_set_key, c.isl_minutes) for c in cells] == [("II", 30), ("II", 60)]
    for cell in cells:
        assert cell.error is None
        assert sorted(cell.per_seed) == [1, 2]
        assert cell.mean_macro_recall == pytest.approx(
            np.mean(list(cell.per_seed.values())))
        doc = cell.to_dict()
        assert set(doc["per_seed"]) == {"1", "2"}


def test_run_ablation_needs_two_subjects():
    with pytest.raises(DataError, match="at least two"):
        run_ablation({}, [CLASS_SET], [30], ablation_config())


def test_config_factories_set_documented_batch_sizes():
    assert population_config().batch_size == 512
    assert age_scope_config().batch_size == 264
    assert ablation_config().batch_size == 128
    assert ablation_config().epochs == 20
    assert population_config(epochs=7).epochs == 7


def test_run_manifest_is_timestamp_free_and_fingerprints_inputs(tmp_path):
    data = tmp_path / "blob.json"
    data.write_text("{}\n")
    doc = run_manifest("train", {"seed": 48, "backend": None}, [data])
    assert set(doc) == {"backend", "command", "config", "inputs", "versions"}
    assert str(data) in doc["inputs"]
    assert len(doc["inputs"][str(data)]) == 64
    def keys_of(node):
        if isinstance(node, dict):
            for k, v in node.items():
                yield k
                yield from keys_of(v)

    vocabulary = keys_of({k: v for k, v in doc.items() if k != "inputs"})
    assert not [k for k in vocabulary if "time" in k.lower() or "date" in k.lower()]
    again = run_manifest("train", {"seed": 48, "backend": None}, [data])
    assert json.dumps(doc, sort_keys=True) == json.dumps(again, sort_keys=True)


def test_write_json_emits_stable_bytes(tmp_path):
    doc = {"b": 1, "a": {"z": [1.5, 2.0], "y": None}}
    p1, p2 = tmp_path / "one.json", tmp_path / "two.json"
    write_json(p1, doc)
    write_json(p2, {"a": {"y": None, "z": [1.5, 2.0]}, "b": 1})
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_bytes().endswith(b"\n")
