from __future__ import annotations

import json
import random

import numpy as np
import pytest

from twingraph.backbone import (
    DigitalCohort,
    PatientRecord,
    Store,
    cohort_stats,
    commit_run,
    complete_journey,
    fit_logistic,
    prediction_correct,
    retrain,
)
from twingraph.builder import build_graph, state_snapshot
from twingraph.engine import ExternalEvent, ingest
from twingraph.errors import (
    AlreadyCompleted,
    EventSequenceGap,
    InsufficientData,
    JourneyCompleted,
)
from twingraph.journal import load_journal, replay_order
from twingraph.registry import load_registry
from twingraph.values import Value

from conftest import fixture_json


def two_model_registry():
    """Two probability models feeding one accuracy-weighted attribute."""
    return load_registry({
        "attributes": [
            {"id": "marker", "value_kind": "continuous", "unit": "",
             "range": [0, 1], "fusion": {"mode": "overwrite"}},
            {"id": "outcome", "value_kind": "probability", "unit": "",
             "range": [0, 1],
             "fusion": {"mode": "weighted_average", "weighting_rule": "accuracy"}},
        ],
        "models": [
            {"id": "m1", "kind": "logistic",
             "inputs": [{"attr": "marker", "required": True}],
             "outputs": ["outcome"],
             "params": {"weights": {"marker": 6.0}, "bias": -3.0},
             "phase": "observational"},
            {"id": "m2", "kind": "logistic",
             "inputs": [{"attr": "marker", "required": True}],
             "outputs": ["outcome"],
             "params": {"weights": {"marker": -6.0}, "bias": 3.0},
             "phase": "observational"},
        ],
        "version": 1,
    })


def run_patient(store, registry, patient, marker, label=None):
    twin = build_graph(registry, patient_id=patient)
    record = store.create_record(twin)
    report = ingest(twin, ExternalEvent("marker", Value.continuous(marker), "t1"))
    record = store.commit(record, report, twin)
    if label is not None:
        cohort = store.load_cohort()
        cohort, record = complete_journey(cohort, record,
                                          {"outcome": Value.boolean(label)}, registry)
        store.save_record(record)
        store.save_cohort(cohort)
    return record


class TestCommit:
    def test_first_run(self, tmp_path, prostate_registry):
        store = Store(tmp_path)
        twin = build_graph(prostate_registry, patient_id="p1")
        record = store.create_record(twin)
        report = ingest(twin, ExternalEvent("age", Value.continuous(65), "t1"))
        record = store.commit(record, report, twin)
        assert len(record.runs) == 1
        assert record.runs[0]["event_seq"] == 1
        assert "wall_time" not in record.runs[0]

    def test_event_sequence_gap(self, tmp_path, prostate_registry):
        store = Store(tmp_path)
        twin = build_graph(prostate_registry, patient_id="p1")
        record = store.create_record(twin)
        r1 = ingest(twin, ExternalEvent("age", Value.continuous(65), "t1"))
        r2 = ingest(twin, ExternalEvent("psa", Value.continuous(8.0), "t2"))
        with pytest.raises(EventSequenceGap):
            commit_run(record, r2, state_snapshot(twin))
        record = commit_run(record, r1, state_snapshot(twin))
        commit_run(record, r2, state_snapshot(twin))

    def test_completed_record_refuses_runs(self, tmp_path, prostate_registry):
        store = Store(tmp_path)
        twin = build_graph(prostate_registry, patient_id="p1")
        record = store.create_record(twin)
        cohort, record = complete_journey(store.load_cohort(), record, {},
                                          prostate_registry)
        report = ingest(twin, ExternalEvent("age", Value.continuous(65), "t1"))
        with pytest.raises(JourneyCompleted):
            commit_run(record, report, state_snapshot(twin))

    def test_prostate_journal_replay_counts(self, tmp_path, prostate_registry):
        store = Store(tmp_path)
        journal = load_journal(fixture_json("prostate_journal.json"),
                               prostate_registry)
        twin = build_graph(prostate_registry, patient_id=journal.patient)
        record = store.create_record(twin)
        for event in replay_order(journal):
            record = store.commit(record, ingest(twin, event), twin)
        assert len(record.runs) == 6
        assert len(record.timelines["high_gleason_score"]) == 2


class TestCompletion:
    def test_threshold_counting(self, tmp_path):
        registry = two_model_registry()
        store = Store(tmp_path)
        # marker 0.9: m1 predicts sigmoid(2.4)=0.92 (high), m2 sigmoid(-2.4)=0.08
        record = run_patient(store, registry, "p1", 0.9, label=True)
        cohort = store.load_cohort()
        assert cohort_stats(cohort, "m1", "outcome").n_correct == 1
        assert cohort_stats(cohort, "m2", "outcome").n_correct == 0
        assert cohort_stats(cohort, "m1", "outcome").n_evaluated == 1

    def test_completing_twice(self, tmp_path):
        registry = two_model_registry()
        store = Store(tmp_path)
        record = run_patient(store, registry, "p1", 0.9, label=True)
        with pytest.raises(AlreadyCompleted):
            complete_journey(store.load_cohort(), record,
                             {"outcome": Value.boolean(True)}, registry)

    def test_unpredicted_label_stored_without_counters(self, tmp_path):
        registry = two_model_registry()
        store = Store(tmp_path)
        twin = build_graph(registry, patient_id="p1")
        record = store.create_record(twin)
        cohort, record = complete_journey(
            store.load_cohort(), record, {"outcome": Value.boolean(True)}, registry)
        store.save_cohort(cohort)
        assert cohort.ground_truth["p1"]["outcome"] == {"kind": "boolean",
                                                        "value": True}
        assert cohort_stats(cohort, "m1", "outcome").n_evaluated == 0

    def test_continuous_tolerance_band(self):
        registry = load_registry({
            "attributes": [{"id": "x", "value_kind": "continuous", "unit": "",
                            "range": [0, 100], "fusion": {"mode": "overwrite"}}],
            "models": [], "version": 1})
        desc = registry.attributes["x"]
        assert prediction_correct(Value.continuous(55), Value.continuous(50), desc)
        assert not prediction_correct(Value.continuous(75), Value.continuous(50), desc)

    def test_survival_predictions_skipped(self, glioma_registry):
        desc = glioma_registry.attributes["survival"]
        verdict = prediction_correct(Value.survival_curve([(180, 0.7)]),
                                     Value.survival_curve([(180, 1.0)]), desc)
        assert verdict is None


class TestCohortStats:
    def test_unseen_model_gets_prior(self):
        cohort = DigitalCohort()
        stats = cohort_stats(cohort, "ghost", "outcome")
        assert (stats.n_evaluated, stats.n_correct) == (0, 0)
        assert stats.smoothed_accuracy == 0.5

    def test_single_correct(self, tmp_path):
        registry = two_model_registry()
        store = Store(tmp_path)
        run_patient(store, registry, "p1", 0.9, label=True)
        stats = cohort_stats(store.load_cohort(), "m1", "outcome")
        assert (stats.n_evaluated, stats.n_correct) == (1, 1)
        assert stats.smoothed_accuracy == pytest.approx(2 / 3, abs=1e-12)

    def test_eight_of_ten(self, tmp_path):
        registry = two_model_registry()
        store = Store(tmp_path)
        rng = random.Random(1)
        for i in range(10):
            marker = rng.uniform(0.6, 1.0)
            # m1 predicts True on these markers; flip 2 labels to make it wrong
            label = i >= 2
            run_patient(store, registry, f"p{i}", marker, label=label)
        stats = cohort_stats(store.load_cohort(), "m1", "outcome")
        assert (stats.n_evaluated, stats.n_correct) == (10, 8)
        assert stats.smoothed_accuracy == pytest.approx(0.75, abs=1e-12)


class TestRetrain:
    def test_smoothed_accuracy_weights(self, tmp_path):
        registry = two_model_registry()
        store = Store(tmp_path)
        rng = random.Random(2)
        # m1 correct 8/10, m2 correct 6/10: engineer markers and labels
        for i in range(10):
            high = i < 8
            marker = rng.uniform(0.6, 1.0) if True else 0.0
            # m1 says True always (marker high), m2 says False always.
            # label True for first 8 patients -> m1 correct 8, m2 correct 2...
            run_patient(store, registry, f"q{i}", marker, label=high)
        cohort = store.load_cohort()
        m1 = cohort_stats(cohort, "m1", "outcome")
        m2 = cohort_stats(cohort, "m2", "outcome")
        assert (m1.n_correct, m2.n_correct) == (8, 2)
        updated = retrain(cohort, registry)
        weights = updated.attributes["outcome"].fusion.weight_map()
        assert weights["m1"] == pytest.approx(9 / 12, abs=1e-12)
        assert weights["m2"] == pytest.approx(3 / 12, abs=1e-12)
        assert updated.version == registry.version + 1

    def test_empty_cohort(self):
        with pytest.raises(InsufficientData):
            retrain(DigitalCohort(), two_model_registry())

    def test_logistic_fit_separable_rows(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1, size=(30, 2))
        y = (x[:, 0] > 0.5).astype(float)
        bias, weights = fit_logistic(x, y)
        predictions = 1 / (1 + np.exp(-(x @ weights + bias))) >= 0.5
        assert np.all(predictions == y.astype(bool))

    def test_logistic_fusion_retrain(self, tmp_path):
        registry = load_registry({
            "attributes": [
                {"id": "marker", "value_kind": "continuous", "unit": "",
                 "range": [0, 1], "fusion": {"mode": "overwrite"}},
                {"id": "outcome", "value_kind": "probability", "unit": "",
                 "range": [0, 1], "fusion": {"mode": "logistic_fusion"}},
            ],
            "models": [
                {"id": "m1", "kind": "logistic",
                 "inputs": [{"attr": "marker", "required": True}],
                 "outputs": ["outcome"],
                 "params": {"weights": {"marker": 6.0}, "bias": -3.0},
                 "phase": "observational"},
                {"id": "m2", "kind": "logistic",
                 "inputs": [{"attr": "marker", "required": True}],
                 "outputs": ["outcome"],
                 "params": {"weights": {"marker": -6.0}, "bias": 3.0},
                 "phase": "observational"},
            ],
            "version": 1,
        })
        store = Store(tmp_path)
        rng = random.Random(4)
        for i in range(20):
            marker = rng.random()
            run_patient(store, registry, f"p{i}", marker, label=marker > 0.5)
        updated = retrain(store.load_cohort(), registry)
        trained = updated.attributes["outcome"].fusion.trained
        assert trained is not None
        # fitted parameters separate the training rows
        weight_map = trained.weight_map()
        correct = 0
        cohort = store.load_cohort()
        for patient, labels in cohort.ground_truth.items():
            proposals = cohort.records[patient].state["attributes"]["outcome"]["proposals"]
            z = trained.bias
            for mid, w in weight_map.items():
                z += w * proposals[mid]["value"]["value"]
            predicted = z >= 0
            actual = labels["outcome"]["value"]
            correct += predicted == actual
        assert correct == 20

    def test_append_only_and_replay_stability(self, tmp_path, prostate_registry):
        store = Store(tmp_path)
        journal = load_journal(fixture_json("prostate_journal.json"),
                               prostate_registry)

        def replay():
            twin = build_graph(prostate_registry, patient_id=journal.patient)
            record = PatientRecord(patient=journal.patient,
                                   registry_version=prostate_registry.version,
                                   state=state_snapshot(twin))
            for event in replay_order(journal):
                record = commit_run(record, ingest(twin, event),
                                    state_snapshot(twin))
            return record

        first = replay()
        store.save_record(first)
        bytes_before = store.record_path(journal.patient).read_bytes()

        # Retrain from an unrelated cohort; pinned version must replay the same.
        other_registry = two_model_registry()
        other_store = Store(tmp_path / "other")
        for i in range(5):
            run_patient(other_store, other_registry, f"p{i}", 0.9, label=True)
        updated = retrain(other_store.load_cohort(), other_registry)
        assert updated.version == 2

        again = replay()
        store.save_record(again)
        assert store.record_path(journal.patient).read_bytes() == bytes_before

    def test_counter_soundness_recompute(self, tmp_path):
        registry = two_model_registry()
        store = Store(tmp_path)
        rng = random.Random(9)
        for i in range(25):
            run_patient(store, registry, f"p{i}", rng.random(),
                        label=rng.random() < 0.5)
        cohort = store.load_cohort()
        # recompute counters from scratch out of the stored records
        recomputed: dict[tuple[str, str], list[int]] = {}
        for patient, labels in cohort.ground_truth.items():
            record = cohort.records[patient]
            for attr, raw_label in labels.items():
                desc = registry.attributes[attr]
                from twingraph.serialize import decode_value
                label = decode_value(raw_label)
                proposals = record.state["attributes"][attr]["proposals"]
                for mid, proposal in proposals.items():
                    verdict = prediction_correct(decode_value(proposal["value"]),
                                                 label, desc)
                    if verdict is None:
                        continue
                    cell = recomputed.setdefault((mid, attr), [0, 0])
                    cell[0] += 1
                    cell[1] += 1 if verdict else 0
        for (mid, attr), (n_eval, n_corr) in recomputed.items():
            stats = cohort_stats(cohort, mid, attr)
            assert (stats.n_evaluated, stats.n_correct) == (n_eval, n_corr)
