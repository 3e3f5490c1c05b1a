"""Data backbone: patient records, the digital cohort, and retraining.

Records are append-only audit logs: committed runs and completed journeys are
never mutated, and every file is written canonically (sorted keys, compact,
trailing newline) so independently produced replays compare byte for byte.
Cohort completion turns each stored model prediction into a performance
counter; retraining converts those counters into new fusion weights inside a
fresh registry version, while twins pinned to older versions replay
unchanged.

Persistence is a single directory::

    <root>/patients/<id>.json
    <root>/cohort/ground_truth.json
    <root>/cohort/performance.json
    <root>/registry/v<N>.json

Lifecycle steps (committing runs, archiving completed journeys, retraining)
are explicit API/CLI actions, not timers; scheduling belongs to deployment.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .builder import TwinState, state_snapshot
from .engine import RunReport
from .errors import (
    AlreadyCompleted,
    EventSequenceGap,
    InsufficientData,
    JourneyCompleted,
    UnknownAttribute,
)
from .fusion import ModelPerformance
from .registry import (
    AttributeDescriptor,
    FusionConfig,
    FusionMode,
    ModelKind,
    Registry,
    TrainedFusion,
    WeightingRule,
    load_registry,
    serialize_registry,
    update_registry,
)
from .serialize import canonical_json, decode_value, encode_value
from .values import SURVIVAL_KINDS, Value, ValueKind, value_conforms


@dataclass(frozen=True)
class PatientRecord:
    patient: str
    registry_version: int
    journey_status: str = "active"          # active | completed
    runs: tuple[dict, ...] = ()
    timelines: dict[str, list] = field(default_factory=dict)
    state: dict = field(default_factory=dict)

    @property
    def active(self) -> bool:
        return self.journey_status == "active"

    def last_event_seq(self) -> int:
        return self.runs[-1]["event_seq"] if self.runs else 0

    def to_dict(self) -> dict:
        return {
            "patient": self.patient,
            "registry_version": self.registry_version,
            "journey_status": self.journey_status,
            "runs": list(self.runs),
            "timelines": self.timelines,
            "state": self.state,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PatientRecord":
        return cls(
            patient=obj["patient"],
            registry_version=obj["registry_version"],
            journey_status=obj["journey_status"],
            runs=tuple(obj["runs"]),
            timelines=obj["timelines"],
            state=obj["state"],
        )


def commit_run(record: PatientRecord, report: RunReport,
               snapshot: dict) -> PatientRecord:
    """Append one run and extend the attribute timelines.

    Runs are persisted without wall time so replays stay byte-reproducible.
    """
    if not record.active:
        raise JourneyCompleted(f"patient {record.patient} journey already completed")
    expected = record.last_event_seq() + 1
    if report.event_seq != expected:
        raise EventSequenceGap(
            f"expected event_seq {expected}, got {report.event_seq}")
    timelines = {attr: list(entries) for attr, entries in record.timelines.items()}
    for attr, entry in sorted(report.updates.items()):
        timelines.setdefault(attr, []).append(entry)
    return replace(record,
                   runs=record.runs + (report.to_dict(include_wall_time=False),),
                   timelines=timelines,
                   state=snapshot)


@dataclass
class DigitalCohort:
    """Completed journeys with ground truth and model performance counters."""

    ground_truth: dict[str, dict[str, dict]] = field(default_factory=dict)
    performance: dict[str, dict[str, ModelPerformance]] = field(default_factory=dict)
    records: dict[str, PatientRecord] = field(default_factory=dict)

    def stats(self, model_id: str, attribute_id: str) -> ModelPerformance:
        return self.performance.get(model_id, {}).get(
            attribute_id, ModelPerformance(model_id, attribute_id))


def cohort_stats(cohort: DigitalCohort, model_id: str,
                 attribute_id: str) -> ModelPerformance:
    return cohort.stats(model_id, attribute_id)


def prediction_correct(prediction: Value, label: Value,
                       descriptor: AttributeDescriptor) -> bool | None:
    """Correctness rule for performance counters.

    Discrete kinds need exact label agreement (probabilities thresholded),
    continuous kinds a tolerance band scaled from the plausibility range.
    Survival values have no single-number truth here and are skipped (None).
    """
    threshold = descriptor.fusion.decision_threshold
    if prediction.kind in SURVIVAL_KINDS or label.kind in SURVIVAL_KINDS:
        return None
    if label.kind is ValueKind.BOOLEAN:
        if prediction.kind is ValueKind.BOOLEAN:
            return prediction.flag == label.flag
        if prediction.kind is ValueKind.PROBABILITY:
            return (prediction.number >= threshold) == label.flag
        return None
    if label.kind is ValueKind.PROBABILITY and prediction.kind is ValueKind.PROBABILITY:
        return (prediction.number >= threshold) == (label.number >= threshold)
    if label.kind is ValueKind.CATEGORICAL and prediction.kind is ValueKind.CATEGORICAL:
        return prediction.top_label() == label.top_label()
    if label.kind is ValueKind.CONTINUOUS and prediction.kind is ValueKind.CONTINUOUS:
        if descriptor.plausibility_range is not None:
            lo, hi = descriptor.plausibility_range
            band = descriptor.fusion.accuracy_tolerance * (hi - lo)
        else:
            band = descriptor.fusion.accuracy_tolerance * max(1.0, abs(label.number))
        return abs(prediction.number - label.number) <= band
    return None


def label_conforms(label: Value, descriptor: AttributeDescriptor) -> None:
    # Probability attributes are predictions of an event; their ground truth
    # is the observed boolean outcome, which the strict event rule rejects.
    if (descriptor.value_kind is ValueKind.PROBABILITY
            and label.kind is ValueKind.BOOLEAN):
        return
    value_conforms(label, descriptor)


def complete_journey(cohort: DigitalCohort, record: PatientRecord,
                     labels: Mapping[str, Value],
                     registry: Registry) -> tuple[DigitalCohort, PatientRecord]:
    """Freeze a journey, store ground truth, update performance counters."""
    if not record.active:
        raise AlreadyCompleted(f"patient {record.patient} already completed")
    for attr, label in labels.items():
        descriptor = registry.attributes.get(attr)
        if descriptor is None:
            raise UnknownAttribute(f"label for undeclared attribute {attr!r}")
        label_conforms(label, descriptor)

    frozen = replace(record, journey_status="completed")
    ground_truth = {p: dict(v) for p, v in cohort.ground_truth.items()}
    ground_truth[record.patient] = {attr: encode_value(label)
                                    for attr, label in sorted(labels.items())}
    performance = {m: dict(attrs) for m, attrs in cohort.performance.items()}
    for attr, label in sorted(labels.items()):
        descriptor = registry.attributes[attr]
        proposals = record.state.get("attributes", {}).get(attr, {}).get("proposals", {})
        for model_id, proposal in sorted(proposals.items()):
            prediction = decode_value(proposal["value"])
            verdict = prediction_correct(prediction, label, descriptor)
            if verdict is None:
                continue
            prev = performance.get(model_id, {}).get(
                attr, ModelPerformance(model_id, attr))
            sq = prev.sum_sq_error
            if (prediction.kind is ValueKind.CONTINUOUS
                    and label.kind is ValueKind.CONTINUOUS):
                sq += (prediction.number - label.number) ** 2
            performance.setdefault(model_id, {})[attr] = ModelPerformance(
                model_id, attr,
                n_evaluated=prev.n_evaluated + 1,
                n_correct=prev.n_correct + (1 if verdict else 0),
                sum_sq_error=sq)
    records = dict(cohort.records)
    records[record.patient] = frozen
    return DigitalCohort(ground_truth, performance, records), frozen


def _logistic_rows(cohort: DigitalCohort, attr: str, informing: list[str],
                   descriptor: AttributeDescriptor) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    targets = []
    threshold = descriptor.fusion.decision_threshold
    for patient, labels in sorted(cohort.ground_truth.items()):
        if attr not in labels:
            continue
        record = cohort.records.get(patient)
        if record is None:
            continue
        proposals = record.state.get("attributes", {}).get(attr, {}).get("proposals", {})
        if any(m not in proposals for m in informing):
            continue  # incomplete rows are dropped rather than imputed
        features = []
        usable = True
        for m in informing:
            value = decode_value(proposals[m]["value"])
            if value.kind not in (ValueKind.PROBABILITY, ValueKind.CONTINUOUS):
                usable = False
                break
            features.append(value.number)
        if not usable:
            continue
        label = decode_value(labels[attr])
        if label.kind is ValueKind.BOOLEAN:
            y = 1.0 if label.flag else 0.0
        elif label.kind is ValueKind.PROBABILITY:
            y = 1.0 if label.number >= threshold else 0.0
        else:
            continue
        rows.append(features)
        targets.append(y)
    if not rows:
        return np.empty((0, len(informing))), np.empty(0)
    return np.asarray(rows, dtype=float), np.asarray(targets, dtype=float)


def fit_logistic(features: np.ndarray, targets: np.ndarray,
                 max_iter: int = 1000, tol: float = 1e-8,
                 learning_rate: float = 1.0) -> tuple[float, np.ndarray]:
    """Deterministic maximum-likelihood fit: zero init, fixed-step gradient
    ascent, iteration cap 1000, convergence 1e-8 on the gradient norm."""
    n, k = features.shape
    weights = np.zeros(k)
    bias = 0.0
    for _ in range(max_iter):
        z = features @ weights + bias
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
        grad_w = features.T @ (targets - p) / n
        grad_b = float(np.mean(targets - p))
        largest = max(float(np.max(np.abs(grad_w))) if k else 0.0, abs(grad_b))
        if largest < tol:
            break
        weights = weights + learning_rate * grad_w
        bias = bias + learning_rate * grad_b
    return bias, weights


def retrain(cohort: DigitalCohort, registry: Registry) -> Registry:
    """Updater for the declarative layer: refit fusion weights from ground truth.

    Accuracy-weighted fusions receive Laplace-smoothed accuracies; logistic
    fusions are refit by maximum likelihood over stored (prediction, label)
    rows.  Returns a new registry version; the input snapshot stays valid.
    """
    updated: list[AttributeDescriptor] = []
    for attr, descriptor in registry.attributes.items():
        informing = sorted(
            m.id for m in registry.models.values()
            if attr in m.outputs and m.kind is not ModelKind.EXTERNAL_INPUT)
        if not informing:
            continue
        cfg = descriptor.fusion
        if cfg.weighting_rule is WeightingRule.ACCURACY:
            stats = [cohort.stats(m, attr) for m in informing]
            if not any(s.n_evaluated for s in stats):
                continue
            weights = tuple((s.model_id, s.smoothed_accuracy) for s in stats)
            updated.append(replace(descriptor, fusion=replace(cfg, weights=weights)))
        elif cfg.mode is FusionMode.LOGISTIC_FUSION:
            features, targets = _logistic_rows(cohort, attr, informing, descriptor)
            if len(targets) == 0:
                continue
            bias, weights = fit_logistic(features, targets)
            trained = TrainedFusion(
                bias=float(bias),
                weights=tuple((m, float(w)) for m, w in zip(informing, weights)))
            updated.append(replace(descriptor, fusion=replace(cfg, trained=trained)))
    if not updated:
        raise InsufficientData(
            "no completed, labeled journeys cover any retrainable fused attribute")
    return update_registry(registry, attributes=updated)


class Store:
    """Single-directory persistence with canonical, atomically written files."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        for sub in ("patients", "cohort", "registry"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    # -- low-level ---------------------------------------------------------

    def _write(self, path: Path, payload) -> None:
        tmp = path.with_suffix(path.suffix + ".tmp")
        data = canonical_json(payload)
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    def _read(self, path: Path):
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    # -- registry versions ---------------------------------------------------

    def registry_path(self, version: int) -> Path:
        return self.root / "registry" / f"v{version}.json"

    def save_registry(self, registry: Registry) -> Path:
        path = self.registry_path(registry.version)
        self._write(path, serialize_registry(registry))
        return path

    def load_registry_version(self, version: int) -> Registry:
        return load_registry(self._read(self.registry_path(version)))

    def latest_registry_version(self) -> int | None:
        versions = [int(p.stem[1:]) for p in (self.root / "registry").glob("v*.json")]
        return max(versions) if versions else None

    # -- patient records -----------------------------------------------------

    def record_path(self, patient: str) -> Path:
        return self.root / "patients" / f"{patient}.json"

    def has_record(self, patient: str) -> bool:
        return self.record_path(patient).exists()

    def save_record(self, record: PatientRecord) -> None:
        self._write(self.record_path(record.patient), record.to_dict())

    def load_record(self, patient: str) -> PatientRecord:
        return PatientRecord.from_dict(self._read(self.record_path(patient)))

    def create_record(self, twin: TwinState) -> PatientRecord:
        record = PatientRecord(patient=twin.patient_id,
                               registry_version=twin.graph.version,
                               state=state_snapshot(twin))
        self.save_record(record)
        return record

    def commit(self, record: PatientRecord, report: RunReport,
               twin: TwinState) -> PatientRecord:
        committed = commit_run(record, report, state_snapshot(twin))
        self.save_record(committed)
        return committed

    # -- cohort ----------------------------------------------------------------

    def load_cohort(self, include_records: bool = True) -> DigitalCohort:
        gt_path = self.root / "cohort" / "ground_truth.json"
        perf_path = self.root / "cohort" / "performance.json"
        ground_truth = self._read(gt_path) if gt_path.exists() else {}
        performance: dict[str, dict[str, ModelPerformance]] = {}
        if perf_path.exists():
            for model_id, attrs in self._read(perf_path).items():
                performance[model_id] = {
                    attr: ModelPerformance(
                        model_id, attr,
                        n_evaluated=entry["n_evaluated"],
                        n_correct=entry["n_correct"],
                        sum_sq_error=entry.get("sum_sq_error", 0.0))
                    for attr, entry in attrs.items()}
        records = {}
        if include_records:
            for path in sorted((self.root / "patients").glob("*.json")):
                record = PatientRecord.from_dict(self._read(path))
                if not record.active:
                    records[record.patient] = record
        return DigitalCohort(ground_truth, performance, records)

    def save_cohort(self, cohort: DigitalCohort) -> None:
        self._write(self.root / "cohort" / "ground_truth.json", cohort.ground_truth)
        perf = {
            model_id: {
                attr: {"n_evaluated": s.n_evaluated, "n_correct": s.n_correct,
                       "sum_sq_error": s.sum_sq_error}
                for attr, s in sorted(attrs.items())}
            for model_id, attrs in sorted(cohort.performance.items())}
        self._write(self.root / "cohort" / "performance.json", perf)
