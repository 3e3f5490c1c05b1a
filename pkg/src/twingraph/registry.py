"""Declarative registry: attribute descriptors, model descriptors, fusion configs.

The registry is the single source from which patient graphs are built.  It is
loaded from a strict JSON document (unknown keys rejected), validated as a
whole (every issue reported, not just the first), and treated as an immutable
snapshot afterwards: updates produce a new registry with a bumped version
while existing twins keep the snapshot they were built with.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping

from .errors import RegistryValidationError, UnknownAttribute
from .values import ValueKind


class ModelKind(str, Enum):
    EXTERNAL_INPUT = "external_input"
    CONSTANT = "constant"
    TABLE = "table"
    LINEAR = "linear"
    LOGISTIC = "logistic"
    SURVIVAL_TABLE = "survival_table"
    COMMAND = "command"


class Phase(str, Enum):
    OBSERVATIONAL = "observational"
    ACTIVE = "active"
    MONITORING = "monitoring"


class FusionMode(str, Enum):
    OVERWRITE = "overwrite"
    WEIGHTED_AVERAGE = "weighted_average"
    MAJORITY_VOTE = "majority_vote"
    SURVIVAL_AGGREGATE = "survival_aggregate"
    LOGISTIC_FUSION = "logistic_fusion"


class WeightingRule(str, Enum):
    STATIC = "static"
    ACCURACY = "accuracy"
    ENTROPY = "entropy"


class ConflictPolicy(str, Enum):
    REFUSE_PROPAGATE = "refuse_propagate"
    PASS_BACK = "pass_back"


@dataclass(frozen=True)
class TrainedFusion:
    """Fitted logistic-fusion parameters, written by retraining."""

    bias: float
    weights: tuple[tuple[str, float], ...]

    def weight_map(self) -> dict[str, float]:
        return dict(self.weights)


@dataclass(frozen=True)
class FusionConfig:
    mode: FusionMode
    weights: tuple[tuple[str, float], ...] | None = None
    weighting_rule: WeightingRule = WeightingRule.STATIC
    conflict_policy: ConflictPolicy = ConflictPolicy.REFUSE_PROPAGATE
    horizon_days: int | None = None
    trained: TrainedFusion | None = None
    decision_threshold: float = 0.5
    accuracy_tolerance: float = 0.1

    def weight_map(self) -> dict[str, float] | None:
        return None if self.weights is None else dict(self.weights)


@dataclass(frozen=True)
class ModelInput:
    attribute: str
    required: bool = True


@dataclass(frozen=True)
class AttributeDescriptor:
    id: str
    value_kind: ValueKind
    fusion: FusionConfig
    display_name: str = ""
    unit: str = ""
    plausibility_range: tuple[float, float] | None = None
    labels: frozenset[str] | None = None

    def __post_init__(self):
        if not self.display_name:
            object.__setattr__(self, "display_name", self.id)


@dataclass(frozen=True)
class ModelDescriptor:
    id: str
    kind: ModelKind
    inputs: tuple[ModelInput, ...]
    outputs: tuple[str, ...]
    params: Mapping[str, Any] = field(default_factory=dict)
    phase: Phase = Phase.OBSERVATIONAL
    provenance_note: str = ""

    def input_ids(self) -> tuple[str, ...]:
        return tuple(i.attribute for i in self.inputs)

    def required_inputs(self) -> tuple[str, ...]:
        return tuple(i.attribute for i in self.inputs if i.required)


@dataclass(frozen=True)
class Registry:
    attributes: Mapping[str, AttributeDescriptor]
    models: Mapping[str, ModelDescriptor]
    version: int = 1


@dataclass(frozen=True)
class AttributeNeighborhood:
    """Derived view: who informs an attribute and whom it informs."""

    attribute: str
    informing: tuple[str, ...]
    informed: tuple[str, ...]


# ---------------------------------------------------------------------------
# loading / validation

_ATTR_KEYS = {"id", "value_kind", "unit", "range", "fusion", "display_name"}
_MODEL_KEYS = {"id", "kind", "inputs", "outputs", "params", "phase", "provenance_note"}
_FUSION_KEYS = {"mode", "weights", "weighting_rule", "conflict_policy", "horizon_days",
                "trained", "decision_threshold", "accuracy_tolerance"}
_INPUT_KEYS = {"attr", "required"}


class _Issues:
    def __init__(self):
        self.items: list[dict] = []

    def add(self, code: str, where: str, message: str):
        self.items.append({"code": code, "where": where, "message": f"{where}: {message}"})

    def raise_if_any(self):
        if self.items:
            raise RegistryValidationError(self.items)


def load_registry(document: str | bytes | dict) -> Registry:
    """Parse + validate a registry document, reporting every issue at once."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise RegistryValidationError(
                [{"code": "malformed_document", "where": "$", "message": str(exc)}])
    issues = _Issues()
    if not isinstance(document, dict):
        issues.add("malformed_document", "$", "top level must be an object")
        issues.raise_if_any()
    unknown = set(document) - {"attributes", "models", "version"}
    if unknown:
        issues.add("unknown_key", "$", f"unknown top-level keys {sorted(unknown)}")

    attributes: dict[str, AttributeDescriptor] = {}
    for entry in document.get("attributes", []):
        desc = _parse_attribute(entry, issues)
        if desc is None:
            continue
        if desc.id in attributes:
            issues.add("duplicate_id", desc.id, "attribute id declared twice")
            continue
        attributes[desc.id] = desc

    models: dict[str, ModelDescriptor] = {}
    for entry in document.get("models", []):
        desc = _parse_model(entry, issues)
        if desc is None:
            continue
        if desc.id in models:
            issues.add("duplicate_id", desc.id, "model id declared twice")
            continue
        models[desc.id] = desc

    version = document.get("version", 1)
    if not isinstance(version, int) or version < 1:
        issues.add("malformed_document", "version", "version must be a positive integer")
        version = 1

    registry = Registry(
        attributes=dict(sorted(attributes.items())),
        models=dict(sorted(models.items())),
        version=version,
    )
    _validate_cross_references(registry, issues)
    issues.raise_if_any()
    return registry


def _parse_attribute(entry: Any, issues: _Issues) -> AttributeDescriptor | None:
    if not isinstance(entry, dict):
        issues.add("malformed_attribute", "attributes", f"expected object, got {entry!r}")
        return None
    where = str(entry.get("id", "<missing id>"))
    unknown = set(entry) - _ATTR_KEYS
    if unknown:
        issues.add("unknown_key", where, f"unknown attribute keys {sorted(unknown)}")
        return None
    missing = {"id", "value_kind", "fusion"} - set(entry)
    if missing:
        issues.add("malformed_attribute", where, f"missing keys {sorted(missing)}")
        return None
    try:
        kind = ValueKind(entry["value_kind"])
    except ValueError:
        issues.add("malformed_attribute", where, f"unknown value_kind {entry['value_kind']!r}")
        return None

    numeric_range = None
    labels = None
    rng = entry.get("range")
    if rng is not None:
        if (isinstance(rng, list) and len(rng) == 2
                and all(isinstance(x, (int, float)) for x in rng)):
            numeric_range = (float(rng[0]), float(rng[1]))
            if numeric_range[0] > numeric_range[1]:
                issues.add("malformed_attribute", where, "range min exceeds max")
                return None
        elif isinstance(rng, list) and all(isinstance(x, str) for x in rng):
            labels = frozenset(rng)
        else:
            issues.add("malformed_attribute", where, f"unintelligible range {rng!r}")
            return None

    fusion = _parse_fusion(entry["fusion"], where, issues)
    if fusion is None:
        return None
    return AttributeDescriptor(
        id=str(entry["id"]),
        value_kind=kind,
        fusion=fusion,
        display_name=entry.get("display_name", ""),
        unit=entry.get("unit", ""),
        plausibility_range=numeric_range,
        labels=labels,
    )


def _parse_fusion(entry: Any, where: str, issues: _Issues) -> FusionConfig | None:
    if not isinstance(entry, dict):
        issues.add("malformed_fusion_config", where, "fusion must be an object")
        return None
    unknown = set(entry) - _FUSION_KEYS
    if unknown:
        issues.add("unknown_key", where, f"unknown fusion keys {sorted(unknown)}")
        return None
    try:
        mode = FusionMode(entry.get("mode", ""))
    except ValueError:
        issues.add("malformed_fusion_config", where, f"unknown fusion mode {entry.get('mode')!r}")
        return None
    weights = None
    if entry.get("weights") is not None:
        raw = entry["weights"]
        if not isinstance(raw, dict) or not all(
                isinstance(v, (int, float)) for v in raw.values()):
            issues.add("malformed_fusion_config", where, "weights must map model id to number")
            return None
        if any(v < 0 for v in raw.values()):
            issues.add("malformed_fusion_config", where, "weights must be non-negative")
            return None
        weights = tuple(sorted((str(k), float(v)) for k, v in raw.items()))
    try:
        rule = WeightingRule(entry.get("weighting_rule", "static"))
        policy = ConflictPolicy(entry.get("conflict_policy", "refuse_propagate"))
    except ValueError as exc:
        issues.add("malformed_fusion_config", where, str(exc))
        return None
    horizon = entry.get("horizon_days")
    if horizon is not None and (not isinstance(horizon, int) or horizon <= 0):
        issues.add("malformed_fusion_config", where, "horizon_days must be a positive integer")
        return None
    if mode is FusionMode.SURVIVAL_AGGREGATE and horizon is None:
        issues.add("malformed_fusion_config", where,
                   "survival_aggregate fusion needs a default horizon_days")
        return None
    trained = None
    if entry.get("trained") is not None:
        raw = entry["trained"]
        if (not isinstance(raw, dict) or "bias" not in raw or "weights" not in raw
                or not isinstance(raw["weights"], dict)):
            issues.add("malformed_fusion_config", where, "trained needs bias and weights")
            return None
        trained = TrainedFusion(
            bias=float(raw["bias"]),
            weights=tuple(sorted((str(k), float(v)) for k, v in raw["weights"].items())))
    return FusionConfig(
        mode=mode,
        weights=weights,
        weighting_rule=rule,
        conflict_policy=policy,
        horizon_days=horizon,
        trained=trained,
        decision_threshold=float(entry.get("decision_threshold", 0.5)),
        accuracy_tolerance=float(entry.get("accuracy_tolerance", 0.1)),
    )


def _parse_model(entry: Any, issues: _Issues) -> ModelDescriptor | None:
    if not isinstance(entry, dict):
        issues.add("malformed_model", "models", f"expected object, got {entry!r}")
        return None
    where = str(entry.get("id", "<missing id>"))
    unknown = set(entry) - _MODEL_KEYS
    if unknown:
        issues.add("unknown_key", where, f"unknown model keys {sorted(unknown)}")
        return None
    missing = {"id", "kind", "outputs"} - set(entry)
    if missing:
        issues.add("malformed_model", where, f"missing keys {sorted(missing)}")
        return None
    try:
        kind = ModelKind(entry["kind"])
        phase = Phase(entry.get("phase", "observational"))
    except ValueError as exc:
        issues.add("malformed_model", where, str(exc))
        return None
    inputs = []
    for raw in entry.get("inputs", []):
        if not isinstance(raw, dict) or "attr" not in raw or set(raw) - _INPUT_KEYS:
            issues.add("malformed_model", where, f"unintelligible input {raw!r}")
            return None
        inputs.append(ModelInput(str(raw["attr"]), bool(raw.get("required", True))))
    outputs = tuple(str(o) for o in entry["outputs"])
    if kind is ModelKind.EXTERNAL_INPUT:
        if inputs or len(outputs) != 1:
            issues.add("malformed_model", where,
                       "external input models take no inputs and emit exactly one output")
            return None
    elif not outputs:
        issues.add("malformed_model", where, "model outputs must be non-empty")
        return None
    params = entry.get("params", {})
    if kind is ModelKind.COMMAND and not (
            isinstance(params.get("argv"), list) and params.get("format_version")):
        issues.add("malformed_model", where,
                   "command models must declare argv and format_version in params")
        return None
    return ModelDescriptor(
        id=str(entry["id"]),
        kind=kind,
        inputs=tuple(inputs),
        outputs=outputs,
        params=params,
        phase=phase,
        provenance_note=entry.get("provenance_note", ""),
    )


def _validate_cross_references(registry: Registry, issues: _Issues) -> None:
    for model in registry.models.values():
        seen_inputs = set()
        for attr in model.input_ids():
            if attr not in registry.attributes:
                issues.add("unknown_attribute_ref", model.id,
                           f"input references undeclared attribute {attr!r}")
            if attr in seen_inputs:
                issues.add("malformed_model", model.id, f"input {attr!r} listed twice")
            seen_inputs.add(attr)
        for attr in model.outputs:
            if attr not in registry.attributes:
                issues.add("unknown_attribute_ref", model.id,
                           f"output references undeclared attribute {attr!r}")
            if attr in seen_inputs:
                issues.add("self_loop_model", model.id,
                           f"attribute {attr!r} appears in both inputs and outputs")
    # Static weighted averages must name every non-external informing model;
    # accuracy/entropy rules derive their weights instead.
    for attr_id, desc in registry.attributes.items():
        cfg = desc.fusion
        if (cfg.mode is FusionMode.WEIGHTED_AVERAGE
                and cfg.weighting_rule is WeightingRule.STATIC):
            informing = [m.id for m in registry.models.values()
                         if attr_id in m.outputs and m.kind is not ModelKind.EXTERNAL_INPUT]
            declared = set() if cfg.weights is None else {w for w, _ in cfg.weights}
            missing = sorted(set(informing) - declared)
            if missing:
                issues.add("malformed_fusion_config", attr_id,
                           f"static weights missing informing models {missing}")


def serialize_registry(registry: Registry) -> dict:
    """Inverse of load_registry; canonical ordering by id."""
    attributes = []
    for desc in registry.attributes.values():
        entry: dict[str, Any] = {
            "id": desc.id,
            "value_kind": desc.value_kind.value,
            "unit": desc.unit,
            "fusion": _serialize_fusion(desc.fusion),
        }
        if desc.display_name != desc.id:
            entry["display_name"] = desc.display_name
        if desc.plausibility_range is not None:
            entry["range"] = list(desc.plausibility_range)
        elif desc.labels is not None:
            entry["range"] = sorted(desc.labels)
        attributes.append(entry)
    models = []
    for model in registry.models.values():
        entry = {
            "id": model.id,
            "kind": model.kind.value,
            "inputs": [{"attr": i.attribute, "required": i.required} for i in model.inputs],
            "outputs": list(model.outputs),
            "params": model.params,
            "phase": model.phase.value,
        }
        if model.provenance_note:
            entry["provenance_note"] = model.provenance_note
        models.append(entry)
    return {"attributes": attributes, "models": models, "version": registry.version}


def _serialize_fusion(cfg: FusionConfig) -> dict:
    out: dict[str, Any] = {"mode": cfg.mode.value}
    if cfg.weights is not None:
        out["weights"] = dict(cfg.weights)
    if cfg.weighting_rule is not WeightingRule.STATIC:
        out["weighting_rule"] = cfg.weighting_rule.value
    if cfg.conflict_policy is not ConflictPolicy.REFUSE_PROPAGATE:
        out["conflict_policy"] = cfg.conflict_policy.value
    if cfg.horizon_days is not None:
        out["horizon_days"] = cfg.horizon_days
    if cfg.trained is not None:
        out["trained"] = {"bias": cfg.trained.bias, "weights": dict(cfg.trained.weights)}
    if cfg.decision_threshold != 0.5:
        out["decision_threshold"] = cfg.decision_threshold
    if cfg.accuracy_tolerance != 0.1:
        out["accuracy_tolerance"] = cfg.accuracy_tolerance
    return out


def neighborhood(registry: Registry, attr: str) -> AttributeNeighborhood:
    """Informing/informed model rosters for one attribute, id-ascending."""
    if attr not in registry.attributes:
        raise UnknownAttribute(f"attribute {attr!r} not declared in registry")
    informing = sorted(m.id for m in registry.models.values() if attr in m.outputs)
    informed = sorted(m.id for m in registry.models.values() if attr in m.input_ids())
    return AttributeNeighborhood(attr, tuple(informing), tuple(informed))


def update_registry(registry: Registry,
                    attributes: Iterable[AttributeDescriptor] = (),
                    models: Iterable[ModelDescriptor] = ()) -> Registry:
    """Merge additions/replacements into a new, re-validated registry snapshot.

    Atomic: any validation failure leaves the input registry untouched and
    raises with the full issue list.
    """
    staged = Registry(
        attributes={**registry.attributes, **{a.id: a for a in attributes}},
        models={**registry.models, **{m.id: m for m in models}},
        version=registry.version,
    )
    document = serialize_registry(staged)
    document["version"] = registry.version  # validated first, bumped after
    updated = load_registry(document)
    return replace(updated, version=registry.version + 1)
