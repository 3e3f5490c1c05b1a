"""Builtin model evaluators plus the subprocess adapter for external models.

The builtin kinds (constant, table, linear, logistic, survival_table) are
deterministic pure functions of (descriptor params, inputs): repeated calls
produce byte-identical output.  They preserve the input/output shape of real
clinical predictors without shipping anyone's coefficients.

The command kind is the single extension point for real models: a child
process receives one JSON request on stdin and must answer one JSON reply on
stdout within the configured timeout.
"""

from __future__ import annotations

import json
import math
import subprocess
from typing import Mapping

from .errors import EvaluatorFailure, EvaluatorTimeout, MissingRequiredInput
from .registry import AttributeDescriptor, ModelDescriptor, ModelKind
from .serialize import decode_value, encode_value
from .values import SURVIVAL_KINDS, Value, ValueKind, survival_at_horizon

COMMAND_FORMAT_VERSION = 1
DEFAULT_COMMAND_TIMEOUT_S = 30.0


def evaluate_model(model: ModelDescriptor, inputs: Mapping[str, Value],
                   attributes: Mapping[str, AttributeDescriptor]) -> dict[str, Value]:
    """Run one model over the provided inputs.

    Optional inputs may be absent from ``inputs``; required ones may not.
    ``attributes`` supplies output descriptors (for clamping and typing) and
    the fusion horizons used to coerce survival inputs to numbers.
    """
    for attr in model.required_inputs():
        if attr not in inputs:
            raise MissingRequiredInput(f"model {model.id} requires attribute {attr!r}")
    if model.kind is ModelKind.EXTERNAL_INPUT:
        raise EvaluatorFailure(
            f"model {model.id} is an external-input placeholder and never evaluates")
    if model.kind is ModelKind.CONSTANT:
        return _eval_constant(model)
    if model.kind is ModelKind.TABLE:
        return _eval_table(model, inputs, attributes)
    if model.kind is ModelKind.LINEAR:
        return _eval_affine(model, inputs, attributes, squash=False)
    if model.kind is ModelKind.LOGISTIC:
        return _eval_affine(model, inputs, attributes, squash=True)
    if model.kind is ModelKind.SURVIVAL_TABLE:
        return _eval_survival_table(model, inputs, attributes)
    return _eval_command(model, inputs)


def coerce_number(value: Value, encoding: Mapping[str, float] | None = None,
                  survival_horizon: int | None = None) -> float:
    """Numeric view of a value for affine/risk evaluators.

    Booleans become 0/1, categorical values need a declared label encoding,
    survival values are read at the attribute's fusion horizon.
    """
    if value.kind in (ValueKind.CONTINUOUS, ValueKind.PROBABILITY):
        return value.number
    if value.kind is ValueKind.BOOLEAN:
        return 1.0 if value.flag else 0.0
    if value.kind is ValueKind.CATEGORICAL:
        label = value.top_label()
        if encoding is None or label not in encoding:
            raise EvaluatorFailure(f"no numeric encoding declared for label {label!r}")
        return float(encoding[label])
    if value.kind in SURVIVAL_KINDS:
        if survival_horizon is None:
            raise EvaluatorFailure("survival input needs a fusion horizon to be read as a number")
        return survival_at_horizon(value, survival_horizon)
    raise EvaluatorFailure(f"cannot read {value.kind.value} as a number")


def _numeric_inputs(model: ModelDescriptor, inputs: Mapping[str, Value],
                    attributes: Mapping[str, AttributeDescriptor]) -> dict[str, float]:
    encodings = model.params.get("encodings", {})
    out = {}
    for attr, value in inputs.items():
        desc = attributes.get(attr)
        horizon = desc.fusion.horizon_days if desc is not None else None
        out[attr] = coerce_number(value, encodings.get(attr), horizon)
    return out


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _typed_number(x: float, attr: str,
                  attributes: Mapping[str, AttributeDescriptor]) -> Value:
    """Clamp to the output attribute's plausibility range and tag per its kind."""
    desc = attributes.get(attr)
    if desc is not None and desc.value_kind is ValueKind.PROBABILITY:
        lo, hi = 0.0, 1.0
        if desc.plausibility_range is not None:
            lo = max(lo, desc.plausibility_range[0])
            hi = min(hi, desc.plausibility_range[1])
        return Value.probability(min(hi, max(lo, x)))
    if desc is not None and desc.plausibility_range is not None:
        lo, hi = desc.plausibility_range
        x = min(hi, max(lo, x))
    return Value.continuous(x)


def _eval_constant(model: ModelDescriptor) -> dict[str, Value]:
    per_output = model.params.get("per_output")
    if per_output is None:
        if len(model.outputs) != 1 or "value" not in model.params:
            raise EvaluatorFailure(f"constant model {model.id} misses a value for its outputs")
        per_output = {model.outputs[0]: model.params["value"]}
    try:
        return {attr: decode_value(raw) for attr, raw in per_output.items()
                if attr in model.outputs}
    except Exception as exc:
        raise EvaluatorFailure(f"constant model {model.id}: {exc}") from exc


def _table_token(model: ModelDescriptor, attr: str, value: Value | None) -> str:
    if value is None:
        return "-"
    if value.kind is ValueKind.CATEGORICAL:
        return value.top_label()
    if value.kind is ValueKind.BOOLEAN:
        return "true" if value.flag else "false"
    bins = model.params.get("bins", {}).get(attr)
    if bins is None:
        raise EvaluatorFailure(
            f"table model {model.id} has no bins for numeric input {attr!r}")
    x = value.number
    for label, lo, hi in bins:
        if lo <= x < hi or (x == hi and (label, lo, hi) == tuple(bins[-1])):
            return str(label)
    raise EvaluatorFailure(f"table model {model.id}: {attr}={x} falls outside declared bins")


def _eval_table(model: ModelDescriptor, inputs: Mapping[str, Value],
                attributes: Mapping[str, AttributeDescriptor]) -> dict[str, Value]:
    table = model.params.get("table")
    if not isinstance(table, dict):
        raise EvaluatorFailure(f"table model {model.id} declares no table")
    key = "|".join(_table_token(model, i.attribute, inputs.get(i.attribute))
                   for i in model.inputs)
    if key not in table:
        raise EvaluatorFailure(f"table model {model.id}: no entry for key {key!r}")
    cell = table[key]
    if not isinstance(cell, dict) or "kind" in cell:
        cell = {model.outputs[0]: cell}
    out = {}
    for attr, raw in cell.items():
        if attr not in model.outputs:
            continue
        out[attr] = (decode_value(raw) if isinstance(raw, dict)
                     else _typed_number(float(raw), attr, attributes))
    return out


def _affine_terms(model: ModelDescriptor) -> dict[str, dict]:
    per_output = model.params.get("per_output")
    if per_output is not None:
        return per_output
    if len(model.outputs) != 1:
        raise EvaluatorFailure(
            f"model {model.id} has several outputs and needs per_output params")
    return {model.outputs[0]: {"weights": model.params.get("weights", {}),
                               "bias": model.params.get("bias", 0.0)}}


def _eval_affine(model: ModelDescriptor, inputs: Mapping[str, Value],
                 attributes: Mapping[str, AttributeDescriptor],
                 squash: bool) -> dict[str, Value]:
    numbers = _numeric_inputs(model, inputs, attributes)
    out = {}
    for attr, spec in _affine_terms(model).items():
        if attr not in model.outputs:
            continue
        z = float(spec.get("bias", 0.0))
        for name in sorted(spec.get("weights", {})):
            if name in numbers:  # absent optional inputs simply drop their term
                z += float(spec["weights"][name]) * numbers[name]
        if squash:
            out[attr] = Value.probability(_sigmoid(z))
        else:
            out[attr] = _typed_number(z, attr, attributes)
    return out


def _eval_survival_table(model: ModelDescriptor, inputs: Mapping[str, Value],
                         attributes: Mapping[str, AttributeDescriptor]) -> dict[str, Value]:
    numbers = _numeric_inputs(model, inputs, attributes)
    risk_spec = model.params.get("risk", {})
    z = float(risk_spec.get("bias", 0.0))
    for name in sorted(risk_spec.get("weights", {})):
        if name in numbers:
            z += float(risk_spec["weights"][name]) * numbers[name]
    risk = _sigmoid(z)
    out = {}
    for attr, spec in model.params.get("per_output", {}).items():
        if attr not in model.outputs:
            continue
        form = spec.get("form")
        scale = float(spec.get("hazard_scale", 1.0))
        multiplier = math.exp(scale * (2.0 * risk - 1.0))
        if form == "curve":
            points = [(int(day), float(s) ** multiplier) for day, s in spec["baseline"]]
            out[attr] = Value.survival_curve(points)
        elif form == "density":
            lam = float(spec["lambda_per_day"]) * multiplier
            max_days = int(spec.get("max_days", 720))
            survival = [math.exp(-lam * d) for d in range(max_days + 1)]
            masses = [(d, survival[d] - survival[d + 1]) for d in range(max_days)]
            out[attr] = Value.density(masses)
        elif form == "probability":
            out[attr] = Value.probability(_sigmoid(z + float(spec.get("logit_shift", 0.0))))
        else:
            raise EvaluatorFailure(
                f"survival table {model.id}: unknown output form {form!r} for {attr}")
    if not out:
        raise EvaluatorFailure(f"survival table {model.id} produced no declared output")
    return out


def _eval_command(model: ModelDescriptor, inputs: Mapping[str, Value]) -> dict[str, Value]:
    argv = model.params.get("argv")
    timeout = float(model.params.get("timeout_s", DEFAULT_COMMAND_TIMEOUT_S))
    request = canonical_request(inputs)
    try:
        proc = subprocess.run(
            argv, input=request.encode("utf-8"), capture_output=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        raise EvaluatorTimeout(f"command model {model.id} exceeded {timeout}s") from None
    except OSError as exc:
        raise EvaluatorFailure(f"command model {model.id}: {exc}") from exc
    if proc.returncode != 0:
        tail = proc.stderr.decode("utf-8", "replace")[-500:]
        raise EvaluatorFailure(
            f"command model {model.id} exited with {proc.returncode}", detail=tail)
    try:
        reply = json.loads(proc.stdout.decode("utf-8"))
        outputs = {attr: decode_value(raw) for attr, raw in reply["outputs"].items()
                   if attr in model.outputs}
    except Exception as exc:
        raise EvaluatorFailure(f"command model {model.id} sent a malformed reply: {exc}") from exc
    return outputs


def canonical_request(inputs: Mapping[str, Value]) -> str:
    """The one-line exchange request written to a command model's stdin."""
    payload = {"format_version": COMMAND_FORMAT_VERSION,
               "inputs": {attr: encode_value(v) for attr, v in sorted(inputs.items())}}
    return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"
