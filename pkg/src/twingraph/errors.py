"""Exception hierarchy shared across the package.

Every error carries a stable ``code`` string so the HTTP service and the CLI
can emit machine-readable problem documents without string-matching messages.
"""

from __future__ import annotations

from typing import Any


class TwinError(Exception):
    """Base class; ``code`` is stable, ``detail`` is free-form context."""

    code = "twin_error"

    def __init__(self, message: str, detail: Any = None):
        super().__init__(message)
        self.detail = detail

    def problem(self) -> dict:
        return {"code": self.code, "message": str(self), "detail": self.detail}


class MalformedValue(TwinError):
    code = "malformed_value"


class MalformedCurve(MalformedValue):
    code = "malformed_curve"


class TypeMismatch(TwinError):
    code = "type_mismatch"


class OutOfPlausibleRange(TwinError):
    code = "out_of_plausible_range"


class UnknownAttribute(TwinError):
    code = "unknown_attribute"


class UnknownModel(TwinError):
    code = "unknown_model"


class RegistryValidationError(TwinError):
    """Aggregates every validation issue found in a registry document."""

    code = "invalid_registry"

    def __init__(self, issues: list[dict]):
        lines = "; ".join(f"{i['code']}: {i['message']}" for i in issues)
        super().__init__(f"{len(issues)} validation issue(s): {lines}", detail=issues)
        self.issues = issues


class MissingRequiredInput(TwinError):
    code = "missing_required_input"


class EvaluatorFailure(TwinError):
    code = "evaluator_failure"


class EvaluatorTimeout(EvaluatorFailure):
    code = "evaluator_timeout"


class FusionError(TwinError):
    code = "fusion_error"


class AllWeightsZero(FusionError):
    code = "all_weights_zero"


class MixedValueKinds(FusionError):
    code = "mixed_value_kinds"


class MixedLabelSets(FusionError):
    code = "mixed_label_sets"


class NoInput(FusionError):
    code = "no_input"


class NoAggregators(FusionError):
    code = "no_aggregators"


class UntrainedFusion(FusionError):
    code = "untrained_fusion"


class UnknownPatient(TwinError):
    code = "unknown_patient"


class DuplicatePatient(TwinError):
    code = "duplicate_patient"


class JourneyCompleted(TwinError):
    code = "journey_completed"


class AlreadyCompleted(TwinError):
    code = "already_completed"


class EventSequenceGap(TwinError):
    code = "event_sequence_gap"


class InsufficientData(TwinError):
    code = "insufficient_data"


class MalformedJournal(TwinError):
    code = "malformed_journal"
