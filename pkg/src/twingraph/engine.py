"""Operational mode: event ingestion and fixpoint propagation.

One external event is one run.  The event pins its attribute (overwrite
mode), then a FIFO worklist drives the network: a base model fires once an
input updated and all its required inputs are known, its outputs travel with
a provenance chain extended by the model's signature, and each receiving
fusion either rejects (attribute pinned, or the fusion already signed the
incoming chain: a loop cut) or re-aggregates its full latest-proposal set.
Propagation continues only when the consensus moved beyond tolerance or the
provenance chain grew, so every run halts, cycles included.

The ordering is deterministic: the worklist is FIFO with id-ascending
enqueue, which fixes where loop cuts land on cyclic graphs.  On acyclic
graphs the fixpoint is order-independent anyway (full-set re-aggregation).
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

from .builder import TwinState, state_snapshot
from .errors import (
    EvaluatorFailure,
    FusionError,
    NoAggregators,
    NoInput,
    OutOfPlausibleRange,
    TypeMismatch,
    UnknownAttribute,
)
from .evaluators import evaluate_model
from .fusion import FusionOutcome, OutcomeStatus, aggregate, fuse_overwrite, model_impact
from .provenance import (
    AttributeState,
    AttributeStatus,
    HistoryEntry,
    ProvenanceChain,
    Proposal,
    base_model_signature,
    fusion_signature,
)
from .registry import ModelKind
from .serialize import encode_chain, encode_value
from .values import (
    SURVIVAL_KINDS,
    Value,
    ValueKind,
    survival_at_horizon,
    value_conforms,
    values_close,
)


@dataclass(frozen=True)
class ExternalEvent:
    attribute: str
    value: Value
    timestamp: str
    source_label: str = ""


@dataclass
class RunReport:
    """Everything one run did, in firing order."""

    event_seq: int
    event: dict
    ephemeral: bool = False
    fired_models: list[dict] = field(default_factory=list)
    fusion_outcomes: dict[str, FusionOutcome] = field(default_factory=dict)
    loop_cuts: list[dict] = field(default_factory=list)
    pin_rejections: list[dict] = field(default_factory=list)
    implausible: list[dict] = field(default_factory=list)
    evaluator_errors: list[dict] = field(default_factory=list)
    conflicts: list[dict] = field(default_factory=list)
    changed_attributes: set[str] = field(default_factory=set)
    updates: dict[str, dict] = field(default_factory=dict)
    wall_time: float = 0.0

    def to_dict(self, include_wall_time: bool = True) -> dict:
        out = {
            "event_seq": self.event_seq,
            "event": self.event,
            "ephemeral": self.ephemeral,
            "fired_models": self.fired_models,
            "fusion_outcomes": {a: _encode_outcome(o)
                                for a, o in sorted(self.fusion_outcomes.items())},
            "loop_cuts": self.loop_cuts,
            "pin_rejections": self.pin_rejections,
            "implausible": self.implausible,
            "evaluator_errors": self.evaluator_errors,
            "conflicts": self.conflicts,
            "changed_attributes": sorted(self.changed_attributes),
            "updates": self.updates,
        }
        if include_wall_time:
            out["wall_time"] = self.wall_time
        return out


def _encode_outcome(outcome: FusionOutcome) -> dict:
    return {
        "status": outcome.status.value,
        "value": encode_value(outcome.value),
        "provenance": encode_chain(outcome.provenance),
        "detail": outcome.detail,
        "involved": list(outcome.involved),
        "payload": outcome.payload,
    }


def ingest(twin: TwinState, event: ExternalEvent,
           horizon_overrides: dict[str, int] | None = None,
           ephemeral: bool = False) -> RunReport:
    """Pin the event's attribute and propagate to a fixpoint.

    Raises before touching any state if the attribute is undeclared or the
    value fails conformance, so a rejected event leaves the twin unchanged.
    """
    started = time.perf_counter()
    registry = twin.graph.registry
    descriptor = registry.attributes.get(event.attribute)
    if descriptor is None:
        raise UnknownAttribute(f"attribute {event.attribute!r} not declared in registry")
    value_conforms(event.value, descriptor)

    twin.event_seq += 1
    report = RunReport(
        event_seq=twin.event_seq,
        event={
            "attribute": event.attribute,
            "value": encode_value(event.value),
            "t": event.timestamp,
            "source": event.source_label,
        },
        ephemeral=ephemeral,
    )
    outcome = fuse_overwrite(event.value, fusion_signature(event.attribute))
    twin.states[event.attribute] = twin.states[event.attribute].pinned_by(
        outcome.value, outcome.provenance)
    report.fusion_outcomes[event.attribute] = outcome
    report.changed_attributes.add(event.attribute)

    run_to_fixpoint(twin, event.attribute, report, horizon_overrides)

    for attr in sorted(report.changed_attributes):
        state = twin.states[attr]
        entry = HistoryEntry(twin.event_seq, event.timestamp, state.consensus,
                             state.status, state.provenance)
        twin.states[attr] = state.with_history_entry(entry)
        report.updates[attr] = {
            "event_seq": entry.event_seq,
            "t": entry.timestamp,
            "consensus": encode_value(entry.consensus),
            "status": entry.status.value,
            "provenance": encode_chain(entry.provenance),
        }
    report.wall_time = time.perf_counter() - started
    return report


def run_to_fixpoint(twin: TwinState, pinned_attribute: str, report: RunReport,
                    horizon_overrides: dict[str, int] | None = None) -> RunReport:
    """Worklist propagation from one freshly pinned attribute."""
    graph = twin.graph
    registry = graph.registry
    queue: deque[str] = deque(sorted(graph.informed.get(pinned_attribute, ())))
    queued = set(queue)
    pre_states: dict[str, AttributeState] = {}

    while queue:
        mid = queue.popleft()
        queued.discard(mid)
        model = registry.models[mid]
        if not twin.enabled[mid] or model.kind is ModelKind.EXTERNAL_INPUT:
            continue
        if not all(twin.states[a].available for a in model.required_inputs()):
            continue
        inputs = {a: twin.states[a].consensus for a in model.input_ids()
                  if twin.states[a].available}
        try:
            outputs = evaluate_model(model, inputs, registry.attributes)
        except EvaluatorFailure as exc:
            report.evaluator_errors.append({"model": mid, "code": exc.code,
                                            "message": str(exc)})
            continue
        chain = ProvenanceChain()
        for attr in model.input_ids():  # declared order keeps chains reproducible
            if attr in inputs:
                chain = chain.union(twin.states[attr].provenance)
        chain = chain.add(base_model_signature(mid))
        report.fired_models.append({
            "model": mid,
            "outputs": {a: encode_value(v) for a, v in sorted(outputs.items())},
        })
        for attr in model.outputs:
            if attr not in outputs:
                continue
            _deliver(twin, report, mid, attr, outputs[attr], chain,
                     horizon_overrides, queue, queued, pre_states)
    return report


def _deliver(twin: TwinState, report: RunReport, model_id: str, attr: str,
             value: Value, chain: ProvenanceChain,
             horizon_overrides: dict[str, int] | None,
             queue: deque, queued: set,
             pre_states: dict[str, AttributeState]) -> None:
    registry = twin.graph.registry
    descriptor = registry.attributes[attr]
    state = twin.states[attr]
    f_sig = fusion_signature(attr)

    if state.pinned:
        report.pin_rejections.append({"attribute": attr, "source": model_id})
        report.fusion_outcomes[attr] = FusionOutcome(
            OutcomeStatus.EXTERNAL_PINNED, value=state.consensus,
            provenance=state.provenance,
            detail=f"external value pins {attr}; proposal from {model_id} discarded")
        return
    if f_sig in chain:
        report.loop_cuts.append({"fusion": attr, "source": model_id})
        return
    try:
        _proposal_conforms(value, descriptor, registry.models[model_id])
    except (TypeMismatch, OutOfPlausibleRange) as exc:
        report.implausible.append({"attribute": attr, "source": model_id,
                                   "code": exc.code, "message": str(exc)})
        return

    proposal = Proposal(base_model_signature(model_id), attr, value, chain,
                        twin.event_seq)
    state = state.with_proposal(proposal)
    twin.states[attr] = state

    active = [p for m, p in sorted(state.proposals.items()) if twin.enabled[m]]
    horizon = (horizon_overrides or {}).get(attr)
    try:
        outcome = aggregate(
            active, descriptor.fusion, f_sig,
            horizon_days=horizon,
            declared_horizons=_declared_horizons(twin, attr))
    except (NoAggregators, NoInput) as exc:
        outcome = FusionOutcome(OutcomeStatus.NO_INPUT, detail=str(exc))
    except FusionError as exc:  # untrained or misconfigured: pass back, keep running
        outcome = FusionOutcome(OutcomeStatus.CONFLICT, detail=str(exc),
                                involved=tuple(p.source.id for p in active))
    report.fusion_outcomes[attr] = outcome

    if outcome.status is OutcomeStatus.CONFLICT:
        report.conflicts.append({
            "attribute": attr,
            "detail": outcome.detail,
            "involved": list(outcome.involved),
            "policy": descriptor.fusion.conflict_policy.value,
            "payload": outcome.payload,
        })
        # A conflict over the full proposal set supersedes any consensus the
        # attribute gained earlier in this run from a subset of it: retract
        # back to the last conflict-free knowledge so nothing derived from
        # the withdrawn intermediate value can propagate.
        if attr in pre_states:
            prior = pre_states[attr]
            twin.states[attr] = state.with_consensus(
                prior.consensus, prior.status, prior.provenance)
            report.changed_attributes.discard(attr)
        return
    if not outcome.fused:
        return

    changed = not values_close(state.consensus, outcome.value)
    grew = outcome.provenance.grew_over(state.provenance)
    if not changed and not grew:
        return
    if attr not in pre_states:
        pre_states[attr] = state
    twin.states[attr] = state.with_consensus(
        outcome.value, AttributeStatus.PREDICTED, outcome.provenance)
    report.changed_attributes.add(attr)
    for downstream in twin.graph.informed.get(attr, ()):
        if downstream not in queued:
            queue.append(downstream)
            queued.add(downstream)


def _proposal_conforms(value: Value, descriptor, model) -> None:
    # Survival attributes additionally accept probability proposals from
    # models that declare the horizon those probabilities refer to.
    if (descriptor.value_kind in SURVIVAL_KINDS
            and value.kind is ValueKind.PROBABILITY
            and model.params.get("horizon_days")):
        return
    value_conforms(value, descriptor)


def _declared_horizons(twin: TwinState, attr: str) -> dict[str, int]:
    registry = twin.graph.registry
    out = {}
    for mid in twin.graph.informing.get(attr, ()):
        horizon = registry.models[mid].params.get("horizon_days")
        if horizon:
            out[mid] = int(horizon)
    return out


@dataclass(frozen=True)
class WhatIfQuery:
    attribute: str
    horizon_days: int


@dataclass
class WhatIfResult:
    snapshot: dict
    report: RunReport
    query_result: dict | None


def what_if(twin: TwinState, overrides: list[ExternalEvent],
            query: WhatIfQuery | None = None) -> WhatIfResult:
    """Ephemeral scenario run on a copy; the persistent twin is untouched.

    Overrides are serialized in ascending attribute-id order, each as its own
    run; the merged report covers all of them.
    """
    scratch = twin.clone()
    horizon_overrides = None
    if query is not None:
        if query.attribute not in scratch.graph.registry.attributes:
            raise UnknownAttribute(f"query attribute {query.attribute!r} undeclared")
        horizon_overrides = {query.attribute: query.horizon_days}
    reports = [ingest(scratch, event, horizon_overrides, ephemeral=True)
               for event in sorted(overrides, key=lambda e: e.attribute)]
    merged = _merge_reports(scratch, reports)
    result = None
    if query is not None:
        result = _query_result(scratch, query)
    return WhatIfResult(snapshot=state_snapshot(scratch), report=merged,
                        query_result=result)


def _merge_reports(twin: TwinState, reports: list[RunReport]) -> RunReport:
    if len(reports) == 1:
        return reports[0]
    merged = RunReport(event_seq=twin.event_seq, event={}, ephemeral=True)
    for rep in reports:
        merged.fired_models.extend(rep.fired_models)
        merged.fusion_outcomes.update(rep.fusion_outcomes)
        merged.loop_cuts.extend(rep.loop_cuts)
        merged.pin_rejections.extend(rep.pin_rejections)
        merged.implausible.extend(rep.implausible)
        merged.evaluator_errors.extend(rep.evaluator_errors)
        merged.conflicts.extend(rep.conflicts)
        merged.changed_attributes.update(rep.changed_attributes)
        merged.updates.update(rep.updates)
        merged.wall_time += rep.wall_time
    return merged


def _query_result(twin: TwinState, query: WhatIfQuery) -> dict:
    state = twin.states[query.attribute]
    result = {"attribute": query.attribute, "horizon_days": query.horizon_days,
              "probability": None}
    if state.consensus is not None:
        if state.consensus.kind in SURVIVAL_KINDS:
            result["probability"] = survival_at_horizon(state.consensus,
                                                        query.horizon_days)
        elif state.consensus.kind is ValueKind.PROBABILITY:
            result["probability"] = state.consensus.number
    return result


@dataclass
class AttributeReport:
    state: AttributeState
    impact: dict
    provenance: ProvenanceChain


def attribute_report(twin: TwinState, attr: str) -> AttributeReport:
    """History, consensus, provenance, and leave-one-out impacts for one node."""
    if attr not in twin.states:
        raise UnknownAttribute(f"attribute {attr!r} not in this twin")
    state = twin.states[attr]
    descriptor = twin.graph.registry.attributes[attr]
    if state.pinned:
        impact = {"pinned": True,
                  "note": "external input; model proposals discarded",
                  "entries": {}}
    else:
        active = [p for m, p in sorted(state.proposals.items()) if twin.enabled[m]]
        entries: dict[str, dict] = {}
        if active:
            try:
                entries = model_impact(
                    active, descriptor.fusion, fusion_signature(attr),
                    declared_horizons=_declared_horizons(twin, attr))
            except FusionError:
                entries = {}
        impact = {"pinned": False, "entries": entries}
    return AttributeReport(state=state, impact=impact, provenance=state.provenance)
