"""Fusion models: the per-attribute aggregators that build one consensus value.

Two regimes exist.  In overwrite mode a real-world value pins the attribute:
the consensus carries only the fusion's own signature and every model
proposal is discarded until a newer external value arrives.  In aggregation
mode the fusion recomputes over the full latest-proposal set, which makes the
result independent of arrival order.

Weighted averages renormalize their weights over whichever models actually
proposed, so missing inputs degrade gracefully instead of failing.  Survival
fusion harmonizes proposals reported at different timescales: fine-grained
ones are integrated/sampled at the query horizon, coarser ones only verify
the result and never sign the provenance chain.  Undecidable situations
(vote ties, verifier violations) surface as conflict outcomes for the
clinician rather than silent tie-breaks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import (
    AllWeightsZero,
    FusionError,
    MixedLabelSets,
    MixedValueKinds,
    NoAggregators,
    NoInput,
    UntrainedFusion,
)
from .provenance import EMPTY_CHAIN, ProvenanceChain, Proposal, Signature
from .registry import ConflictPolicy, FusionConfig, FusionMode, TrainedFusion, WeightingRule
from .values import NUMERIC_KINDS, SURVIVAL_KINDS, Value, ValueKind, survival_at_horizon

TOLERANCE = 1e-9


class OutcomeStatus(str, Enum):
    FUSED = "fused"
    EXTERNAL_PINNED = "external_pinned"
    CONFLICT = "conflict"
    NO_INPUT = "no_input"


@dataclass(frozen=True)
class FusionOutcome:
    status: OutcomeStatus
    value: Value | None = None
    provenance: ProvenanceChain = EMPTY_CHAIN
    detail: str = ""
    involved: tuple[str, ...] = ()
    payload: dict = field(default_factory=dict)

    @property
    def fused(self) -> bool:
        return self.status is OutcomeStatus.FUSED


@dataclass(frozen=True)
class ModelPerformance:
    """Per (model, attribute) prediction record feeding accuracy weights."""

    model_id: str
    attribute_id: str
    n_evaluated: int = 0
    n_correct: int = 0
    sum_sq_error: float = 0.0

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_evaluated if self.n_evaluated else 0.0

    @property
    def smoothed_accuracy(self) -> float:
        # Laplace smoothing keeps brand-new models participating.
        return (self.n_correct + 1) / (self.n_evaluated + 2)


def renormalize_weights(weights: Mapping[str, float],
                        available: Iterable[str]) -> dict[str, float]:
    """Restrict to the available models and rescale to sum 1."""
    available = set(available)
    kept = {m: w for m, w in weights.items() if m in available}
    total = sum(kept.values())
    if total <= 0:
        raise AllWeightsZero("no available model carries positive weight")
    return {m: w / total for m, w in sorted(kept.items())}


def _sorted_proposals(proposals: Iterable[Proposal]) -> list[Proposal]:
    return sorted(proposals, key=lambda p: p.source.id)


def _numeric(proposals: Sequence[Proposal]) -> dict[str, float]:
    kinds = {p.value.kind for p in proposals}
    if not kinds <= set(NUMERIC_KINDS) or len(kinds) > 1:
        raise MixedValueKinds(
            f"weighted average needs uniform numeric proposals, got {sorted(k.value for k in kinds)}")
    return {p.source.id: p.value.number for p in proposals}


def _binary_entropy_bits(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * math.log2(p) + (1 - p) * math.log2(1 - p))


def _resolve_weights(proposals: Sequence[Proposal], weights: Mapping[str, float] | None,
                     rule: WeightingRule,
                     performance: Mapping[str, ModelPerformance] | None) -> dict[str, float]:
    sources = [p.source.id for p in proposals]
    if rule is WeightingRule.ENTROPY:
        kinds = {p.value.kind for p in proposals}
        if kinds != {ValueKind.PROBABILITY}:
            raise MixedValueKinds("entropy weighting applies to probability proposals only")
        derived = {p.source.id: 1.0 - _binary_entropy_bits(p.value.number) for p in proposals}
        if sum(derived.values()) <= 0:
            # every proposal maximally uninformative: fall back to a plain mean
            derived = {m: 1.0 for m in sources}
        return derived
    if rule is WeightingRule.ACCURACY:
        if performance:
            return {m: performance[m].smoothed_accuracy if m in performance else 0.5
                    for m in sources}
        if weights:
            return {m: weights.get(m, 0.5) for m in sources}
        return {m: 0.5 for m in sources}
    if weights is None:
        return {m: 1.0 for m in sources}
    return dict(weights)


def fuse_weighted_average(proposals: Iterable[Proposal], fusion_sig: Signature,
                          weights: Mapping[str, float] | None = None,
                          rule: WeightingRule = WeightingRule.STATIC,
                          performance: Mapping[str, ModelPerformance] | None = None,
                          ) -> FusionOutcome:
    props = _sorted_proposals(proposals)
    if not props:
        raise NoInput("weighted average needs at least one proposal")
    numbers = _numeric(props)
    resolved = _resolve_weights(props, weights, rule, performance)
    shares = renormalize_weights(resolved, numbers)
    fused = sum(shares[m] * numbers[m] for m in sorted(shares))
    kind = props[0].value.kind
    if kind is ValueKind.PROBABILITY:
        value = Value.probability(min(1.0, max(0.0, fused)))
    else:
        stddev = props[0].value.stddev if len(props) == 1 else None
        value = Value.continuous(fused, stddev)
    return FusionOutcome(
        OutcomeStatus.FUSED, value=value,
        provenance=_signed_union(props, fusion_sig),
        payload={"weights": shares})


def fuse_majority_vote(proposals: Iterable[Proposal], fusion_sig: Signature,
                       weights: Mapping[str, float] | None = None,
                       conflict_policy: ConflictPolicy = ConflictPolicy.REFUSE_PROPAGATE,
                       ) -> FusionOutcome:
    props = _sorted_proposals(proposals)
    if not props:
        raise NoInput("majority vote needs at least one proposal")
    kinds = {p.value.kind for p in props}
    if kinds == {ValueKind.BOOLEAN}:
        votes = {p.source.id: "true" if p.value.flag else "false" for p in props}
        label_set = {"false", "true"}
    elif kinds == {ValueKind.CATEGORICAL}:
        label_sets = {frozenset(p.value.categorical_probs()) for p in props}
        if len(label_sets) > 1:
            raise MixedLabelSets("categorical proposals disagree on the label set")
        votes = {p.source.id: p.value.top_label() for p in props}
        label_set = set(next(iter(label_sets)))
    else:
        raise MixedLabelSets(
            f"majority vote needs boolean or categorical proposals, got {sorted(k.value for k in kinds)}")
    weights = weights or {}
    scores: dict[str, float] = {label: 0.0 for label in sorted(label_set)}
    for model, label in votes.items():
        scores[label] += weights.get(model, 1.0)
    best = max(scores.values())
    winners = sorted(label for label, s in scores.items() if abs(s - best) <= 1e-12)
    if len(winners) > 1:
        tied_models = tuple(sorted(m for m, lbl in votes.items() if lbl in winners))
        return FusionOutcome(
            OutcomeStatus.CONFLICT,
            detail=f"vote tie between {winners}",
            involved=tied_models,
            payload={"votes": scores, "policy": conflict_policy.value})
    winner = winners[0]
    if kinds == {ValueKind.BOOLEAN}:
        value = Value.boolean(winner == "true")
    else:
        value = Value.categorical({winner: 1.0})
    return FusionOutcome(
        OutcomeStatus.FUSED, value=value,
        provenance=_signed_union(props, fusion_sig),
        payload={"votes": scores})


def fuse_overwrite(external: Value, fusion_sig: Signature) -> FusionOutcome:
    """Pin an attribute to a real-world value; provenance is the fusion alone."""
    return FusionOutcome(OutcomeStatus.EXTERNAL_PINNED, value=external,
                         provenance=ProvenanceChain([fusion_sig]))


def _granularity(proposal: Proposal, declared_horizons: Mapping[str, int]) -> int:
    value = proposal.value
    if value.kind is ValueKind.TIME_TO_EVENT_DENSITY:
        return 1
    if value.kind is ValueKind.SURVIVAL_CURVE:
        return value.points[0][0]
    if value.kind is ValueKind.PROBABILITY:
        horizon = declared_horizons.get(proposal.source.id)
        if horizon is None:
            raise FusionError(
                f"probability proposal from {proposal.source.id} declares no horizon")
        return horizon
    raise MixedValueKinds(
        f"survival fusion cannot use a {value.kind.value} proposal")


def _survival_sample(proposal: Proposal, horizon: int) -> float:
    value = proposal.value
    if value.kind is ValueKind.PROBABILITY:
        return value.number
    return survival_at_horizon(value, horizon)


def fuse_survival(proposals: Iterable[Proposal], query_horizon_days: int,
                  fusion_sig: Signature,
                  weights: Mapping[str, float] | None = None,
                  declared_horizons: Mapping[str, int] | None = None,
                  ) -> FusionOutcome:
    """Harmonize survival statements reported at different timescales.

    Proposals at least as fine-grained as the query horizon are aggregated
    (densities integrated, curves sampled with carry-forward); coarser ones
    act as verifiers: each must not exceed the fused value at its own horizon.
    A verifier violation returns a conflict carrying every value so the whole
    picture can be handed back to the clinician.
    """
    props = _sorted_proposals(proposals)
    if not props:
        raise NoInput("survival fusion needs at least one proposal")
    if query_horizon_days <= 0:
        raise FusionError(f"query horizon must be positive, got {query_horizon_days}")
    declared_horizons = declared_horizons or {}
    aggregators = []
    verifiers = []
    for p in props:
        gran = _granularity(p, declared_horizons)
        (aggregators if gran <= query_horizon_days else verifiers).append((p, gran))
    if not aggregators:
        raise NoAggregators(
            f"every proposal is coarser than the {query_horizon_days}-day horizon")
    samples = {p.source.id: _survival_sample(p, query_horizon_days)
               for p, _ in aggregators}
    shares = renormalize_weights(
        weights if weights is not None else {m: 1.0 for m in samples}, samples)
    fused = sum(shares[m] * samples[m] for m in sorted(shares))
    checks = {p.source.id: _survival_sample(p, gran)
              for p, gran in verifiers}
    payload = {
        "horizon_days": query_horizon_days,
        "aggregators": {m: samples[m] for m in sorted(samples)},
        "verifiers": {m: checks[m] for m in sorted(checks)},
        "fused": fused,
    }
    violating = sorted(m for m, s in checks.items() if s > fused + TOLERANCE)
    if violating:
        return FusionOutcome(
            OutcomeStatus.CONFLICT,
            detail=(f"verifier(s) {violating} exceed the fused "
                    f"{query_horizon_days}-day survival {fused:.6f}"),
            involved=tuple(sorted(samples) + sorted(checks)),
            payload=payload)
    # Verifiers never sign: only the aggregated statements shaped the value.
    chain = ProvenanceChain()
    for p, _ in sorted(aggregators, key=lambda pair: pair[0].source.id):
        chain = chain.union(p.provenance)
    return FusionOutcome(
        OutcomeStatus.FUSED,
        value=Value.survival_curve([(query_horizon_days, fused)]),
        provenance=chain.add(fusion_sig),
        payload=payload)


def fuse_logistic(proposals: Iterable[Proposal], trained: TrainedFusion | None,
                  fusion_sig: Signature) -> FusionOutcome:
    props = _sorted_proposals(proposals)
    if not props:
        raise NoInput("logistic fusion needs at least one proposal")
    if trained is None:
        raise UntrainedFusion("logistic fusion has no trained parameters yet")
    kinds = {p.value.kind for p in props}
    if kinds != {ValueKind.PROBABILITY}:
        raise MixedValueKinds("logistic fusion expects probability proposals")
    weight_map = trained.weight_map()
    used = [p for p in props if p.source.id in weight_map]
    if not used:
        raise UntrainedFusion("no proposing model appears in the trained weights")
    z = trained.bias
    for p in used:  # missing-model terms are dropped, never imputed
        z += weight_map[p.source.id] * p.value.number
    fused = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
    return FusionOutcome(
        OutcomeStatus.FUSED, value=Value.probability(fused),
        provenance=_signed_union(used, fusion_sig),
        payload={"logit": z})


def _signed_union(proposals: Sequence[Proposal], fusion_sig: Signature) -> ProvenanceChain:
    chain = ProvenanceChain()
    for p in proposals:
        chain = chain.union(p.provenance)
    return chain.add(fusion_sig)


def aggregate(proposals: Iterable[Proposal], config: FusionConfig, fusion_sig: Signature,
              performance: Mapping[str, ModelPerformance] | None = None,
              horizon_days: int | None = None,
              declared_horizons: Mapping[str, int] | None = None) -> FusionOutcome:
    """Mode dispatch used by the engine and by impact analysis.

    Overwrite-configured attributes aggregate like a uniform weighted average
    (or vote, for discrete kinds) whenever no external pin exists, so model
    estimates can still fill the gap before the real value arrives.
    """
    props = _sorted_proposals(proposals)
    if not props:
        raise NoInput("nothing to aggregate")
    mode = config.mode
    if mode is FusionMode.OVERWRITE:
        kinds = {p.value.kind for p in props}
        if kinds <= {ValueKind.BOOLEAN} or kinds <= {ValueKind.CATEGORICAL}:
            mode = FusionMode.MAJORITY_VOTE
        elif kinds & set(SURVIVAL_KINDS):
            mode = FusionMode.SURVIVAL_AGGREGATE
        else:
            mode = FusionMode.WEIGHTED_AVERAGE
    if mode is FusionMode.WEIGHTED_AVERAGE:
        return fuse_weighted_average(props, fusion_sig, config.weight_map(),
                                     config.weighting_rule, performance)
    if mode is FusionMode.MAJORITY_VOTE:
        return fuse_majority_vote(props, fusion_sig, config.weight_map(),
                                  config.conflict_policy)
    if mode is FusionMode.SURVIVAL_AGGREGATE:
        horizon = horizon_days if horizon_days is not None else config.horizon_days
        if horizon is None:
            raise FusionError("survival aggregation needs a query horizon")
        return fuse_survival(props, horizon, fusion_sig, config.weight_map(),
                             declared_horizons)
    return fuse_logistic(props, config.trained, fusion_sig)


def _impact_number(outcome: FusionOutcome) -> float | None:
    if not outcome.fused or outcome.value is None:
        return None
    value = outcome.value
    if value.kind in NUMERIC_KINDS:
        return value.number
    if value.kind is ValueKind.SURVIVAL_CURVE:
        return value.points[0][1]
    return None


def model_impact(proposals: Iterable[Proposal], config: FusionConfig,
                 fusion_sig: Signature,
                 performance: Mapping[str, ModelPerformance] | None = None,
                 horizon_days: int | None = None,
                 declared_horizons: Mapping[str, int] | None = None) -> dict[str, dict]:
    """Leave-one-out deltas: what each model contributes to the consensus."""
    props = _sorted_proposals(proposals)
    if not props:
        raise NoInput("impact analysis needs at least one proposal")

    def fuse(subset: Sequence[Proposal]) -> FusionOutcome:
        return aggregate(subset, config, fusion_sig, performance,
                         horizon_days, declared_horizons)

    full = fuse(props)
    full_number = _impact_number(full)
    impacts: dict[str, dict] = {}
    for p in props:
        rest = [q for q in props if q.source.id != p.source.id]
        if not rest:
            impacts[p.source.id] = {"delta": None, "sole_source": True}
            continue
        try:
            without = fuse(rest)
        except FusionError:
            impacts[p.source.id] = {"delta": None, "sole_source": False}
            continue
        if config.mode is FusionMode.MAJORITY_VOTE or (
                full.value is not None and full.value.kind in
                (ValueKind.BOOLEAN, ValueKind.CATEGORICAL)):
            delta = 0.0 if (without.fused and without.value == full.value) else 1.0
        elif full_number is None or _impact_number(without) is None:
            delta = None
        else:
            delta = full_number - _impact_number(without)
        impacts[p.source.id] = {"delta": delta, "sole_source": False}
    return impacts
