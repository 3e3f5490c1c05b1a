"""twingraph: bipartite knowledge-graph patient twins.

A declarative registry of attributes and predictive models compiles into a
per-patient graph; external observations propagate through it to a fixpoint
with provenance-tracked loop cutting; per-attribute fusion models merge
redundant predictions into one consensus value; completed journeys feed a
cohort that retrains the fusion weights.
"""

from .builder import (
    TwinState,
    build_graph,
    evaluable_frontier,
    graph_snapshot,
    set_model_enabled,
    state_snapshot,
)
from .engine import ExternalEvent, RunReport, attribute_report, ingest, what_if
from .errors import TwinError
from .fusion import (
    FusionOutcome,
    fuse_logistic,
    fuse_majority_vote,
    fuse_overwrite,
    fuse_survival,
    fuse_weighted_average,
    model_impact,
    renormalize_weights,
)
from .provenance import (
    ProvenanceChain,
    Proposal,
    Signature,
    provenance_contains,
    provenance_union,
)
from .registry import (
    Registry,
    load_registry,
    neighborhood,
    serialize_registry,
    update_registry,
)
from .values import (
    Value,
    check_survival_monotone,
    survival_at_horizon,
    value_conforms,
)

__version__ = "0.1.0"

__all__ = [
    "ExternalEvent",
    "FusionOutcome",
    "ProvenanceChain",
    "Proposal",
    "Registry",
    "RunReport",
    "Signature",
    "TwinError",
    "TwinState",
    "Value",
    "attribute_report",
    "build_graph",
    "check_survival_monotone",
    "evaluable_frontier",
    "fuse_logistic",
    "fuse_majority_vote",
    "fuse_overwrite",
    "fuse_survival",
    "fuse_weighted_average",
    "graph_snapshot",
    "ingest",
    "load_registry",
    "model_impact",
    "neighborhood",
    "provenance_contains",
    "provenance_union",
    "renormalize_weights",
    "serialize_registry",
    "set_model_enabled",
    "state_snapshot",
    "survival_at_horizon",
    "update_registry",
    "value_conforms",
    "what_if",
]
