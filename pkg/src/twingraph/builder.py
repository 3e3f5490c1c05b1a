"""Backend builder: compiles a registry into a patient-specific twin.

The compiled graph is strictly bipartite (model -> attribute edges for
outputs, attribute -> model edges for inputs) and pins the registry snapshot
it was built from.  Directed cycles are permitted and merely flagged: the
propagation engine cuts them at run time through provenance membership, so
reciprocal model pairs are first-class citizens rather than build errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import UnknownAttribute, UnknownModel
from .provenance import AttributeState
from .registry import ModelKind, Registry
from .serialize import (
    decode_attribute_state,
    encode_attribute_state,
    encode_value,
)


@dataclass(frozen=True)
class KnowledgeGraph:
    """Structural view of one registry snapshot; node order is id-ascending."""

    registry: Registry
    attribute_ids: tuple[str, ...]
    model_ids: tuple[str, ...]
    informing: dict[str, tuple[str, ...]]   # attribute -> models producing it
    informed: dict[str, tuple[str, ...]]    # attribute -> models consuming it
    cycle_flags: frozenset[str]

    @property
    def version(self) -> int:
        return self.registry.version


@dataclass
class TwinState:
    """Mutable per-patient runtime state; one serialized writer per twin."""

    patient_id: str
    graph: KnowledgeGraph
    states: dict[str, AttributeState]
    enabled: dict[str, bool]
    event_seq: int = 0
    expected_external: frozenset[str] = field(default_factory=frozenset)

    def clone(self) -> "TwinState":
        return TwinState(
            patient_id=self.patient_id,
            graph=self.graph,
            states=dict(self.states),
            enabled=dict(self.enabled),
            event_seq=self.event_seq,
            expected_external=self.expected_external,
        )


def build_graph(registry: Registry, initially_available: set[str] | None = None,
                patient_id: str = "") -> TwinState:
    """Construct a fresh twin: every attribute unknown, cycle flags computed.

    ``initially_available`` only marks which external inputs are expected to
    arrive; it assigns no values.
    """
    available = frozenset(initially_available or ())
    unknown = available - set(registry.attributes)
    if unknown:
        raise UnknownAttribute(f"initially available attributes {sorted(unknown)} undeclared")
    attribute_ids = tuple(sorted(registry.attributes))
    model_ids = tuple(sorted(registry.models))
    informing = {a: [] for a in attribute_ids}
    informed = {a: [] for a in attribute_ids}
    for mid in model_ids:
        model = registry.models[mid]
        for attr in model.outputs:
            informing[attr].append(mid)
        for attr in model.input_ids():
            informed[attr].append(mid)
    _assert_bipartite(registry)
    graph = KnowledgeGraph(
        registry=registry,
        attribute_ids=attribute_ids,
        model_ids=model_ids,
        informing={a: tuple(sorted(ms)) for a, ms in informing.items()},
        informed={a: tuple(sorted(ms)) for a, ms in informed.items()},
        cycle_flags=_cycle_flags(registry),
    )
    return TwinState(
        patient_id=patient_id,
        graph=graph,
        states={a: AttributeState() for a in attribute_ids},
        enabled={m: True for m in model_ids},
        expected_external=available,
    )


def _assert_bipartite(registry: Registry) -> None:
    # Edges come straight from descriptor tables; every endpoint a model
    # touches must be a declared attribute, so no model-model edge can exist.
    for model in registry.models.values():
        for attr in (*model.input_ids(), *model.outputs):
            if attr not in registry.attributes:
                raise UnknownAttribute(
                    f"model {model.id} references undeclared attribute {attr!r}")


def _cycle_flags(registry: Registry) -> frozenset[str]:
    """Model ids on at least one directed cycle (iterative Tarjan SCC)."""
    succ: dict[tuple[str, str], list[tuple[str, str]]] = {}
    for model in registry.models.values():
        mnode = ("m", model.id)
        succ[mnode] = [("a", out) for out in sorted(model.outputs)]
        for attr in model.input_ids():
            succ.setdefault(("a", attr), []).append(mnode)
    for attr in registry.attributes:
        succ.setdefault(("a", attr), [])
    for node in succ:
        succ[node] = sorted(succ[node])

    index: dict[tuple[str, str], int] = {}
    lowlink: dict[tuple[str, str], int] = {}
    on_stack: set[tuple[str, str]] = set()
    stack: list[tuple[str, str]] = []
    counter = [0]
    flagged: set[str] = set()

    for root in sorted(succ):
        if root in index:
            continue
        work = [(root, iter(succ[root]))]
        index[root] = lowlink[root] = counter[0]
        counter[0] += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for child in it:
                if child not in index:
                    index[child] = lowlink[child] = counter[0]
                    counter[0] += 1
                    stack.append(child)
                    on_stack.add(child)
                    work.append((child, iter(succ[child])))
                    advanced = True
                    break
                if child in on_stack:
                    lowlink[node] = min(lowlink[node], index[child])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[node])
            if lowlink[node] == index[node]:
                component = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    component.append(member)
                    if member == node:
                        break
                if len(component) > 1:
                    flagged.update(mid for kind, mid in component if kind == "m")
    return frozenset(flagged)


def set_model_enabled(twin: TwinState, model_id: str, enabled: bool) -> TwinState:
    """Toggle a branch.  Existing consensus values stay untouched until the
    next run; only future evaluations and aggregations see the flag."""
    if model_id not in twin.enabled:
        raise UnknownModel(f"model {model_id!r} not in this twin's graph")
    twin.enabled[model_id] = bool(enabled)
    return twin


def evaluable_frontier(twin: TwinState) -> frozenset[str]:
    """Enabled, evaluable models: every required input has a known value."""
    registry = twin.graph.registry
    frontier = set()
    for mid in twin.graph.model_ids:
        model = registry.models[mid]
        if model.kind is ModelKind.EXTERNAL_INPUT or not twin.enabled[mid]:
            continue
        if all(twin.states[a].available for a in model.required_inputs()):
            frontier.add(mid)
    return frozenset(frontier)


def graph_snapshot(twin: TwinState) -> dict:
    """Node/edge export consumed by the dashboard and the CLI."""
    registry = twin.graph.registry
    nodes = []
    for attr in twin.graph.attribute_ids:
        state = twin.states[attr]
        nodes.append({
            "id": attr,
            "kind": "attribute",
            "status": state.status.value,
            "value": encode_value(state.consensus),
            "expected_external": attr in twin.expected_external,
        })
    for mid in twin.graph.model_ids:
        nodes.append({
            "id": mid,
            "kind": "model",
            "model_kind": registry.models[mid].kind.value,
            "phase": registry.models[mid].phase.value,
            "enabled": twin.enabled[mid],
        })
    edges = []
    for mid in twin.graph.model_ids:
        model = registry.models[mid]
        for attr in sorted(model.input_ids()):
            edges.append({"from": attr, "to": mid})
        for attr in sorted(model.outputs):
            edges.append({"from": mid, "to": attr})
    return {
        "patient": twin.patient_id,
        "registry_version": registry.version,
        "nodes": nodes,
        "edges": sorted(edges, key=lambda e: (e["from"], e["to"])),
        "cycles": sorted(twin.graph.cycle_flags),
    }


def state_snapshot(twin: TwinState) -> dict:
    """Full canonical state dump; the unit of persistence and hashing."""
    return {
        "patient": twin.patient_id,
        "registry_version": twin.graph.version,
        "event_seq": twin.event_seq,
        "expected_external": sorted(twin.expected_external),
        "models": {m: {"enabled": twin.enabled[m]} for m in twin.graph.model_ids},
        "attributes": {a: encode_attribute_state(twin.states[a])
                       for a in twin.graph.attribute_ids},
    }


def restore_twin(snapshot: dict, registry: Registry) -> TwinState:
    """Rebuild a twin from a state snapshot taken under the same registry."""
    twin = build_graph(registry, set(snapshot.get("expected_external", ())),
                       snapshot.get("patient", ""))
    twin.event_seq = snapshot["event_seq"]
    for mid, entry in snapshot.get("models", {}).items():
        if mid in twin.enabled:
            twin.enabled[mid] = bool(entry["enabled"])
    for attr, entry in snapshot["attributes"].items():
        if attr in twin.states:
            twin.states[attr] = decode_attribute_state(entry)
    return twin
