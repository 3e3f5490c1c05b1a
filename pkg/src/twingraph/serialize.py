"""Canonical JSON encoding for values, provenance, and state snapshots.

Replay parity and the determinism checks compare persisted state byte for
byte, so every serializer here is canonical: sorted keys, compact separators,
and a trailing newline on whole documents.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

from .errors import MalformedValue
from .provenance import (
    AttributeState,
    AttributeStatus,
    HistoryEntry,
    ProvenanceChain,
    Proposal,
    Signature,
)
from .values import Value, ValueKind


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


def content_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def encode_value(value: Value | None) -> dict | None:
    if value is None:
        return None
    if value.kind is ValueKind.CONTINUOUS:
        out: dict[str, Any] = {"kind": value.kind.value, "value": value.number}
        if value.stddev is not None:
            out["stddev"] = value.stddev
        return out
    if value.kind is ValueKind.PROBABILITY:
        return {"kind": value.kind.value, "value": value.number}
    if value.kind is ValueKind.BOOLEAN:
        return {"kind": value.kind.value, "value": value.flag}
    if value.kind is ValueKind.CATEGORICAL:
        return {"kind": value.kind.value, "probs": dict(value.probs)}
    if value.kind is ValueKind.SURVIVAL_CURVE:
        return {"kind": value.kind.value, "points": [list(p) for p in value.points]}
    return {"kind": value.kind.value, "masses": [list(p) for p in value.points]}


def decode_value(obj: Any) -> Value:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise MalformedValue(f"expected a tagged value object, got {obj!r}")
    try:
        kind = ValueKind(obj["kind"])
    except ValueError:
        raise MalformedValue(f"unknown value kind {obj['kind']!r}") from None
    try:
        if kind is ValueKind.CONTINUOUS:
            return Value.continuous(obj["value"], obj.get("stddev"))
        if kind is ValueKind.PROBABILITY:
            return Value.probability(obj["value"])
        if kind is ValueKind.BOOLEAN:
            flag = obj["value"]
            if not isinstance(flag, bool):
                raise MalformedValue(f"boolean value must be true/false, got {flag!r}")
            return Value.boolean(flag)
        if kind is ValueKind.CATEGORICAL:
            return Value.categorical(obj["probs"])
        if kind is ValueKind.SURVIVAL_CURVE:
            return Value.survival_curve([tuple(p) for p in obj["points"]])
        return Value.density([tuple(p) for p in obj["masses"]])
    except KeyError as exc:
        raise MalformedValue(f"value object missing field {exc}") from None


def encode_chain(chain: ProvenanceChain) -> list[str]:
    return chain.tokens()


def decode_chain(tokens: list[str]) -> ProvenanceChain:
    return ProvenanceChain(Signature.from_token(t) for t in tokens)


def encode_proposal(proposal: Proposal) -> dict:
    return {
        "source": proposal.source.token(),
        "attribute": proposal.attribute,
        "value": encode_value(proposal.value),
        "provenance": encode_chain(proposal.provenance),
        "event_seq": proposal.event_seq,
    }


def decode_proposal(obj: dict) -> Proposal:
    return Proposal(
        source=Signature.from_token(obj["source"]),
        attribute=obj["attribute"],
        value=decode_value(obj["value"]),
        provenance=decode_chain(obj["provenance"]),
        event_seq=obj["event_seq"],
    )


def encode_history_entry(entry: HistoryEntry) -> dict:
    return {
        "event_seq": entry.event_seq,
        "t": entry.timestamp,
        "consensus": encode_value(entry.consensus),
        "status": entry.status.value,
        "provenance": encode_chain(entry.provenance),
    }


def decode_history_entry(obj: dict) -> HistoryEntry:
    return HistoryEntry(
        event_seq=obj["event_seq"],
        timestamp=obj["t"],
        consensus=None if obj["consensus"] is None else decode_value(obj["consensus"]),
        status=AttributeStatus(obj["status"]),
        provenance=decode_chain(obj["provenance"]),
    )


def encode_attribute_state(state: AttributeState) -> dict:
    return {
        "consensus": encode_value(state.consensus),
        "status": state.status.value,
        "provenance": encode_chain(state.provenance),
        "proposals": {mid: encode_proposal(p) for mid, p in sorted(state.proposals.items())},
        "history": [encode_history_entry(h) for h in state.history],
    }


def decode_attribute_state(obj: dict) -> AttributeState:
    return AttributeState(
        consensus=None if obj["consensus"] is None else decode_value(obj["consensus"]),
        status=AttributeStatus(obj["status"]),
        provenance=decode_chain(obj["provenance"]),
        proposals={mid: decode_proposal(p) for mid, p in obj["proposals"].items()},
        history=tuple(decode_history_entry(h) for h in obj["history"]),
    )
