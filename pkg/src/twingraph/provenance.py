"""Signatures, provenance chains, proposals, and per-attribute state.

A provenance chain is the duplicate-free, insertion-ordered record of every
base model and fusion that influenced an attribute's current value.  Order is
kept purely for display; loop cutting and the engine's growth checks only
need set membership, which stays O(1).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator

from .errors import MalformedValue
from .values import Value


class SignatureKind(str, Enum):
    BASE_MODEL = "base_model"
    FUSION = "fusion"


@dataclass(frozen=True)
class Signature:
    """Unique stamp a base model or fusion leaves on a provenance chain."""

    kind: SignatureKind
    id: str

    def __post_init__(self):
        if not self.id:
            raise MalformedValue("signature id must be non-empty")

    def token(self) -> str:
        return f"{self.kind.value}:{self.id}"

    @classmethod
    def from_token(cls, token: str) -> "Signature":
        kind, _, ident = token.partition(":")
        return cls(SignatureKind(kind), ident)


def base_model_signature(model_id: str) -> Signature:
    return Signature(SignatureKind.BASE_MODEL, model_id)


def fusion_signature(attribute_id: str) -> Signature:
    return Signature(SignatureKind.FUSION, attribute_id)


class ProvenanceChain:
    """Immutable ordered set of signatures."""

    __slots__ = ("_entries", "_index")

    def __init__(self, entries: Iterable[Signature] = ()):
        ordered: list[Signature] = []
        index: set[Signature] = set()
        for sig in entries:
            if sig not in index:
                ordered.append(sig)
                index.add(sig)
        self._entries = tuple(ordered)
        self._index = frozenset(index)

    @property
    def entries(self) -> tuple[Signature, ...]:
        return self._entries

    def union(self, other: "ProvenanceChain | Iterable[Signature]") -> "ProvenanceChain":
        other_entries = other.entries if isinstance(other, ProvenanceChain) else tuple(other)
        return ProvenanceChain(self._entries + other_entries)

    def add(self, sig: Signature) -> "ProvenanceChain":
        if sig in self._index:
            return self
        return ProvenanceChain(self._entries + (sig,))

    def grew_over(self, older: "ProvenanceChain") -> bool:
        return bool(self._index - older._index)

    def base_model_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self._entries if s.kind is SignatureKind.BASE_MODEL)

    def tokens(self) -> list[str]:
        return [s.token() for s in self._entries]

    def __contains__(self, sig: Signature) -> bool:
        return sig in self._index

    def __iter__(self) -> Iterator[Signature]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, ProvenanceChain) and self._entries == other._entries

    def __hash__(self) -> int:
        return hash(self._entries)

    def __repr__(self) -> str:
        return f"ProvenanceChain({', '.join(self.tokens())})"


EMPTY_CHAIN = ProvenanceChain()


def provenance_union(a: ProvenanceChain, b: ProvenanceChain) -> ProvenanceChain:
    """Left operand's order first, then the right operand's unseen entries."""
    return a.union(b)


def provenance_contains(chain: ProvenanceChain, sig: Signature) -> bool:
    return sig in chain


@dataclass(frozen=True)
class Proposal:
    """One base model's latest statement about one attribute."""

    source: Signature
    attribute: str
    value: Value
    provenance: ProvenanceChain
    event_seq: int

    def __post_init__(self):
        if self.source.kind is not SignatureKind.BASE_MODEL:
            raise MalformedValue("proposal source must be a base model signature")
        if self.source not in self.provenance:
            raise MalformedValue(
                f"proposal from {self.source.id} missing its own signature")
        if self.event_seq < 0:
            raise MalformedValue("event_seq must be non-negative")


class AttributeStatus(str, Enum):
    UNKNOWN = "unknown"
    MEASURED = "measured"
    PREDICTED = "predicted"


@dataclass(frozen=True)
class HistoryEntry:
    event_seq: int
    timestamp: str
    consensus: Value | None
    status: AttributeStatus
    provenance: ProvenanceChain


@dataclass(frozen=True)
class AttributeState:
    """Current best knowledge about one attribute, plus its audit trail.

    ``status`` is MEASURED exactly while an external value pins the attribute;
    proposals arriving during a pin are discarded, never stored.  ``history``
    gains at most one entry per run, appended only when the run changed the
    attribute.
    """

    consensus: Value | None = None
    status: AttributeStatus = AttributeStatus.UNKNOWN
    provenance: ProvenanceChain = EMPTY_CHAIN
    proposals: dict[str, Proposal] = field(default_factory=dict)
    history: tuple[HistoryEntry, ...] = ()

    @property
    def pinned(self) -> bool:
        return self.status is AttributeStatus.MEASURED

    @property
    def available(self) -> bool:
        return self.status is not AttributeStatus.UNKNOWN

    def with_proposal(self, proposal: Proposal) -> "AttributeState":
        proposals = dict(self.proposals)
        proposals[proposal.source.id] = proposal
        return replace(self, proposals=proposals)

    def with_consensus(self, value: Value, status: AttributeStatus,
                       provenance: ProvenanceChain) -> "AttributeState":
        return replace(self, consensus=value, status=status, provenance=provenance)

    def with_history_entry(self, entry: HistoryEntry) -> "AttributeState":
        if self.history and entry.event_seq <= self.history[-1].event_seq:
            raise MalformedValue("history event_seq must be strictly increasing")
        return replace(self, history=self.history + (entry,))

    def pinned_by(self, value: Value, provenance: ProvenanceChain) -> "AttributeState":
        """External pin: consensus replaced, pending proposals discarded."""
        return replace(self, consensus=value, status=AttributeStatus.MEASURED,
                       provenance=provenance, proposals={})
