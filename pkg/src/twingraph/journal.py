"""Journal files: ordered external events for batch replay.

A journal stands in for the hospital-side data transformer: it delivers
already-structured observations.  Events must carry non-decreasing
timestamps and reference declared attributes only.  Replay ingests events in
file order, except that events sharing a timestamp are serialized in
ascending attribute-id order, each as its own run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from .backbone import label_conforms
from .engine import ExternalEvent
from .errors import MalformedJournal
from .registry import Registry
from .serialize import decode_value
from .values import Value, value_conforms


@dataclass(frozen=True)
class Journal:
    registry_note: str
    patient: str
    events: tuple[ExternalEvent, ...]
    completion: dict[str, Value] = field(default_factory=dict)


def _parse_timestamp(raw: str, where: str) -> datetime:
    try:
        return datetime.fromisoformat(raw)
    except (TypeError, ValueError):
        raise MalformedJournal(f"{where}: unintelligible timestamp {raw!r}") from None


def load_journal(source: str | Path | dict, registry: Registry) -> Journal:
    """Parse and validate a journal against the registry it will replay on."""
    if isinstance(source, (str, Path)):
        try:
            document = json.loads(Path(source).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise MalformedJournal(f"cannot read journal: {exc}") from exc
    else:
        document = source
    if not isinstance(document, dict) or "patient" not in document:
        raise MalformedJournal("journal must be an object with a patient id")
    patient = str(document["patient"])
    events = []
    previous = None
    for i, raw in enumerate(document.get("events", [])):
        where = f"events[{i}]"
        if not isinstance(raw, dict) or {"t", "attribute", "value"} - set(raw):
            raise MalformedJournal(f"{where}: needs t, attribute and value")
        stamp = _parse_timestamp(raw["t"], where)
        if previous is not None and stamp < previous:
            raise MalformedJournal(f"{where}: timestamps must be non-decreasing")
        previous = stamp
        attr = str(raw["attribute"])
        descriptor = registry.attributes.get(attr)
        if descriptor is None:
            raise MalformedJournal(f"{where}: attribute {attr!r} not in registry")
        value = decode_value(raw["value"])
        value_conforms(value, descriptor)
        events.append(ExternalEvent(
            attribute=attr, value=value, timestamp=str(raw["t"]),
            source_label=str(raw.get("source", ""))))
    completion = {}
    for attr, raw in (document.get("completion") or {}).items():
        descriptor = registry.attributes.get(attr)
        if descriptor is None:
            raise MalformedJournal(f"completion: attribute {attr!r} not in registry")
        label = decode_value(raw)
        label_conforms(label, descriptor)
        completion[attr] = label
    return Journal(
        registry_note=str(document.get("registry", "")),
        patient=patient,
        events=tuple(events),
        completion=completion,
    )


def replay_order(journal: Journal) -> list[ExternalEvent]:
    """File order, but same-timestamp batches sorted by attribute id."""
    ordered: list[ExternalEvent] = []
    batch: list[ExternalEvent] = []
    current = None
    for event in journal.events:
        if current is not None and event.timestamp != current:
            ordered.extend(sorted(batch, key=lambda e: e.attribute))
            batch = []
        current = event.timestamp
        batch.append(event)
    ordered.extend(sorted(batch, key=lambda e: e.attribute))
    return ordered
