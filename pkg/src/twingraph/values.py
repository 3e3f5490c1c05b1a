"""Tagged attribute values and survival-curve arithmetic.

Six value variants cover everything a twin tracks: continuous measurements
(with optional stddev), probabilities, categorical distributions, booleans,
survival curves, and time-to-event densities.  Values are immutable and
validated on construction, so any ``Value`` held by a twin is well-formed.

Survival curves are step functions with carry-forward between listed
horizons.  Densities bucket event mass per day: the mass listed at day ``d``
means "event during [d, d+1)", so survival at horizon ``h`` sums the mass of
all days strictly below ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Mapping, Sequence

from .errors import MalformedCurve, MalformedValue, OutOfPlausibleRange, TypeMismatch

if TYPE_CHECKING:  # pragma: no cover
    from .registry import AttributeDescriptor

TOLERANCE = 1e-9


class ValueKind(str, Enum):
    CONTINUOUS = "continuous"
    PROBABILITY = "probability"
    CATEGORICAL = "categorical"
    BOOLEAN = "boolean"
    SURVIVAL_CURVE = "survival_curve"
    TIME_TO_EVENT_DENSITY = "time_to_event_density"


SURVIVAL_KINDS = (ValueKind.SURVIVAL_CURVE, ValueKind.TIME_TO_EVENT_DENSITY)
NUMERIC_KINDS = (ValueKind.CONTINUOUS, ValueKind.PROBABILITY)


@dataclass(frozen=True)
class Value:
    """One tagged attribute value.  Construct through the factory methods."""

    kind: ValueKind
    number: float | None = None
    stddev: float | None = None
    flag: bool | None = None
    probs: tuple[tuple[str, float], ...] | None = None
    points: tuple[tuple[int, float], ...] | None = None

    @classmethod
    def continuous(cls, x: float, stddev: float | None = None) -> "Value":
        if not _finite(x):
            raise MalformedValue(f"continuous value must be finite, got {x!r}")
        if stddev is not None and (not _finite(stddev) or stddev < 0):
            raise MalformedValue(f"stddev must be finite and non-negative, got {stddev!r}")
        return cls(ValueKind.CONTINUOUS, number=float(x),
                   stddev=None if stddev is None else float(stddev))

    @classmethod
    def probability(cls, p: float) -> "Value":
        if not _finite(p) or p < -TOLERANCE or p > 1 + TOLERANCE:
            raise MalformedValue(f"probability must lie in [0, 1], got {p!r}")
        return cls(ValueKind.PROBABILITY, number=min(1.0, max(0.0, float(p))))

    @classmethod
    def categorical(cls, probs: Mapping[str, float]) -> "Value":
        if not probs:
            raise MalformedValue("categorical distribution needs at least one label")
        total = 0.0
        for label, p in probs.items():
            if not _finite(p) or p < -TOLERANCE:
                raise MalformedValue(f"label {label!r} has invalid probability {p!r}")
            total += p
        if abs(total - 1.0) > TOLERANCE:
            raise MalformedValue(f"categorical probabilities sum to {total}, expected 1")
        ordered = tuple(sorted((str(k), float(v)) for k, v in probs.items()))
        return cls(ValueKind.CATEGORICAL, probs=ordered)

    @classmethod
    def boolean(cls, flag: bool) -> "Value":
        return cls(ValueKind.BOOLEAN, flag=bool(flag))

    @classmethod
    def survival_curve(cls, points: Sequence[tuple[int, float]]) -> "Value":
        pts = _curve_points(points)
        violation = check_survival_monotone(pts)
        if violation is not None:
            raise MalformedValue(
                f"survival curve increases at index {violation}: {pts[violation]}")
        return cls(ValueKind.SURVIVAL_CURVE, points=pts)

    @classmethod
    def density(cls, masses: Sequence[tuple[int, float]]) -> "Value":
        if not masses:
            raise MalformedValue("density needs at least one (day, mass) entry")
        pts = []
        last_day = None
        total = 0.0
        for day, mass in masses:
            day = int(day)
            if day < 0:
                raise MalformedValue(f"density day must be non-negative, got {day}")
            if last_day is not None and day <= last_day:
                raise MalformedCurve(f"density days must be strictly increasing at day {day}")
            if not _finite(mass) or mass < -TOLERANCE:
                raise MalformedValue(f"density mass at day {day} must be non-negative")
            pts.append((day, max(0.0, float(mass))))
            total += mass
            last_day = day
        if total > 1 + TOLERANCE:
            raise MalformedValue(f"density masses sum to {total}, expected at most 1")
        return cls(ValueKind.TIME_TO_EVENT_DENSITY, points=tuple(pts))

    # -- introspection -----------------------------------------------------

    def categorical_probs(self) -> dict[str, float]:
        if self.kind is not ValueKind.CATEGORICAL:
            raise TypeMismatch(f"expected categorical value, got {self.kind.value}")
        return dict(self.probs or ())

    def top_label(self) -> str:
        """Most probable label; ties resolved by label order for determinism."""
        probs = self.categorical_probs()
        return max(sorted(probs), key=lambda lbl: probs[lbl])


def _finite(x) -> bool:
    try:
        x = float(x)
    except (TypeError, ValueError):
        return False
    return x == x and abs(x) != float("inf")


def _curve_points(points: Sequence[tuple[int, float]]) -> tuple[tuple[int, float], ...]:
    if not points:
        raise MalformedValue("survival curve needs at least one (horizon, prob) point")
    out = []
    for day, prob in points:
        if not _finite(prob) or prob < -TOLERANCE or prob > 1 + TOLERANCE:
            raise MalformedValue(f"survival probability at day {day} must lie in [0, 1]")
        out.append((int(day), min(1.0, max(0.0, float(prob)))))
    return tuple(out)


def check_survival_monotone(points: Sequence[tuple[int, float]]) -> int | None:
    """Return the index of the first monotonicity violation, or None if ok.

    Horizons must be strictly increasing (MalformedCurve otherwise) and the
    survival probabilities non-increasing within 1e-9.
    """
    last_day = None
    last_prob = None
    for i, (day, prob) in enumerate(points):
        if last_day is not None and day <= last_day:
            raise MalformedCurve(f"horizons must be strictly increasing at index {i}")
        if last_prob is not None and prob > last_prob + TOLERANCE:
            return i
        last_day, last_prob = day, prob
    return None


def survival_at_horizon(value: Value, horizon_days: int) -> float:
    """Survival probability at ``horizon_days`` from a curve or a density.

    Curves carry forward the last listed point at or before the horizon and
    report 1.0 before the first point.  Densities subtract the event mass of
    every day bucket that closes before the horizon.
    """
    if horizon_days <= 0:
        raise MalformedValue(f"horizon must be positive, got {horizon_days}")
    if value.kind is ValueKind.TIME_TO_EVENT_DENSITY:
        gone = sum(mass for day, mass in value.points if day < horizon_days)
        return max(0.0, 1.0 - gone)
    if value.kind is ValueKind.SURVIVAL_CURVE:
        prob = 1.0
        for day, p in value.points:
            if day > horizon_days:
                break
            prob = p
        return prob
    raise TypeMismatch(
        f"survival lookup needs a curve or density, got {value.kind.value}")


def value_conforms(value: Value, descriptor: "AttributeDescriptor") -> None:
    """Raise TypeMismatch/OutOfPlausibleRange unless ``value`` fits ``descriptor``.

    Survival-kind attributes accept both curves and densities; everything else
    requires an exact variant match.  Numeric variants are range-checked,
    categorical labels must be declared.
    """
    declared = descriptor.value_kind
    if declared in SURVIVAL_KINDS:
        if value.kind not in SURVIVAL_KINDS:
            raise TypeMismatch(
                f"{descriptor.id} expects a survival value, got {value.kind.value}")
        return
    if value.kind is not declared:
        raise TypeMismatch(
            f"{descriptor.id} expects {declared.value}, got {value.kind.value}")
    if value.kind in NUMERIC_KINDS and descriptor.plausibility_range is not None:
        lo, hi = descriptor.plausibility_range
        if value.number < lo - TOLERANCE or value.number > hi + TOLERANCE:
            raise OutOfPlausibleRange(
                f"{descriptor.id} value {value.number} outside [{lo}, {hi}]",
                detail={"value": value.number, "range": [lo, hi]})
    if value.kind is ValueKind.CATEGORICAL and descriptor.labels is not None:
        unknown = set(value.categorical_probs()) - set(descriptor.labels)
        if unknown:
            raise OutOfPlausibleRange(
                f"{descriptor.id} has undeclared labels {sorted(unknown)}",
                detail={"labels": sorted(descriptor.labels)})


def values_close(a: Value | None, b: Value | None, tol: float = TOLERANCE) -> bool:
    """Consensus-change detector used by the propagation loop."""
    if a is None or b is None:
        return a is b
    if a.kind is not b.kind:
        return False
    if a.kind in NUMERIC_KINDS:
        return abs(a.number - b.number) <= tol
    if a.kind is ValueKind.BOOLEAN:
        return a.flag == b.flag
    if a.kind is ValueKind.CATEGORICAL:
        pa, pb = dict(a.probs), dict(b.probs)
        labels = set(pa) | set(pb)
        return all(abs(pa.get(lbl, 0.0) - pb.get(lbl, 0.0)) <= tol for lbl in labels)
    if len(a.points) != len(b.points):
        return False
    return all(da == db and abs(pa - pb) <= tol
               for (da, pa), (db, pb) in zip(a.points, b.points))
