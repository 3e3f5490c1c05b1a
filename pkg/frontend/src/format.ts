// Pure display helpers: value text, badges, and client-side validation of
// scenario inputs against the registry descriptors.

import type { AttributeEntry, TaggedValue } from "./types.js";

export function formatValue(value: TaggedValue | null | undefined): string {
  if (value === null || value === undefined) return "—";
  switch (value.kind) {
    case "continuous": {
      const base = trim(value.value);
      return value.stddev !== undefined ? `${base} ± ${trim(value.stddev)}` : base;
    }
    case "probability":
      return `${(value.value * 100).toFixed(1)}%`;
    case "boolean":
      return value.value ? "yes" : "no";
    case "categorical": {
      const entries = Object.entries(value.probs).sort((a, b) => b[1] - a[1]);
      const [label, p] = entries[0];
      return p >= 0.999 ? label : `${label} (${(p * 100).toFixed(0)}%)`;
    }
    case "survival_curve":
      return value.points
        .map(([day, p]) => `S(${day}d)=${(p * 100).toFixed(1)}%`)
        .join(", ");
    case "time_to_event_density":
      return `density over ${value.masses.length} day buckets`;
  }
}

function trim(x: number): string {
  const rounded = Math.round(x * 1000) / 1000;
  return String(rounded);
}

export function statusBadge(status: string | undefined): string {
  switch (status) {
    case "measured":
      return "external input";
    case "predicted":
      return "predicted";
    default:
      return "unknown";
  }
}

// Parse one scenario form row into a tagged value, enforcing the declared
// kind and plausibility range before anything is sent to the service.
export function parseOverrideInput(
  descriptor: AttributeEntry, raw: string,
): { ok: true; value: TaggedValue } | { ok: false; error: string } {
  const text = raw.trim();
  if (!text) return { ok: false, error: "enter a value" };
  switch (descriptor.value_kind) {
    case "continuous":
    case "probability": {
      const x = Number(text);
      if (!Number.isFinite(x)) return { ok: false, error: `${text} is not a number` };
      const range = numericRange(descriptor);
      if (range && (x < range[0] || x > range[1])) {
        return { ok: false, error: `outside plausible range [${range[0]}, ${range[1]}]` };
      }
      return descriptor.value_kind === "probability"
        ? { ok: true, value: { kind: "probability", value: x } }
        : { ok: true, value: { kind: "continuous", value: x } };
    }
    case "boolean": {
      if (["yes", "true", "1"].includes(text.toLowerCase())) {
        return { ok: true, value: { kind: "boolean", value: true } };
      }
      if (["no", "false", "0"].includes(text.toLowerCase())) {
        return { ok: true, value: { kind: "boolean", value: false } };
      }
      return { ok: false, error: "expected yes/no" };
    }
    case "categorical": {
      const labels = labelSet(descriptor);
      if (labels && !labels.includes(text)) {
        return { ok: false, error: `expected one of ${labels.join(", ")}` };
      }
      return { ok: true, value: { kind: "categorical", probs: { [text]: 1.0 } } };
    }
    default:
      return { ok: false, error: `cannot enter ${descriptor.value_kind} values here` };
  }
}

export function numericRange(descriptor: AttributeEntry): [number, number] | null {
  const range = descriptor.range;
  if (Array.isArray(range) && range.length === 2 && typeof range[0] === "number") {
    return range as [number, number];
  }
  return null;
}

export function labelSet(descriptor: AttributeEntry): string[] | null {
  const range = descriptor.range;
  if (Array.isArray(range) && range.length > 0 && typeof range[0] === "string") {
    return range as string[];
  }
  return null;
}

// Numeric reading used only for the what-if delta overlay coloring; the
// displayed values themselves are taken verbatim from the responses.
export function comparableNumber(value: TaggedValue | null | undefined): number | null {
  if (!value) return null;
  switch (value.kind) {
    case "continuous":
    case "probability":
      return value.value;
    case "boolean":
      return value.value ? 1 : 0;
    case "survival_curve":
      return value.points.length ? value.points[0][1] : null;
    default:
      return null;
  }
}
