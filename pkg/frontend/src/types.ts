// Payload shapes of the twin service API. The dashboard is a pure client:
// every number it shows comes out of these responses, never from local
// recomputation of fusion results.

export type TaggedValue =
  | { kind: "continuous"; value: number; stddev?: number }
  | { kind: "probability"; value: number }
  | { kind: "boolean"; value: boolean }
  | { kind: "categorical"; probs: Record<string, number> }
  | { kind: "survival_curve"; points: [number, number][] }
  | { kind: "time_to_event_density"; masses: [number, number][] };

export interface ProblemDocument {
  code: string;
  message: string;
  detail?: unknown;
}

export interface FusionEntry {
  mode: string;
  weights?: Record<string, number>;
  weighting_rule?: string;
  conflict_policy?: string;
  horizon_days?: number;
}

export interface AttributeEntry {
  id: string;
  value_kind: string;
  unit: string;
  display_name?: string;
  range?: [number, number] | string[];
  fusion: FusionEntry;
}

export interface ModelEntry {
  id: string;
  kind: string;
  inputs: { attr: string; required: boolean }[];
  outputs: string[];
  phase: string;
  provenance_note?: string;
}

export interface RegistryRoster {
  attributes: AttributeEntry[];
  models: ModelEntry[];
  version: number;
}

export interface GraphNode {
  id: string;
  kind: "attribute" | "model";
  status?: string;
  value?: TaggedValue | null;
  enabled?: boolean;
  model_kind?: string;
  phase?: string;
  expected_external?: boolean;
}

export interface GraphSnapshot {
  patient: string;
  registry_version: number;
  nodes: GraphNode[];
  edges: { from: string; to: string }[];
  cycles: string[];
}

export interface HistoryEntry {
  event_seq: number;
  t: string;
  consensus: TaggedValue | null;
  status: string;
  provenance: string[];
}

export interface AttributeStatePayload {
  consensus: TaggedValue | null;
  status: string;
  provenance: string[];
  proposals: Record<string, { value: TaggedValue; provenance: string[] }>;
  history: HistoryEntry[];
}

export interface ImpactPayload {
  pinned?: boolean;
  note?: string;
  entries: Record<string, { delta: number | null; sole_source: boolean }>;
}

export interface AttributeReport {
  attribute: string;
  state: AttributeStatePayload;
  impact: ImpactPayload;
  provenance: string[];
}

export interface ConflictEntry {
  attribute: string;
  detail: string;
  involved: string[];
  policy: string;
}

export interface RunReportPayload {
  event_seq: number;
  ephemeral: boolean;
  fired_models: { model: string; outputs: Record<string, TaggedValue> }[];
  conflicts: ConflictEntry[];
  loop_cuts: { fusion: string; source: string }[];
  changed_attributes: string[];
  fusion_outcomes: Record<string, { status: string; value: TaggedValue | null }>;
}

export interface WhatIfResponse {
  snapshot: {
    attributes: Record<string, AttributeStatePayload>;
  };
  report: RunReportPayload;
  query_result: {
    attribute: string;
    horizon_days: number;
    probability: number | null;
  } | null;
}

export interface OverrideRow {
  attribute: string;
  value: TaggedValue;
}
