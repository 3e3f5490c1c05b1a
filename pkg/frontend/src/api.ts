// Thin typed client over the twin service HTTP API.
// Configuration is just a base URL plus an optional static bearer token.

import type {
  AttributeReport,
  GraphSnapshot,
  OverrideRow,
  ProblemDocument,
  RegistryRoster,
  RunReportPayload,
  TaggedValue,
  WhatIfResponse,
} from "./types.js";

export class ApiError extends Error {
  problem: ProblemDocument;
  status: number;

  constructor(status: number, problem: ProblemDocument) {
    super(problem.message);
    this.status = status;
    this.problem = problem;
  }
}

export class TwinClient {
  baseUrl: string;
  token?: string;

  constructor(baseUrl: string, token?: string) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.token = token;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const response = await fetch(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await response.json();
    if (!response.ok) {
      const problem = (payload && payload.code)
        ? payload as ProblemDocument
        : { code: `http_${response.status}`, message: JSON.stringify(payload) };
      throw new ApiError(response.status, problem);
    }
    return payload as T;
  }

  getRegistry(): Promise<RegistryRoster> {
    return this.request("GET", "/registry");
  }

  getNeighborhood(attr: string): Promise<{ attribute: string; informing: string[]; informed: string[] }> {
    return this.request("GET", `/registry/neighborhoods/${encodeURIComponent(attr)}`);
  }

  createPatient(id: string): Promise<GraphSnapshot> {
    return this.request("POST", "/patients", { id });
  }

  getGraph(patient: string): Promise<GraphSnapshot> {
    return this.request("GET", `/patients/${encodeURIComponent(patient)}/graph`);
  }

  observe(patient: string, attribute: string, value: TaggedValue,
          timestamp: string, source = "dashboard"): Promise<RunReportPayload> {
    return this.request("POST", `/patients/${encodeURIComponent(patient)}/observations`,
      { attribute, value, timestamp, source });
  }

  whatIf(patient: string, overrides: OverrideRow[],
         query?: { attribute: string; horizon_days: number }): Promise<WhatIfResponse> {
    return this.request("POST", `/patients/${encodeURIComponent(patient)}/whatif`,
      { overrides, query: query ?? null });
  }

  getAttribute(patient: string, attr: string): Promise<AttributeReport> {
    return this.request("GET",
      `/patients/${encodeURIComponent(patient)}/attributes/${encodeURIComponent(attr)}`);
  }

  setModelEnabled(patient: string, model: string, enabled: boolean): Promise<{ model: string; enabled: boolean }> {
    return this.request("POST",
      `/patients/${encodeURIComponent(patient)}/models/${encodeURIComponent(model)}/enabled`,
      { enabled });
  }
}

// Stable fingerprint of a snapshot, used to confirm that what-if runs never
// touch server state (canonicalized by sorted keys).
export function snapshotHash(snapshot: unknown): string {
  const canonical = JSON.stringify(sortKeys(snapshot));
  let hash = 2166136261;
  for (let i = 0; i < canonical.length; i++) {
    hash ^= canonical.charCodeAt(i);
    hash = Math.imul(hash, 16777619);
  }
  return (hash >>> 0).toString(16);
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) return value.map(sortKeys);
  if (value && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value as Record<string, unknown>).sort()) {
      out[key] = sortKeys((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}
